#pragma once

#include "../error.hpp"
#include "../rng.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace fidlar::hydro {

struct Harmonic {
    double amplitude = 0.0; ///< ft
    double period = 12.42;  ///< hours
    double phase = 0.0;     ///< radians
};

struct TideConfig {
    double mean = 1.6;
    Harmonic semidiurnal{0.9, 12.42, 0.0};
    Harmonic diurnal{0.25, 24.84, 0.0};
    double noise_sigma = 0.03;
    bool random_offset = true; ///< start each episode at a random point of the tidal cycle
};

struct RainConfig {
    double arrival_rate = 0.03;    ///< storm starts per dry hour
    double mean_duration = 6.0;    ///< hours, geometric
    double intensity_shape = 8.0;  ///< gamma shape of the storm-mean intensity
    double intensity_scale = 0.085; ///< gamma scale, in/hr
    double runoff_coefficient = 0.45;
    double runoff_lag = 6.0; ///< hours, linear-reservoir constant
};

struct ForcingConfig {
    TideConfig tide;
    RainConfig rain;

    void validate() const {
        if (tide.semidiurnal.amplitude < 0.0 || tide.diurnal.amplitude < 0.0)
            throw ConfigurationError("tide amplitudes must be >= 0");
        if (!(tide.semidiurnal.period > 0.0) || !(tide.diurnal.period > 0.0))
            throw ConfigurationError("tide periods must be > 0");
        if (tide.noise_sigma < 0.0) throw ConfigurationError("tide noise sigma must be >= 0");
        if (!(rain.arrival_rate > 0.0 && rain.arrival_rate < 1.0))
            throw ConfigurationError("storm arrival rate must lie in (0,1)");
        if (!(rain.mean_duration >= 1.0)) throw ConfigurationError("mean storm duration must be >= 1 h");
        if (!(rain.intensity_shape > 0.0) || !(rain.intensity_scale > 0.0))
            throw ConfigurationError("gamma intensity parameters must be > 0");
        if (rain.runoff_coefficient < 0.0 || rain.runoff_coefficient > 1.0)
            throw ConfigurationError("runoff coefficient must lie in [0,1]");
        if (!(rain.runoff_lag >= 1.0)) throw ConfigurationError("runoff lag must be >= 1 h");
    }
};

/// Hourly covariate series: tide at the boundary (ft) and areal rain (in/hr).
struct Forcing {
    std::vector<double> tide;
    std::vector<double> rain;

    std::size_t hours() const { return tide.size(); }
};

inline std::vector<double> generate_tide(const TideConfig& cfg, std::size_t hours, Rng& rng) {
    const double offset = cfg.random_offset ? uniform(rng, 0.0, 24.0 * 29.53) : 0.0;
    const auto wave = [](const Harmonic& h, double t) {
        return h.amplitude * std::sin(2.0 * std::numbers::pi * t / h.period + h.phase);
    };
    std::vector<double> out(hours);
    for (std::size_t i = 0; i < hours; ++i) {
        const double t = offset + static_cast<double>(i);
        out[i] = cfg.mean + wave(cfg.semidiurnal, t) + wave(cfg.diurnal, t) + cfg.noise_sigma * normal01(rng);
    }
    return out;
}

/// Alternating dry spells and storms; within a storm the hourly intensity
/// fluctuates around a gamma-distributed storm mean.
inline std::vector<double> generate_rain(const RainConfig& cfg, std::size_t hours, Rng& rng) {
    std::vector<double> out(hours, 0.0);
    const double end_prob = 1.0 / cfg.mean_duration;
    std::size_t i = 0;
    while (i < hours) {
        if (uniform01(rng) >= cfg.arrival_rate) {
            ++i;
            continue;
        }
        const double storm_mean = gamma(rng, cfg.intensity_shape, cfg.intensity_scale);
        do {
            out[i] = storm_mean * uniform(rng, 0.5, 1.5);
            ++i;
        } while (i < hours && uniform01(rng) >= end_prob);
    }
    return out;
}

inline Forcing generate_forcing(const ForcingConfig& cfg, std::size_t hours, std::uint64_t seed) {
    cfg.validate();
    Rng tide_rng(derive_seed(seed, 0));
    Rng rain_rng(derive_seed(seed, 1));
    return Forcing{generate_tide(cfg.tide, hours, tide_rng), generate_rain(cfg.rain, hours, rain_rng)};
}

} // namespace fidlar::hydro
