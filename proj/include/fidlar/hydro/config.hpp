#pragma once

// JSON form of the simulator configuration. Every key is optional; missing
// keys keep the defaults and unknown keys are rejected so typos surface.
//
// {
//   "topology": {
//     "cells": [{"id": "S1", "area": 3.6e6, "catchment_area": 3.25e7, "initial_level": 2.5}, ...],
//     "reaches": [{"from": "S26", "to": "S4", "conveyance": 2400}, ...],
//     "structures": [{"id": "GATE_S1", "type": "gate", "upstream": "S1", "downstream": "S26",
//                     "capacity": 180}, ...],
//     "boundary": "S4",
//     "control_points": ["S1", "S25A", "S25B", "S26"]
//   },
//   "forcing": {
//     "tide": {"mean": 1.6, "semidiurnal": {"amplitude": 0.9, "period": 12.42, "phase": 0},
//              "diurnal": {...}, "noise_sigma": 0.03, "random_offset": true},
//     "rain": {"arrival_rate": 0.03, "mean_duration": 6, "intensity_shape": 8,
//              "intensity_scale": 0.085, "runoff_coefficient": 0.45, "runoff_lag": 6}
//   },
//   "policy": [{"open": 3.3, "close": 2.9, "pump": 3.45}, ...],   // one per structure
//   "dataset": {"noise": 0.2, "trigger_jitter": 0.3, "excursion_rate": 0.0, "excursion_hours": 6,
//               "episode_hours": 792, "horizon": 24}
// }

#include "dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <string>

namespace fidlar::hydro {

using json = nlohmann::json;

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
    if (!j.is_object()) throw ConfigurationError(path + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigurationError(path + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& path) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigurationError(path + "." + key + ": wrong type");
    }
}

inline int cell_ref(const NetworkTopology& t, const json& v, const std::string& path) {
    if (v.is_number_integer()) return v.get<int>();
    if (v.is_string()) {
        try {
            return t.index_of(v.get<std::string>());
        } catch (const ConfigurationError& e) {
            throw ConfigurationError(path + ": " + e.what());
        }
    }
    throw ConfigurationError(path + ": expected a cell id");
}

inline void read_harmonic(const json& j, Harmonic& h, const std::string& path) {
    check_keys(j, {"amplitude", "period", "phase"}, path);
    read_opt(j, "amplitude", h.amplitude, path);
    read_opt(j, "period", h.period, path);
    read_opt(j, "phase", h.phase, path);
}

inline json harmonic_json(const Harmonic& h) {
    return {{"amplitude", h.amplitude}, {"period", h.period}, {"phase", h.phase}};
}

} // namespace detail

inline NetworkTopology topology_from_json(const json& j) {
    using detail::check_keys;
    const std::string path = "topology";
    check_keys(j, {"cells", "reaches", "structures", "boundary", "control_points"}, path);
    NetworkTopology t = default_topology();
    if (j.contains("cells")) {
        t.cells.clear();
        for (std::size_t i = 0; i < j["cells"].size(); ++i) {
            const auto& c = j["cells"][i];
            const std::string p = path + ".cells[" + std::to_string(i) + "]";
            check_keys(c, {"id", "area", "catchment_area", "initial_level"}, p);
            Cell cell;
            detail::read_opt(c, "id", cell.id, p);
            detail::read_opt(c, "area", cell.area, p);
            detail::read_opt(c, "catchment_area", cell.catchment_area, p);
            detail::read_opt(c, "initial_level", cell.initial_level, p);
            if (cell.id.empty()) throw ConfigurationError(p + ": missing id");
            t.cells.push_back(cell);
        }
        // a new cell list invalidates the default wiring unless it is restated
        t.reaches.clear();
        t.structures.clear();
        t.control_points.clear();
        t.boundary = -1;
    }
    if (j.contains("reaches")) {
        t.reaches.clear();
        for (std::size_t i = 0; i < j["reaches"].size(); ++i) {
            const auto& r = j["reaches"][i];
            const std::string p = path + ".reaches[" + std::to_string(i) + "]";
            check_keys(r, {"from", "to", "conveyance"}, p);
            Reach reach;
            reach.from = detail::cell_ref(t, r.at("from"), p + ".from");
            reach.to = detail::cell_ref(t, r.at("to"), p + ".to");
            detail::read_opt(r, "conveyance", reach.conveyance, p);
            t.reaches.push_back(reach);
        }
    }
    if (j.contains("structures")) {
        t.structures.clear();
        for (std::size_t i = 0; i < j["structures"].size(); ++i) {
            const auto& s = j["structures"][i];
            const std::string p = path + ".structures[" + std::to_string(i) + "]";
            check_keys(s, {"id", "type", "upstream", "downstream", "capacity"}, p);
            Structure st;
            detail::read_opt(s, "id", st.id, p);
            const std::string type = s.value("type", "gate");
            if (type == "gate")
                st.type = StructureType::gate;
            else if (type == "pump")
                st.type = StructureType::pump;
            else
                throw ConfigurationError(p + ".type: expected gate or pump");
            st.upstream = detail::cell_ref(t, s.at("upstream"), p + ".upstream");
            st.downstream = detail::cell_ref(t, s.at("downstream"), p + ".downstream");
            detail::read_opt(s, "capacity", st.capacity, p);
            t.structures.push_back(st);
        }
    }
    if (j.contains("boundary")) t.boundary = detail::cell_ref(t, j["boundary"], path + ".boundary");
    if (j.contains("control_points")) {
        t.control_points.clear();
        for (const auto& c : j["control_points"]) t.control_points.push_back(detail::cell_ref(t, c, path + ".control_points"));
    }
    t.validate();
    return t;
}

inline json topology_to_json(const NetworkTopology& t) {
    const auto id = [&](int c) { return t.cells[static_cast<std::size_t>(c)].id; };
    json cells = json::array(), reaches = json::array(), structures = json::array(), cps = json::array();
    for (const auto& c : t.cells)
        cells.push_back({{"id", c.id}, {"area", c.area}, {"catchment_area", c.catchment_area}, {"initial_level", c.initial_level}});
    for (const auto& r : t.reaches) reaches.push_back({{"from", id(r.from)}, {"to", id(r.to)}, {"conveyance", r.conveyance}});
    for (const auto& s : t.structures)
        structures.push_back({{"id", s.id},
                              {"type", s.type == StructureType::gate ? "gate" : "pump"},
                              {"upstream", id(s.upstream)},
                              {"downstream", id(s.downstream)},
                              {"capacity", s.capacity}});
    for (int c : t.control_points) cps.push_back(id(c));
    return {{"cells", cells}, {"reaches", reaches}, {"structures", structures}, {"boundary", id(t.boundary)}, {"control_points", cps}};
}

inline ForcingConfig forcing_from_json(const json& j) {
    using detail::check_keys;
    using detail::read_opt;
    ForcingConfig f;
    check_keys(j, {"tide", "rain"}, "forcing");
    if (j.contains("tide")) {
        const auto& t = j["tide"];
        const std::string p = "forcing.tide";
        check_keys(t, {"mean", "semidiurnal", "diurnal", "noise_sigma", "random_offset"}, p);
        read_opt(t, "mean", f.tide.mean, p);
        if (t.contains("semidiurnal")) detail::read_harmonic(t["semidiurnal"], f.tide.semidiurnal, p + ".semidiurnal");
        if (t.contains("diurnal")) detail::read_harmonic(t["diurnal"], f.tide.diurnal, p + ".diurnal");
        read_opt(t, "noise_sigma", f.tide.noise_sigma, p);
        read_opt(t, "random_offset", f.tide.random_offset, p);
    }
    if (j.contains("rain")) {
        const auto& r = j["rain"];
        const std::string p = "forcing.rain";
        check_keys(r, {"arrival_rate", "mean_duration", "intensity_shape", "intensity_scale", "runoff_coefficient", "runoff_lag"}, p);
        read_opt(r, "arrival_rate", f.rain.arrival_rate, p);
        read_opt(r, "mean_duration", f.rain.mean_duration, p);
        read_opt(r, "intensity_shape", f.rain.intensity_shape, p);
        read_opt(r, "intensity_scale", f.rain.intensity_scale, p);
        read_opt(r, "runoff_coefficient", f.rain.runoff_coefficient, p);
        read_opt(r, "runoff_lag", f.rain.runoff_lag, p);
    }
    f.validate();
    return f;
}

inline json forcing_to_json(const ForcingConfig& f) {
    return {{"tide",
             {{"mean", f.tide.mean},
              {"semidiurnal", detail::harmonic_json(f.tide.semidiurnal)},
              {"diurnal", detail::harmonic_json(f.tide.diurnal)},
              {"noise_sigma", f.tide.noise_sigma},
              {"random_offset", f.tide.random_offset}}},
            {"rain",
             {{"arrival_rate", f.rain.arrival_rate},
              {"mean_duration", f.rain.mean_duration},
              {"intensity_shape", f.rain.intensity_shape},
              {"intensity_scale", f.rain.intensity_scale},
              {"runoff_coefficient", f.rain.runoff_coefficient},
              {"runoff_lag", f.rain.runoff_lag}}}};
}

inline baselines::RulePolicy policy_from_json(const json& j, std::size_t n_structures) {
    if (j.is_object()) {
        // one trigger set for every structure
        detail::check_keys(j, {"open", "close", "pump"}, "policy");
        baselines::RuleTriggers t;
        detail::read_opt(j, "open", t.open, "policy");
        detail::read_opt(j, "close", t.close, "policy");
        detail::read_opt(j, "pump", t.pump, "policy");
        return baselines::RulePolicy::uniform(n_structures, t);
    }
    if (!j.is_array()) throw ConfigurationError("policy: expected an object or an array");
    baselines::RulePolicy p;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string path = "policy[" + std::to_string(i) + "]";
        detail::check_keys(j[i], {"open", "close", "pump"}, path);
        baselines::RuleTriggers t;
        detail::read_opt(j[i], "open", t.open, path);
        detail::read_opt(j[i], "close", t.close, path);
        detail::read_opt(j[i], "pump", t.pump, path);
        p.triggers.push_back(t);
    }
    return p;
}

inline json policy_to_json(const baselines::RulePolicy& p) {
    json out = json::array();
    for (const auto& t : p.triggers) out.push_back({{"open", t.open}, {"close", t.close}, {"pump", t.pump}});
    return out;
}

/// Reads the simulator sections of a config document (other top-level keys are left to their owners).
inline DatasetConfig dataset_config_from_json(const json& j) {
    DatasetConfig cfg;
    if (j.contains("topology")) cfg.topology = topology_from_json(j["topology"]);
    if (j.contains("forcing")) cfg.forcing = forcing_from_json(j["forcing"]);
    cfg.policy = j.contains("policy") ? policy_from_json(j["policy"], cfg.topology.structures.size())
                                      : baselines::RulePolicy::uniform(cfg.topology.structures.size());
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        detail::check_keys(d, {"noise", "trigger_jitter", "excursion_rate", "excursion_hours", "episode_hours", "horizon"}, "dataset");
        detail::read_opt(d, "noise", cfg.noise, "dataset");
        detail::read_opt(d, "trigger_jitter", cfg.trigger_jitter, "dataset");
        detail::read_opt(d, "excursion_rate", cfg.excursion_rate, "dataset");
        detail::read_opt(d, "excursion_hours", cfg.excursion_hours, "dataset");
        detail::read_opt(d, "episode_hours", cfg.episode_hours, "dataset");
        detail::read_opt(d, "horizon", cfg.horizon, "dataset");
    }
    cfg.validate();
    return cfg;
}

inline json dataset_config_to_json(const DatasetConfig& cfg) {
    return {{"topology", topology_to_json(cfg.topology)},
            {"forcing", forcing_to_json(cfg.forcing)},
            {"policy", policy_to_json(cfg.policy)},
            {"dataset",
             {{"noise", cfg.noise},
              {"trigger_jitter", cfg.trigger_jitter},
              {"excursion_rate", cfg.excursion_rate},
              {"excursion_hours", cfg.excursion_hours},
              {"episode_hours", cfg.episode_hours},
              {"horizon", cfg.horizon}}}};
}

inline json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigurationError("cannot open config file " + path);
    try {
        return json::parse(in, nullptr, true, true); // comments allowed
    } catch (const json::parse_error& e) {
        throw ConfigurationError(path + ": " + e.what());
    }
}

} // namespace fidlar::hydro
