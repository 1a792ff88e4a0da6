#pragma once

#include "error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace fidlar {

/// Row-major dense matrix used for every [rows x variables] block.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace ts {

enum class Role { water_level, tide, rain, gate, pump };
enum class Unit { ft, in_per_hr, fraction };

inline bool is_control(Role r) { return r == Role::gate || r == Role::pump; }
inline bool is_covariate(Role r) { return r == Role::rain || r == Role::tide; }

inline std::string_view to_string(Role r) {
    switch (r) {
    case Role::water_level: return "water_level";
    case Role::tide: return "tide";
    case Role::rain: return "rain";
    case Role::gate: return "gate";
    case Role::pump: return "pump";
    }
    return "?";
}

inline std::string_view to_string(Unit u) {
    switch (u) {
    case Unit::ft: return "ft";
    case Unit::in_per_hr: return "in_per_hr";
    case Unit::fraction: return "fraction";
    }
    return "?";
}

inline Role parse_role(std::string_view s) {
    if (s == "water_level") return Role::water_level;
    if (s == "tide") return Role::tide;
    if (s == "rain") return Role::rain;
    if (s == "gate") return Role::gate;
    if (s == "pump") return Role::pump;
    throw IngestionError("unknown variable role '" + std::string(s) + "'");
}

inline Unit parse_unit(std::string_view s) {
    if (s == "ft") return Unit::ft;
    if (s == "in_per_hr") return Unit::in_per_hr;
    if (s == "fraction") return Unit::fraction;
    throw IngestionError("unknown unit '" + std::string(s) + "'");
}

struct VariableSpec {
    std::string name;
    Role role = Role::water_level;
    std::string station;
    Unit unit = Unit::ft;

    friend bool operator==(const VariableSpec&, const VariableSpec&) = default;
};

using TimePoint = std::chrono::sys_seconds;

/// "YYYY-MM-DDTHH:MM" on the hourly grid.
inline std::string format_time(TimePoint t) {
    const auto day = std::chrono::floor<std::chrono::days>(t);
    const std::chrono::year_month_day ymd{day};
    const auto hh = std::chrono::duration_cast<std::chrono::hours>(t - day).count();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long long>(hh));
    return buf;
}

inline TimePoint parse_time(std::string_view s) {
    int y = 0;
    unsigned mo = 0, d = 0, h = 0, mi = 0;
    const std::string str(s);
    if (std::sscanf(str.c_str(), "%d-%u-%uT%u:%u", &y, &mo, &d, &h, &mi) != 5)
        throw IngestionError("bad timestamp '" + str + "'");
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                          std::chrono::day{d}};
    if (!ymd.ok() || h > 23 || mi > 59) throw IngestionError("bad timestamp '" + str + "'");
    return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi};
}

inline TimePoint default_start() {
    return std::chrono::sys_days{std::chrono::year{2020} / 1 / 1};
}

/**
 * Hourly multivariate series with one column per VariableSpec.
 *
 * Validated on construction: finite values, gate/pump columns within [0, 1]
 * and exactly one tide column. Immutable afterwards.
 */
class SeriesFrame {
public:
    SeriesFrame() = default;

    SeriesFrame(std::vector<VariableSpec> specs, TimePoint start, Mat values)
        : specs_(std::move(specs)), start_(start), values_(std::move(values)) {
        validate();
    }

    const std::vector<VariableSpec>& specs() const { return specs_; }
    TimePoint start_time() const { return start_; }
    TimePoint time_at(std::size_t row) const { return start_ + std::chrono::hours{row}; }
    const Mat& values() const { return values_; }
    std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
    std::size_t cols() const { return specs_.size(); }
    double operator()(std::size_t row, std::size_t col) const { return values_(row, col); }

    /// Column indices, in frame order, whose role satisfies `pred`.
    template <class Pred>
    std::vector<std::size_t> columns_where(Pred pred) const {
        std::vector<std::size_t> out;
        for (std::size_t j = 0; j < specs_.size(); ++j)
            if (pred(specs_[j].role)) out.push_back(j);
        return out;
    }
    std::vector<std::size_t> level_columns() const {
        return columns_where([](Role r) { return r == Role::water_level; });
    }
    std::vector<std::size_t> covariate_columns() const { return columns_where(is_covariate); }
    std::vector<std::size_t> control_columns() const { return columns_where(is_control); }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t j = 0; j < specs_.size(); ++j)
            if (specs_[j].name == name) return j;
        throw ConfigurationError("no variable named '" + std::string(name) + "'");
    }

    /// Rows [begin, end) as a new frame.
    SeriesFrame slice_rows(std::size_t begin, std::size_t end) const {
        if (begin > end || end > rows()) throw SizingError("row slice out of range");
        return SeriesFrame(specs_, time_at(begin),
                           values_.middleRows(static_cast<Eigen::Index>(begin),
                                              static_cast<Eigen::Index>(end - begin)));
    }

private:
    void validate() const {
        if (static_cast<std::size_t>(values_.cols()) != specs_.size())
            throw IngestionError("frame has " + std::to_string(values_.cols()) + " columns but " +
                                 std::to_string(specs_.size()) + " variable specs");
        int tides = 0;
        for (std::size_t j = 0; j < specs_.size(); ++j) {
            const auto& s = specs_[j];
            if (s.role == Role::tide) ++tides;
            if (is_control(s.role) && s.unit != Unit::fraction)
                throw IngestionError("control variable '" + s.name + "' must have unit fraction");
            for (Eigen::Index i = 0; i < values_.rows(); ++i) {
                const double v = values_(i, static_cast<Eigen::Index>(j));
                if (!std::isfinite(v))
                    throw IngestionError("non-finite value at row " + std::to_string(i) +
                                         ", column '" + s.name + "'");
                if (is_control(s.role) && (v < 0.0 || v > 1.0))
                    throw IngestionError("control value " + std::to_string(v) + " outside [0,1] at row " +
                                         std::to_string(i) + ", column '" + s.name + "'");
            }
        }
        if (!specs_.empty() && tides != 1)
            throw IngestionError("frame must have exactly one tide variable, found " + std::to_string(tides));
    }

    std::vector<VariableSpec> specs_;
    TimePoint start_ = default_start();
    Mat values_;
};

// ---------------------------------------------------------------------------
// Windowing

struct WindowConfig {
    std::size_t w = 72;
    std::size_t k = 24;
    std::size_t stride = 1;

    void validate() const {
        if (w < 1 || k < 1 || stride < 1)
            throw ConfigurationError("window lengths and stride must be >= 1");
    }
};

/// One model instance: w past rows of everything plus the k future rows of
/// covariates, controls and (as targets) water levels.
struct WindowSample {
    Mat past;            ///< [w x V]
    Mat future_cov;      ///< [k x C], rain and tide only
    Mat future_controls; ///< [k x S], gates and pumps
    Mat future_water;    ///< [k x N], targets
    std::size_t start_row = 0;
};

inline std::size_t window_count(std::size_t rows, const WindowConfig& cfg) {
    if (rows < cfg.w + cfg.k) return 0;
    return (rows - cfg.w - cfg.k) / cfg.stride + 1;
}

inline Mat gather_columns(const Mat& m, std::size_t row0, std::size_t nrows,
                          const std::vector<std::size_t>& cols) {
    Mat out(static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < nrows; ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                m(static_cast<Eigen::Index>(row0 + i), static_cast<Eigen::Index>(cols[j]));
    return out;
}

/// The sample whose past block starts at `row`.
inline WindowSample window_at(const SeriesFrame& frame, std::size_t row, const WindowConfig& cfg) {
    if (row + cfg.w + cfg.k > frame.rows())
        throw SizingError("window at row " + std::to_string(row) + " needs " +
                          std::to_string(row + cfg.w + cfg.k) + " rows, frame has " +
                          std::to_string(frame.rows()));
    const Mat& v = frame.values();
    WindowSample s;
    s.start_row = row;
    s.past = v.middleRows(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(cfg.w));
    const std::size_t f0 = row + cfg.w;
    s.future_cov = gather_columns(v, f0, cfg.k, frame.covariate_columns());
    s.future_controls = gather_columns(v, f0, cfg.k, frame.control_columns());
    s.future_water = gather_columns(v, f0, cfg.k, frame.level_columns());
    return s;
}

inline std::vector<WindowSample> make_windows(const SeriesFrame& frame, const WindowConfig& cfg) {
    cfg.validate();
    if (frame.rows() < cfg.w + cfg.k)
        throw SizingError("frame has " + std::to_string(frame.rows()) + " rows; windowing needs at least " +
                          std::to_string(cfg.w + cfg.k) + " (w + k)");
    const std::size_t n = window_count(frame.rows(), cfg);
    std::vector<WindowSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(window_at(frame, i * cfg.stride, cfg));
    return out;
}

/// Windows from several independent frames (episodes); windows never straddle frames.
inline std::vector<WindowSample> make_windows(const std::vector<SeriesFrame>& frames, const WindowConfig& cfg) {
    std::vector<WindowSample> out;
    for (const auto& f : frames) {
        if (f.rows() < cfg.w + cfg.k) continue;
        auto part = make_windows(f, cfg);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-variable affine map x' = (x - mean) / scale.
struct NormParams {
    std::vector<double> mean;
    std::vector<double> scale;

    std::size_t size() const { return mean.size(); }
};

/// z-score statistics over one or more frames. Controls stay in [0,1];
/// zero-variance columns keep mean 0 and scale 1.
inline NormParams fit_normalization(const std::vector<SeriesFrame>& frames) {
    if (frames.empty() || frames.front().rows() == 0) throw SizingError("normalization needs a nonempty frame");
    const auto& specs = frames.front().specs();
    const std::size_t V = specs.size();
    NormParams p{std::vector<double>(V, 0.0), std::vector<double>(V, 1.0)};
    for (std::size_t j = 0; j < V; ++j) {
        if (is_control(specs[j].role)) continue;
        double n = 0.0, sum = 0.0;
        for (const auto& f : frames) {
            sum += f.values().col(static_cast<Eigen::Index>(j)).sum();
            n += static_cast<double>(f.rows());
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& f : frames)
            ss += (f.values().col(static_cast<Eigen::Index>(j)).array() - mean).square().sum();
        const double sd = std::sqrt(ss / n);
        if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
            p.mean[j] = mean;
            p.scale[j] = sd;
        }
    }
    return p;
}

inline NormParams fit_normalization(const SeriesFrame& frame) {
    return fit_normalization(std::vector<SeriesFrame>{frame});
}

inline SeriesFrame apply_normalization(const SeriesFrame& frame, const NormParams& p) {
    if (p.size() != frame.cols()) throw StructuralError("normalization params do not match frame width");
    Mat v = frame.values();
    for (Eigen::Index j = 0; j < v.cols(); ++j)
        v.col(j) = (v.col(j).array() - p.mean[static_cast<std::size_t>(j)]) / p.scale[static_cast<std::size_t>(j)];
    return SeriesFrame(frame.specs(), frame.start_time(), std::move(v));
}

inline SeriesFrame invert_normalization(const SeriesFrame& frame, const NormParams& p) {
    if (p.size() != frame.cols()) throw StructuralError("normalization params do not match frame width");
    Mat v = frame.values();
    for (Eigen::Index j = 0; j < v.cols(); ++j)
        v.col(j) = v.col(j).array() * p.scale[static_cast<std::size_t>(j)] + p.mean[static_cast<std::size_t>(j)];
    return SeriesFrame(frame.specs(), frame.start_time(), std::move(v));
}

/// Fit on `frame` and transform it in one go.
inline std::pair<SeriesFrame, NormParams> normalize(const SeriesFrame& frame) {
    auto p = fit_normalization(frame);
    return {apply_normalization(frame, p), p};
}

inline SeriesFrame denormalize(const SeriesFrame& frame, const NormParams& p) {
    return invert_normalization(frame, p);
}

// ---------------------------------------------------------------------------
// CSV: header "time,name:role:station:unit,..."; one row per hour.

inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& os, const SeriesFrame& frame) {
    os << "time";
    for (const auto& s : frame.specs())
        os << ',' << s.name << ':' << to_string(s.role) << ':' << s.station << ':' << to_string(s.unit);
    os << '\n';
    for (std::size_t i = 0; i < frame.rows(); ++i) {
        os << format_time(frame.time_at(i));
        for (std::size_t j = 0; j < frame.cols(); ++j) os << ',' << format_double(frame(i, j));
        os << '\n';
    }
}

inline void write_csv(const std::string& path, const SeriesFrame& frame) {
    std::ofstream os(path);
    if (!os) throw IngestionError("cannot open '" + path + "' for writing");
    write_csv(os, frame);
}

namespace detail {
inline std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    for (;;) {
        const auto next = line.find(sep, pos);
        out.push_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
        if (next == std::string_view::npos) break;
        pos = next + 1;
    }
    return out;
}
} // namespace detail

inline SeriesFrame read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw IngestionError("empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split(line, ',');
    if (header.size() < 2 || header[0] != "time") throw IngestionError("CSV header must start with 'time'");
    std::vector<VariableSpec> specs;
    for (std::size_t j = 1; j < header.size(); ++j) {
        const auto parts = detail::split(header[j], ':');
        if (parts.size() != 4)
            throw IngestionError("header column " + std::to_string(j) + " must be name:role:station:unit");
        specs.push_back({std::string(parts[0]), parse_role(parts[1]), std::string(parts[2]), parse_unit(parts[3])});
    }
    std::vector<double> data;
    std::vector<TimePoint> times;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split(line, ',');
        const auto where = [&](std::size_t col) {
            return "row " + std::to_string(row + 1) + ", column " + std::to_string(col);
        };
        if (cells.size() != header.size())
            throw IngestionError(where(0) + ": expected " + std::to_string(header.size()) + " cells, got " +
                                 std::to_string(cells.size()));
        const TimePoint t = parse_time(cells[0]);
        if (!times.empty() && t != times.back() + std::chrono::hours{1})
            throw IngestionError(where(0) + ": timestamps must advance by exactly one hour");
        times.push_back(t);
        for (std::size_t j = 1; j < cells.size(); ++j) {
            const auto c = cells[j];
            double v = 0.0;
            const auto res = std::from_chars(c.data(), c.data() + c.size(), v);
            if (c.empty() || res.ec != std::errc{} || res.ptr != c.data() + c.size() || !std::isfinite(v))
                throw IngestionError(where(j) + ": missing or non-numeric value '" + std::string(c) + "'");
            const auto& s = specs[j - 1];
            if (is_control(s.role) && (v < 0.0 || v > 1.0))
                throw IngestionError(where(j) + ": " + std::string(to_string(s.role)) + " value " +
                                     std::string(c) + " outside [0,1]");
            data.push_back(v);
        }
        ++row;
    }
    Mat values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(specs.size()));
    std::copy(data.begin(), data.end(), values.data());
    return SeriesFrame(std::move(specs), times.empty() ? default_start() : times.front(), std::move(values));
}

inline SeriesFrame read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IngestionError("cannot open '" + path + "'");
    return read_csv(is);
}

// ---------------------------------------------------------------------------
// Binary cache. Layout (little-endian):
//   "FDLRFRM\0" | u32 version=1 | i64 start (unix seconds) | u64 rows | u64 cols
//   per column: u32 len, name, u32 len, station, u8 role, u8 unit
//   rows*cols doubles, row-major

inline constexpr char frame_magic[8] = {'F', 'D', 'L', 'R', 'F', 'R', 'M', '\0'};
inline constexpr std::uint32_t frame_version = 1;

namespace detail {
template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IngestionError("truncated binary stream");
    return v;
}
inline void put_string(std::ostream& os, const std::string& s) {
    put(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
    const auto n = get<std::uint32_t>(is);
    if (n > (1u << 20)) throw IngestionError("implausible string length in binary stream");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw IngestionError("truncated binary stream");
    return s;
}
} // namespace detail

inline void write_binary(std::ostream& os, const SeriesFrame& frame) {
    os.write(frame_magic, sizeof frame_magic);
    detail::put(os, frame_version);
    detail::put(os, static_cast<std::int64_t>(frame.start_time().time_since_epoch().count()));
    detail::put(os, static_cast<std::uint64_t>(frame.rows()));
    detail::put(os, static_cast<std::uint64_t>(frame.cols()));
    for (const auto& s : frame.specs()) {
        detail::put_string(os, s.name);
        detail::put_string(os, s.station);
        detail::put(os, static_cast<std::uint8_t>(s.role));
        detail::put(os, static_cast<std::uint8_t>(s.unit));
    }
    os.write(reinterpret_cast<const char*>(frame.values().data()),
             static_cast<std::streamsize>(sizeof(double) * frame.rows() * frame.cols()));
}

inline SeriesFrame read_binary(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, frame_magic, 8) != 0)
        throw IngestionError("not a frame cache (bad magic)");
    const auto version = detail::get<std::uint32_t>(is);
    if (version != frame_version) throw IngestionError("unsupported frame cache version " + std::to_string(version));
    const auto start = detail::get<std::int64_t>(is);
    const auto rows = detail::get<std::uint64_t>(is);
    const auto cols = detail::get<std::uint64_t>(is);
    std::vector<VariableSpec> specs;
    for (std::uint64_t j = 0; j < cols; ++j) {
        VariableSpec s;
        s.name = detail::get_string(is);
        s.station = detail::get_string(is);
        s.role = static_cast<Role>(detail::get<std::uint8_t>(is));
        s.unit = static_cast<Unit>(detail::get<std::uint8_t>(is));
        specs.push_back(std::move(s));
    }
    Mat values(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols)))
        throw IngestionError("truncated frame cache");
    return SeriesFrame(std::move(specs), TimePoint{std::chrono::seconds{start}}, std::move(values));
}

} // namespace ts
} // namespace fidlar
