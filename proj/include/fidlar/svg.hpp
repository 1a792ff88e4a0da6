#pragma once

#include "timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace fidlar::svg {

struct Series {
    std::string name;
    std::vector<double> y;
};

struct HLine {
    std::string name;
    double y = 0.0;
};

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    return colors[i % (sizeof colors / sizeof colors[0])];
}

/// Line chart with dashed horizontal reference lines; x is the sample index plus `x0`.
inline std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::vector<HLine>& refs,
                              const std::string& xlabel, const std::string& ylabel, double x0 = 0.0) {
    const double W = 720, H = 360, ml = 60, mr = 150, mt = 30, mb = 45;
    double lo = INFINITY, hi = -INFINITY;
    std::size_t n = 0;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    for (const auto& r : refs) lo = std::min(lo, r.y), hi = std::max(hi, r.y);
    if (!std::isfinite(lo)) lo = 0, hi = 1;
    if (hi - lo < 1e-9) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const auto px = [&](double i) { return ml + (W - ml - mr) * (n > 1 ? i / static_cast<double>(n - 1) : 0.5); };
    const auto py = [&](double v) { return mt + (H - mt - mb) * (hi - v) / (hi - lo); };

    std::ostringstream o;
    o.precision(4);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << ml << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
    o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = lo + (hi - lo) * t / 4.0;
        o << "<text x=\"" << ml - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
        const double i = (n > 1 ? static_cast<double>(n - 1) : 0.0) * t / 4.0;
        o << "<text x=\"" << px(i) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\">" << x0 + i << "</text>\n";
    }
    o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">" << escape(xlabel) << "</text>\n";
    o << "<text x=\"14\" y=\"" << (mt + H - mb) / 2 << "\" transform=\"rotate(-90 14 " << (mt + H - mb) / 2
      << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
    std::size_t legend = 0;
    for (const auto& r : refs) {
        o << "<line x1=\"" << ml << "\" x2=\"" << W - mr << "\" y1=\"" << py(r.y) << "\" y2=\"" << py(r.y)
          << "\" stroke=\"#555\" stroke-dasharray=\"5,4\"/>\n";
        o << "<text x=\"" << W - mr + 8 << "\" y=\"" << mt + 14 * (legend++ + 1) << "\" fill=\"#555\">- - " << escape(r.name)
          << "</text>\n";
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        o << "<polyline fill=\"none\" stroke=\"" << palette(s) << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].y.size(); ++i) o << px(static_cast<double>(i)) << ',' << py(series[s].y[i]) << ' ';
        o << "\"/>\n";
        o << "<text x=\"" << W - mr + 8 << "\" y=\"" << mt + 14 * (legend++ + 1) << "\" fill=\"" << palette(s) << "\">"
          << escape(series[s].name) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

/// Heatmap of a matrix on a diverging (signed) or sequential scale.
inline std::string heatmap(const std::string& title, const Mat& m, const std::vector<std::string>& row_labels,
                           const std::vector<std::string>& col_labels, bool diverging) {
    const double cell = std::clamp(640.0 / std::max<double>(1.0, static_cast<double>(m.cols())), 3.0, 40.0);
    const double ch = std::clamp(cell, 12.0, 40.0);
    const double ml = 90, mt = 34;
    const double W = ml + cell * static_cast<double>(m.cols()) + 20;
    const double H = mt + ch * static_cast<double>(m.rows()) + 60;
    const double scale = m.size() ? std::max(m.cwiseAbs().maxCoeff(), 1e-12) : 1.0;
    const auto color = [&](double v) {
        const double t = std::clamp(v / scale, -1.0, 1.0);
        int r = 255, g = 255, b = 255;
        if (diverging) {
            if (t >= 0) g = b = static_cast<int>(255 * (1 - t));
            else r = g = static_cast<int>(255 * (1 + t));
        } else {
            r = g = static_cast<int>(255 * (1 - std::abs(t)));
        }
        char buf[8];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
        return std::string(buf);
    };
    std::ostringstream o;
    o.precision(4);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << ml << "\" y=\"18\" font-size=\"13\">" << escape(title) << "</text>\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double y = mt + ch * static_cast<double>(r);
        if (static_cast<std::size_t>(r) < row_labels.size())
            o << "<text x=\"" << ml - 4 << "\" y=\"" << y + ch / 2 + 3 << "\" text-anchor=\"end\">" << escape(row_labels[static_cast<std::size_t>(r)])
              << "</text>\n";
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            o << "<rect x=\"" << ml + cell * static_cast<double>(c) << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << ch
              << "\" fill=\"" << color(m(r, c)) << "\"><title>" << m(r, c) << "</title></rect>\n";
    }
    const std::size_t every = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(24.0 / cell)));
    for (std::size_t c = 0; c < col_labels.size() && c < static_cast<std::size_t>(m.cols()); c += every) {
        const double x = ml + cell * (static_cast<double>(c) + 0.5), y = mt + ch * static_cast<double>(m.rows()) + 8;
        o << "<text x=\"" << x << "\" y=\"" << y << "\" transform=\"rotate(60 " << x << ' ' << y << ")\">" << escape(col_labels[c])
          << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

} // namespace fidlar::svg
