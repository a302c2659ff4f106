#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "bvod/error.hpp"

namespace bvod {

/// Reads one number per line. Malformed rows are skipped and described in
/// `warnings`; blank lines and '#' comments are ignored silently.
inline std::vector<double> read_value_file(const std::string& path,
                                           std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open value file '" + path + "'");
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::size_t a = line.find_first_not_of(" \t\r");
        if (a == std::string::npos) continue;
        std::size_t b = line.find_last_not_of(" \t\r");
        const std::string token = line.substr(a, b - a + 1);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
        if (ec != std::errc() || ptr != token.data() + token.size() || !std::isfinite(v)) {
            if (warnings)
                warnings->push_back(path + ":" + std::to_string(line_no) +
                                    ": skipping malformed row '" + token + "'");
            continue;
        }
        values.push_back(v);
    }
    return values;
}

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<std::size_t> train;       // one count per bin
    std::vector<std::size_t> validation;  // same length
    double tau = 0.0;

    std::size_t bins() const { return train.size(); }
    double bin_lo(std::size_t i) const {
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins());
    }
    double bin_hi(std::size_t i) const {
        return lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(bins());
    }
};

namespace detail {

/// Uniform binning over [lo, hi]; the final edge is inclusive so the maximum
/// lands in the last bin. Out-of-range values clamp to the end bins.
inline std::vector<std::size_t> bin_values(const std::vector<double>& values, double lo,
                                           double hi, std::size_t n_bins) {
    std::vector<std::size_t> counts(n_bins, 0);
    const double width = hi - lo;
    for (double v : values) {
        std::size_t idx;
        if (v <= lo) {
            idx = 0;
        } else if (v >= hi) {
            idx = n_bins - 1;
        } else {
            idx = static_cast<std::size_t>((v - lo) / width * static_cast<double>(n_bins));
            if (idx >= n_bins) idx = n_bins - 1;
        }
        ++counts[idx];
    }
    return counts;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

}  // namespace detail

/// Bins both series over their joint range. A degenerate range (all values
/// equal) is widened by half a unit each way so the bins stay usable.
inline Histogram bin_histogram(const std::vector<double>& train,
                               const std::vector<double>& validation, double tau,
                               std::size_t n_bins = 30) {
    if (n_bins == 0) throw Error("bin_histogram: need at least one bin");
    if (train.empty() && validation.empty()) throw Error("bin_histogram: no values");
    Histogram h;
    h.tau = tau;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const std::vector<double>* series : {&train, &validation}) {
        for (double v : *series) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    h.lo = lo;
    h.hi = hi;
    h.train = detail::bin_values(train, lo, hi, n_bins);
    h.validation = detail::bin_values(validation, lo, hi, n_bins);
    return h;
}

/// Binned counts as delimited text: bin_lo,bin_hi,train,validation.
inline void write_histogram_csv(const std::string& path, const Histogram& h) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << "bin_lo,bin_hi,train,validation\n";
    for (std::size_t i = 0; i < h.bins(); ++i)
        out << detail::fmt(h.bin_lo(i)) << ',' << detail::fmt(h.bin_hi(i)) << ','
            << h.train[i] << ',' << h.validation[i] << '\n';
    if (!out) throw Error("write to '" + path + "' failed");
}

/// Renders the two histograms as overlaid bars with a dashed threshold
/// marker. The output is a single self-contained SVG document.
inline void write_histogram_svg(const std::string& path, const Histogram& h) {
    const double width = 640.0, height = 400.0;
    const double ml = 56.0, mr = 20.0, mt = 34.0, mb = 46.0;
    const double pw = width - ml - mr, ph = height - mt - mb;

    std::size_t max_count = 1;
    for (std::size_t i = 0; i < h.bins(); ++i)
        max_count = std::max({max_count, h.train[i], h.validation[i]});

    auto x_of = [&](double v) { return ml + (v - h.lo) / (h.hi - h.lo) * pw; };
    auto y_of = [&](double count) {
        return mt + ph - count / static_cast<double>(max_count) * ph;
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n"
        << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">Latent divergence: training vs "
           "validation</text>\n";

    struct Series {
        const std::vector<std::size_t>* counts;
        const char* color;
        const char* label;
    };
    const Series series[] = {{&h.train, "#1f77b4", "training"},
                             {&h.validation, "#ff7f0e", "validation"}};
    for (const Series& s : series) {
        for (std::size_t i = 0; i < h.bins(); ++i) {
            const std::size_t c = (*s.counts)[i];
            if (c == 0) continue;
            const double x0 = x_of(h.bin_lo(i));
            const double x1 = x_of(h.bin_hi(i));
            const double y = y_of(static_cast<double>(c));
            svg << "<rect x=\"" << detail::fmt(x0) << "\" y=\"" << detail::fmt(y)
                << "\" width=\"" << detail::fmt(x1 - x0) << "\" height=\""
                << detail::fmt(mt + ph - y) << "\" fill=\"" << s.color
                << "\" fill-opacity=\"0.55\"/>\n";
        }
    }

    // axes
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
        << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = h.lo + (h.hi - h.lo) * t / 4.0;
        const double x = x_of(v);
        svg << "<line x1=\"" << detail::fmt(x) << "\" y1=\"" << mt + ph << "\" x2=\""
            << detail::fmt(x) << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << detail::fmt(x) << "\" y=\"" << mt + ph + 20
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << detail::fmt(v) << "</text>\n";
        const double c = max_count * t / 4.0;
        const double y = y_of(c);
        svg << "<line x1=\"" << ml - 5 << "\" y1=\"" << detail::fmt(y) << "\" x2=\"" << ml
            << "\" y2=\"" << detail::fmt(y) << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << ml - 8 << "\" y=\"" << detail::fmt(y + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << detail::fmt(c) << "</text>\n";
    }
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
           "per-image divergence</text>\n"
        << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " << mt + ph / 2 << ")\">images</text>\n";

    // threshold marker (drawn when it falls inside the plotted range)
    if (h.tau >= h.lo && h.tau <= h.hi) {
        const double x = x_of(h.tau);
        svg << "<line x1=\"" << detail::fmt(x) << "\" y1=\"" << mt << "\" x2=\""
            << detail::fmt(x) << "\" y2=\"" << mt + ph
            << "\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 3\"/>\n"
            << "<text x=\"" << detail::fmt(x + 4) << "\" y=\"" << mt + 14
            << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#d62728\">tau = "
            << detail::fmt(h.tau) << "</text>\n";
    }

    // legend
    const double lx = ml + pw - 130, ly = mt + 8;
    for (std::size_t i = 0; i < 2; ++i) {
        svg << "<rect x=\"" << lx << "\" y=\"" << ly + 18.0 * i
            << "\" width=\"12\" height=\"12\" fill=\"" << series[i].color
            << "\" fill-opacity=\"0.55\"/>\n"
            << "<text x=\"" << lx + 18 << "\" y=\"" << ly + 18.0 * i + 10
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[i].label
            << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << svg.str();
    if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace bvod
