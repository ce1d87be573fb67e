#pragma once

// Server-load traces: CSV ingest, per-unit scaling, uniform resampling.

#include "dcpower/errors.hpp"
#include "dcpower/timedomain.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcpower::workload {

class ParseError : public Error {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : Error("workload", source + (line ? ":" + std::to_string(line) : std::string()) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct LoadTrace {
    std::vector<double> t;  // s, strictly increasing
    std::vector<double> p;  // p.u. after scaling
    std::string source;

    double duration() const { return t.empty() ? 0.0 : t.back() - t.front(); }
    double mean() const { return p.empty() ? 0.0 : std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size()); }
};

/// Raw-to-p.u. mapping. Either p = offset + gain * raw, or a normalization that
/// hits target_mean (pure gain) and, when also given, target_peak (affine).
struct Scaling {
    double offset = 0.0;
    double gain = 1.0;
    std::optional<double> target_mean;
    std::optional<double> target_peak;

    static Scaling affine(double offset, double gain) { return {offset, gain, std::nullopt, std::nullopt}; }
    static Scaling to_mean(double mean, std::optional<double> peak = std::nullopt) { return {0.0, 1.0, mean, peak}; }
};

inline void apply_scaling(std::vector<double>& p, const Scaling& s, const std::string& source) {
    if (!s.target_mean) {
        for (double& v : p) v = s.offset + s.gain * v;
    } else {
        const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
        const double peak = *std::max_element(p.begin(), p.end());
        if (s.target_peak) {
            if (!(peak > mean)) throw ParseError(source, 0, "constant trace cannot be scaled to a peak");
            const double k = (*s.target_peak - *s.target_mean) / (peak - mean);
            for (double& v : p) v = *s.target_mean + k * (v - mean);
        } else {
            if (mean == 0.0) throw ParseError(source, 0, "zero-mean trace cannot be scaled to a mean");
            const double k = *s.target_mean / mean;
            for (double& v : p) v *= k;
        }
    }
    for (std::size_t k = 0; k < p.size(); ++k)
        if (!(p[k] >= 0.0)) throw ParseError(source, 0, "negative power after scaling at sample " + std::to_string(k));
}

/// Parses `t_seconds,p_load_pu` rows. `#` starts a comment; a non-numeric first
/// row is taken as the header.
inline LoadTrace parse_csv(std::istream& in, const Scaling& scaling = {}, const std::string& source = "<stream>") {
    LoadTrace tr;
    tr.source = source;
    std::string line;
    std::size_t lineno = 0;
    bool seen_row = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(source, lineno, "expected two comma-separated columns");
        const std::string a = line.substr(0, comma), b = line.substr(comma + 1);
        double t = 0.0, p = 0.0;
        try {
            std::size_t ia = 0, ib = 0;
            t = std::stod(a, &ia);
            p = std::stod(b, &ib);
            if (ia != a.size() || ib != b.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            if (!seen_row && tr.t.empty()) {
                seen_row = true;  // header
                continue;
            }
            throw ParseError(source, lineno, "non-numeric value");
        }
        seen_row = true;
        if (!std::isfinite(t) || !std::isfinite(p)) throw ParseError(source, lineno, "non-finite value");
        if (!tr.t.empty() && !(t > tr.t.back())) throw ParseError(source, lineno, "time is not strictly increasing");
        tr.t.push_back(t);
        tr.p.push_back(p);
    }
    if (tr.t.empty()) throw ParseError(source, 0, "no samples");
    apply_scaling(tr.p, scaling, source);
    return tr;
}

inline LoadTrace ingest_csv(const std::string& path, const Scaling& scaling = {}) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    return parse_csv(in, scaling, path);
}

/// Linear interpolation onto a uniform grid starting at the first timestamp; the
/// last sample is held when the duration is not a multiple of dt.
inline LoadTrace resample_trace(const LoadTrace& tr, double dt) {
    if (!(dt > 0.0)) throw ParameterError("dt", "must be positive");
    const auto sig = InputSignal::trace(tr.t, tr.p);
    const auto n = static_cast<std::size_t>(std::floor(tr.duration() / dt + 1e-9)) + 1;
    LoadTrace out;
    out.source = tr.source;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = tr.t.front() + static_cast<double>(k) * dt;
        out.t.push_back(t);
        out.p.push_back(sig(t));
    }
    return out;
}

/// Resampled trace as a disturbance signal with time shifted to start at zero.
inline InputSignal resample(const LoadTrace& tr, double dt) {
    auto r = resample_trace(tr, dt);
    const double t0 = r.t.front();
    for (double& t : r.t) t -= t0;
    if (r.t.size() == 1) return InputSignal::constant(r.p.front());
    return InputSignal::trace(std::move(r.t), std::move(r.p));
}

inline void write_csv(std::ostream& out, const LoadTrace& tr) {
    out << "t_seconds,p_load_pu\n" << std::setprecision(17);
    for (std::size_t k = 0; k < tr.t.size(); ++k) out << tr.t[k] << ',' << tr.p[k] << '\n';
}

/// Stand-in for a measured GPU-cluster trace: 100 ms samples of a training-like
/// load with 1-2 Hz iteration pulsation, slower phase changes and measurement
/// noise, scaled to `mean`. Deterministic for a given seed.
inline LoadTrace synthetic_gpu_trace(double duration = 100.0, double dt = 0.1, double mean = 0.5, unsigned seed = 7) {
    if (!(duration > 0.0) || !(dt > 0.0)) throw ParameterError("synthetic trace", "duration and dt must be positive");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    LoadTrace tr;
    tr.source = "synthetic";
    const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9)) + 1;
    const double two_pi = 2.0 * std::numbers::pi;
    const double phase[3] = {0.3, 1.7, 2.9};
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) * dt;
        const double ramp = std::min(1.0, t / 40.0);  // pulsation grows as the job ramps up
        double p = 1.0 + 0.15 * std::sin(two_pi * 0.05 * t);
        p += ramp * (0.25 * std::sin(two_pi * 1.3 * t + phase[0]) + 0.15 * std::sin(two_pi * 1.9 * t + phase[1]));
        p += 0.05 * std::sin(two_pi * 3.7 * t + phase[2]);
        p += 0.04 * unit(rng);
        tr.t.push_back(t);
        tr.p.push_back(p);
    }
    apply_scaling(tr.p, Scaling::to_mean(mean), tr.source);
    return tr;
}

}  // namespace dcpower::workload
