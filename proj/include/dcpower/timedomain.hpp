#pragma once

// Fixed-step trapezoidal integration of the composite DAE and FFT post-processing.

#include "dcpower/assembly.hpp"
#include "dcpower/differentiation.hpp"
#include "dcpower/equilibrium.hpp"
#include "dcpower/errors.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dcpower {

// ---------------------------------------------------------------- inputs

/// Disturbance waveform w(t) in p.u.
struct InputSignal {
    enum class Kind { constant, step, sine, trace };
    Kind kind = Kind::constant;
    double base = 0.0;        // constant value, step "from", sine offset
    double to = 0.0;          // step "to"
    double t0 = 0.0;          // step time
    double amplitude = 0.0;   // sine
    std::vector<double> switch_times;  // sine: segment k starts at switch_times[k]
    std::vector<double> freqs_hz;      // sine: frequency of segment k
    std::vector<double> times;         // trace
    std::vector<double> values;

    static InputSignal constant(double v) {
        InputSignal s;
        s.base = v;
        return s;
    }
    static InputSignal step(double t0, double from, double to) {
        InputSignal s;
        s.kind = Kind::step;
        s.t0 = t0;
        s.base = from;
        s.to = to;
        return s;
    }
    /// Offset `base` until switch_times[0]; then amplitude * sin(2 pi f_k (t - t_k)) on top.
    static InputSignal sine(double base, double amplitude, std::vector<double> switch_times, std::vector<double> freqs_hz) {
        InputSignal s;
        s.kind = Kind::sine;
        s.base = base;
        s.amplitude = amplitude;
        s.switch_times = std::move(switch_times);
        s.freqs_hz = std::move(freqs_hz);
        s.validate();
        return s;
    }
    static InputSignal trace(std::vector<double> times, std::vector<double> values) {
        InputSignal s;
        s.kind = Kind::trace;
        s.times = std::move(times);
        s.values = std::move(values);
        s.validate();
        return s;
    }

    void validate() const {
        auto increasing = [](const std::vector<double>& v) {
            return std::adjacent_find(v.begin(), v.end(), [](double a, double b) { return !(b > a); }) == v.end();
        };
        if (kind == Kind::sine) {
            if (switch_times.empty() || switch_times.size() != freqs_hz.size())
                throw ParameterError("input.sine", "one frequency per switch time required");
            if (!increasing(switch_times)) throw ParameterError("input.sine", "switch times must be strictly increasing");
        }
        if (kind == Kind::trace) {
            if (times.empty() || times.size() != values.size()) throw ParameterError("input.trace", "empty or ragged trace");
            if (!increasing(times)) throw ParameterError("input.trace", "timestamps must be strictly increasing");
        }
    }

    double operator()(double t) const {
        switch (kind) {
            case Kind::constant: return base;
            case Kind::step: return t < t0 ? base : to;
            case Kind::sine: {
                if (t < switch_times.front()) return base;
                const auto k = static_cast<std::size_t>(
                    std::upper_bound(switch_times.begin(), switch_times.end(), t) - switch_times.begin() - 1);
                return base + amplitude * std::sin(2.0 * std::numbers::pi * freqs_hz[k] * (t - switch_times[k]));
            }
            case Kind::trace: {
                if (t <= times.front()) return values.front();
                if (t >= times.back()) return values.back();
                const auto hi = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
                const double a = (t - times[hi - 1]) / (times[hi] - times[hi - 1]);
                return values[hi - 1] + a * (values[hi] - values[hi - 1]);
            }
        }
        return base;
    }
};

// ---------------------------------------------------------------- trace

struct IntegratorStats {
    long steps = 0;
    long newton_iterations = 0;
    long jacobian_updates = 0;
    long halvings = 0;
    double max_algebraic_residual = 0.0;
};

struct SimTrace {
    std::vector<double> t;
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
    IntegratorStats stats;
    Vector x_final;
    Vector y_final;

    const std::vector<double>& column(const std::string& name) const {
        const auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw ParameterError(name, "signal not recorded");
        return columns[static_cast<std::size_t>(it - names.begin())];
    }
    bool has(const std::string& name) const { return std::find(names.begin(), names.end(), name) != names.end(); }
};

struct SimOptions {
    double t_end = 1.0;
    double dt = 1e-3;
    int record_every = 1;
    // Extra signals beyond the output channels and "w": variable names or block
    // diagnostics ("vsi.p_vsi"); "*" records every state.
    std::vector<std::string> signals;
    double newton_tol = 1e-10;    // on the scaled Newton update
    double algebraic_tol = 1e-8;  // on |g| at every accepted step
    int max_newton = 12;
    int max_halvings = 6;
};

namespace detail {

/// Trapezoidal stepper with a chord (frozen-Jacobian) Newton iteration.
class TrapezoidStepper {
public:
    TrapezoidStepper(const SystemModel& m, const SimOptions& o) : m_(m), o_(o) {
        nx_ = static_cast<Eigen::Index>(m.n_x());
        ny_ = static_cast<Eigen::Index>(m.n_y());
    }

    /// Advances (x, y) from w_n at t to w_np1 at t + h. Returns false on failure.
    bool step(Vector& x, Vector& y, const Vector& f_n, double w_np1, double h, IntegratorStats& st) {
        Vector z(nx_ + ny_);
        z << x, y;
        if (!lu_ || h != h_lu_) refresh(z, w_np1, h, st);
        for (int attempt = 0; attempt < 2; ++attempt) {
            Vector zk = z;
            zk.head(nx_) += h * f_n;  // explicit predictor
            double prev = std::numeric_limits<double>::infinity();
            for (int it = 0; it < o_.max_newton; ++it) {
                Vector r;
                try {
                    r = residual(zk, x, f_n, w_np1, h);
                } catch (const DomainError&) {
                    break;
                }
                if (!r.allFinite()) break;
                const Vector dz = lu_->solve(r);
                zk -= dz;
                ++st.newton_iterations;
                const double size = (dz.array() / (1.0 + zk.array().abs())).abs().maxCoeff();
                if (size <= o_.newton_tol) {
                    Vector g(ny_), f(nx_);
                    try {
                        m_.eval(zk.head(nx_), zk.tail(ny_), w_np1, f, g);
                    } catch (const DomainError&) {
                        break;
                    }
                    const double gn = ny_ > 0 ? g.lpNorm<Eigen::Infinity>() : 0.0;
                    if (gn <= o_.algebraic_tol && f.allFinite()) {
                        x = zk.head(nx_);
                        y = zk.tail(ny_);
                        st.max_algebraic_residual = std::max(st.max_algebraic_residual, gn);
                        return true;
                    }
                }
                if (it > 1 && size > 0.5 * prev) break;  // slow contraction: refresh
                prev = size;
            }
            if (attempt == 0) refresh(z, w_np1, h, st);
        }
        return false;
    }

    void invalidate() { lu_.reset(); }

private:
    Vector residual(const Vector& zk, const Vector& x_n, const Vector& f_n, double w, double h) const {
        Vector f(nx_), g(ny_);
        m_.eval(zk.head(nx_), zk.tail(ny_), w, f, g);
        Vector r(nx_ + ny_);
        r.head(nx_) = zk.head(nx_) - x_n - 0.5 * h * (f_n + f);
        r.tail(ny_) = g;
        return r;
    }

    void refresh(const Vector& z, double w, double h, IntegratorStats& st) {
        const auto jac = stacked_jacobian(m_, z, w);
        Matrix m = jac.j;
        m.topRows(nx_) *= -0.5 * h;
        m.topLeftCorner(nx_, nx_) += Matrix::Identity(nx_, nx_);
        lu_.emplace(m);
        h_lu_ = h;
        ++st.jacobian_updates;
    }

    const SystemModel& m_;
    const SimOptions& o_;
    Eigen::Index nx_ = 0, ny_ = 0;
    std::optional<Eigen::PartialPivLU<Matrix>> lu_;
    double h_lu_ = 0.0;
};

}  // namespace detail

/// Integrates from the operating point (x0, y0) under w(t). The initial algebraic
/// state is re-solved for w(0) if it differs from op.w0.
inline SimTrace simulate(const SystemModel& model, const Vector& x0, const Vector& y0, const InputSignal& input,
                         const SimOptions& opt) {
    input.validate();
    if (!(opt.dt > 0.0) || !(opt.t_end > 0.0)) throw ParameterError("simulate", "dt and t_end must be positive");
    const auto nx = static_cast<Eigen::Index>(model.n_x());
    const auto ny = static_cast<Eigen::Index>(model.n_y());

    SimTrace tr;
    std::vector<std::string> observed;
    std::vector<VarRef> vars;
    std::vector<std::string> var_names;
    for (const auto& ch : model.outputs()) tr.names.push_back(ch.name);
    tr.names.push_back("w");
    for (const auto& s : opt.signals) {
        if (s == "*") {
            for (const auto& n : model.index().state_names()) {
                vars.push_back(model.index().at(n));
                var_names.push_back(n);
            }
        } else if (auto r = model.index().find(s)) {
            vars.push_back(*r);
            var_names.push_back(s);
        } else {
            observed.push_back(s);
        }
    }
    tr.names.insert(tr.names.end(), var_names.begin(), var_names.end());
    tr.names.insert(tr.names.end(), observed.begin(), observed.end());
    tr.columns.resize(tr.names.size());

    Vector x = x0, y = y0;
    y = solve_algebraics(model, x, y, input(0.0));
    auto record = [&](double t, double w) {
        tr.t.push_back(t);
        std::size_t c = 0;
        for (std::size_t k = 0; k < model.outputs().size(); ++k) tr.columns[c++].push_back(model.output(k, x, y, w));
        tr.columns[c++].push_back(w);
        for (const auto& v : vars) tr.columns[c++].push_back(model.value(v, x, y, w));
        if (!observed.empty()) {
            const auto obs = model.observe(x, y, w);
            for (const auto& n : observed) {
                const auto it = obs.find(n);
                if (it == obs.end()) throw ParameterError(n, "unknown signal");
                tr.columns[c++].push_back(it->second);
            }
        }
    };

    detail::TrapezoidStepper stepper(model, opt);
    const auto n_steps = static_cast<long>(std::llround(opt.t_end / opt.dt));
    Vector f(nx), g(ny);
    record(0.0, input(0.0));
    for (long n = 0; n < n_steps; ++n) {
        const double t = static_cast<double>(n) * opt.dt;
        // Sub-divide on failure; each successful sub-step restarts from the current state.
        double done = 0.0;
        int level = 0;
        while (done < opt.dt * (1.0 - 1e-12)) {
            const double h = opt.dt / static_cast<double>(1 << level);
            const double w_now = input(t + done);
            model.eval(x, y, w_now, f, g);
            Vector xs = x, ys = y;
            if (stepper.step(xs, ys, f, input(t + done + h), h, tr.stats)) {
                x = xs;
                y = ys;
                done += h;
                ++tr.stats.steps;
            } else {
                if (++level > opt.max_halvings) {
                    std::ostringstream msg;
                    msg << "Newton failed at t = " << t + done << " s after " << opt.max_halvings
                        << " step halvings (last accepted step ended at t = " << t + done << " s)";
                    throw SolverError("simulate", msg.str());
                }
                ++tr.stats.halvings;
                stepper.invalidate();
            }
        }
        if (level > 0) stepper.invalidate();
        if (!x.allFinite() || !y.allFinite()) throw SolverError("simulate", "non-finite state at t = " + std::to_string(t + opt.dt));
        if ((n + 1) % opt.record_every == 0) record(t + opt.dt, input(t + opt.dt));
    }
    tr.x_final = x;
    tr.y_final = y;
    return tr;
}

inline SimTrace simulate(const SystemModel& model, const OperatingPoint& op, const InputSignal& input, const SimOptions& opt) {
    return simulate(model, op.x0, op.y0, input, opt);
}

// ---------------------------------------------------------------- spectrum

struct Spectrum {
    std::vector<double> f_hz;
    std::vector<double> magnitude;  // single-sided amplitude
    std::vector<std::string> warnings;

    /// Amplitude at the bin nearest to f.
    double at(double f) const {
        std::size_t best = 0;
        for (std::size_t k = 1; k < f_hz.size(); ++k)
            if (std::abs(f_hz[k] - f) < std::abs(f_hz[best] - f)) best = k;
        return magnitude[best];
    }
    double resolution() const { return f_hz.size() > 1 ? f_hz[1] - f_hz[0] : 0.0; }
};

/// Hann-windowed single-sided amplitude spectrum of samples on a uniform grid with
/// spacing dt. A sinusoid of amplitude A produces a peak of about A.
inline Spectrum amplitude_spectrum(const std::vector<double>& samples, double dt, bool remove_mean = false) {
    const std::size_t n = samples.size();
    if (n < 4) throw ParameterError("spectrum", "need at least 4 samples");
    double mean = 0.0;
    if (remove_mean) {
        for (double v : samples) mean += v;
        mean /= static_cast<double>(n);
    }
    std::vector<double> buf(n);
    double wsum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
        wsum += w;
        buf[k] = w * (samples[k] - mean);
    }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> out;
    fft.fwd(out, buf);
    Spectrum s;
    const std::size_t half = n / 2 + 1;
    s.f_hz.resize(half);
    s.magnitude.resize(half);
    for (std::size_t k = 0; k < half; ++k) {
        s.f_hz[k] = static_cast<double>(k) / (static_cast<double>(n) * dt);
        const double scale = (k == 0 || (n % 2 == 0 && k == n / 2)) ? 1.0 : 2.0;
        s.magnitude[k] = scale * std::abs(out[k]) / wsum;
    }
    return s;
}

/// Spectrum of a recorded signal over [t_a, t_b], resampled to the mean sample spacing.
inline Spectrum spectrum(const SimTrace& tr, const std::string& signal, double t_a, double t_b, double f_lowest_hz = 0.0,
                         bool remove_mean = false) {
    const auto& v = tr.column(signal);
    if (tr.t.empty() || t_a < tr.t.front() - 1e-12 || t_b > tr.t.back() + 1e-12 || !(t_b > t_a))
        throw ParameterError("spectrum", "window outside the recorded time range");
    const auto lo = std::lower_bound(tr.t.begin(), tr.t.end(), t_a - 1e-12) - tr.t.begin();
    const auto hi = std::upper_bound(tr.t.begin(), tr.t.end(), t_b + 1e-12) - tr.t.begin();
    const auto count = static_cast<std::size_t>(hi - lo);
    if (count < 4) throw ParameterError("spectrum", "window holds fewer than 4 samples");
    const double dt = (t_b - t_a) / static_cast<double>(count - 1);
    std::vector<double> samples(count);
    InputSignal interp = InputSignal::trace(std::vector<double>(tr.t.begin() + lo, tr.t.begin() + hi),
                                            std::vector<double>(v.begin() + lo, v.begin() + hi));
    for (std::size_t k = 0; k < count; ++k) samples[k] = interp(t_a + static_cast<double>(k) * dt);
    auto s = amplitude_spectrum(samples, dt, remove_mean);
    if (f_lowest_hz > 0.0 && (t_b - t_a) < 4.0 / f_lowest_hz)
        s.warnings.push_back("window shorter than 4 periods of " + std::to_string(f_lowest_hz) + " Hz");
    return s;
}

/// Peak-to-peak half amplitude of a signal over [t_a, t_b].
inline double half_swing(const SimTrace& tr, const std::string& signal, double t_a, double t_b) {
    const auto& v = tr.column(signal);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t k = 0; k < tr.t.size(); ++k)
        if (tr.t[k] >= t_a && tr.t[k] <= t_b) {
            lo = std::min(lo, v[k]);
            hi = std::max(hi, v[k]);
        }
    return 0.5 * (hi - lo);
}

}  // namespace dcpower
