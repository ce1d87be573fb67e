#pragma once

// Grid-side devices for the multi-machine case: a two-axis synchronous machine
// with DC1A-type exciter and steam governor, a droop grid-forming inverter, a
// PLL grid-following inverter, and the algebraic phasor network that ties them
// to the data center. Devices inject current into their bus in the common ri frame.

#include "dcpower/assembly.hpp"
#include "dcpower/core.hpp"
#include "dcpower/errors.hpp"
#include "dcpower/params.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcpower::grid {

// ---------------------------------------------------------------- synchronous machine

struct SmState {
    double delta = 0.0;
    double omega = 1.0;
    double e_qp = 0.0;
    double e_dp = 0.0;
    double e_fd = 0.0;
    double v_f = 0.0;
    double v_r = 0.0;
    double p_sv = 0.0;
    double tau_m = 0.0;

    static constexpr std::size_t size = 9;
    static SmState from(std::span<const double> s) { return {s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8]}; }
    std::array<double, size> pack() const { return {delta, omega, e_qp, e_dp, e_fd, v_f, v_r, p_sv, tau_m}; }
};

struct SmResult {
    std::array<double, SmState::size> dx{};
    Vec2 v_dq = Vec2::Zero();
    Vec2 i_dq = Vec2::Zero();
    Vec2 i_ri = Vec2::Zero();  // injected into the bus
    double tau_e = 0.0;
    double v_t = 0.0;
    double s_e = 0.0;
};

inline double exciter_saturation(double e_fd, const SmParams& p) { return p.a_e * std::exp(p.b_e * e_fd); }

/// The machine frame uses the same rotation as every other device: v_dq = R(delta) v_ri.
inline SmResult sm_residuals(const SmState& s, const Vec2& v_ri, const SmParams& p, const PerUnitBase& base) {
    SmResult r;
    const FrameAngle angle{s.delta};
    r.v_dq = rotate(angle, v_ri);
    const double v_d = r.v_dq.x(), v_q = r.v_dq.y();
    r.i_dq = {(s.e_qp - v_q) / p.x_dp, (v_d - s.e_dp) / p.x_qp};
    r.i_ri = unrotate(angle, r.i_dq);
    r.tau_e = r.v_dq.dot(r.i_dq);
    r.v_t = r.v_dq.norm();
    r.s_e = exciter_saturation(s.e_fd, p);
    const double dw = s.omega - base.omega_s;
    const double exc = (p.k_e + r.s_e) * s.e_fd;
    r.dx = {base.omega_b * dw,
            (s.tau_m - r.tau_e - p.d * dw) / (2.0 * p.h),
            (-s.e_qp - (p.x_d - p.x_dp) * r.i_dq.x() + s.e_fd) / p.t_d0p,
            (-s.e_dp + (p.x_q - p.x_qp) * r.i_dq.y()) / p.t_q0p,
            (-exc + s.v_r) / p.t_e,
            (-s.v_f + p.k_f / p.t_e * s.v_r - p.k_f / p.t_e * exc) / p.t_f,
            (-s.v_r + p.k_a * (p.v_ref - s.v_f - r.v_t)) / p.t_a,
            (-s.p_sv + p.p_ref - dw / p.r) / p.t_sv,
            (-s.tau_m + s.p_sv) / p.t_ch};
    return r;
}

/// Steady state of the machine delivering current `i` at terminal voltage `v`
/// (grid frame). Also returns the setpoints v_ref and p_ref that hold it there.
struct SmSteadyState {
    SmState state;
    double v_ref = 0.0;
    double p_ref = 0.0;
};

inline SmSteadyState sm_steady_state(Complex v, Complex i, const SmParams& p) {
    const Complex e = v + Complex{0.0, p.x_q} * i;
    // R(delta) = e^{-j delta}; the q axis of the conventional machine frame maps onto e.
    const double delta = std::arg(e) - std::numbers::pi / 2.0;
    const Complex vdq = v * std::polar(1.0, -delta);
    const Complex idq = i * std::polar(1.0, -delta);
    SmSteadyState out;
    auto& s = out.state;
    s.delta = delta;
    s.omega = 1.0;
    s.e_dp = vdq.real() - p.x_qp * idq.imag();
    s.e_qp = vdq.imag() + p.x_dp * idq.real();
    s.e_fd = s.e_qp + (p.x_d - p.x_dp) * idq.real();
    s.v_r = (p.k_e + exciter_saturation(s.e_fd, p)) * s.e_fd;
    s.v_f = 0.0;
    const double tau_e = vdq.real() * idq.real() + vdq.imag() * idq.imag();
    s.p_sv = tau_e;
    s.tau_m = tau_e;
    out.p_ref = tau_e;
    out.v_ref = s.v_r / p.k_a + std::abs(v);
    return out;
}

// ---------------------------------------------------------------- grid-forming inverter

struct GfmState {
    double theta = 0.0;
    double p_oc = 0.0;
    double q_oc = 0.0;
    Vec2 xi = Vec2::Zero();
    Vec2 gamma = Vec2::Zero();
    Vec2 i_cv = Vec2::Zero();
    Vec2 v_f = Vec2::Zero();
    Vec2 i_g = Vec2::Zero();

    static constexpr std::size_t size = 13;
    static GfmState from(std::span<const double> s) {
        return {s[0], s[1], s[2], {s[3], s[4]}, {s[5], s[6]}, {s[7], s[8]}, {s[9], s[10]}, {s[11], s[12]}};
    }
    std::array<double, size> pack() const {
        return {theta, p_oc, q_oc, xi.x(), xi.y(), gamma.x(), gamma.y(), i_cv.x(), i_cv.y(), v_f.x(), v_f.y(), i_g.x(), i_g.y()};
    }
};

struct InverterResult {
    std::vector<double> dx;
    double omega = 1.0;
    double p = 0.0;  // v_f^T i_g
    double q = 0.0;  // v_f^T J i_g
    Vec2 v_pcc = Vec2::Zero();  // local frame
    Vec2 i_ref = Vec2::Zero();
    Vec2 v_cv = Vec2::Zero();
    Vec2 i_ri = Vec2::Zero();  // injected into the bus
};

/// `decoupling_sign` multiplies the converter-inductor feed-forward term in the
/// current controller. The default -1 is the literal form, which reinforces the
/// plant's rotational coupling instead of cancelling it; +1 cancels it.
inline InverterResult gfm_residuals(const GfmState& s, const Vec2& v_ri, const GfmParams& p, const PerUnitBase& base,
                                    double decoupling_sign = -1.0) {
    InverterResult r;
    const FrameAngle angle{s.theta};
    r.omega = p.omega_ref + p.kp_droop * (p.p_ref - s.p_oc);
    const double v_oc = p.v_ref + p.kq_droop * (p.q_ref - s.q_oc);
    r.p = s.v_f.dot(s.i_g);
    r.q = s.v_f.dot(jmul(s.i_g));
    r.v_pcc = rotate(angle, v_ri);
    r.i_ri = unrotate(angle, s.i_g);
    const Vec2 v_vi = Vec2{0.0, v_oc} - p.r_v * s.i_g - r.omega * p.l_v * jmul(s.i_g);
    r.i_ref = p.kp_v * (v_vi - s.v_f) + p.ki_v * s.xi + r.omega * p.c_f * jmul(s.v_f);
    r.v_cv = p.kp_c * (r.i_ref - s.i_cv) + p.ki_c * s.gamma + decoupling_sign * r.omega * p.l_f * jmul(s.i_cv);

    const double wb = base.omega_b;
    const Vec2 dxi = v_vi - s.v_f;
    const Vec2 dgamma = r.i_ref - s.i_cv;
    const Vec2 di_cv = wb / p.l_f * (r.v_cv - s.v_f - p.r_f * s.i_cv - r.omega * p.l_f * jmul(s.i_cv));
    const Vec2 dv_f = wb / p.c_f * (s.i_cv - s.i_g - r.omega * p.c_f * jmul(s.v_f));
    const Vec2 di_g = wb / p.l_g * (s.v_f - r.v_pcc - p.r_g * s.i_g - r.omega * p.l_g * jmul(s.i_g));
    r.dx = {wb * (r.omega - base.omega_s),
            p.omega_z * (r.p - s.p_oc),
            p.omega_f * (r.q - s.q_oc),
            dxi.x(), dxi.y(), dgamma.x(), dgamma.y(), di_cv.x(), di_cv.y(), dv_f.x(), dv_f.y(), di_g.x(), di_g.y()};
    return r;
}

// ---------------------------------------------------------------- grid-following inverter

struct GflState {
    double theta = 0.0;
    double vq_pll = 0.0;
    double epsilon = 0.0;
    double sigma_p = 0.0;
    double p_m = 0.0;
    double sigma_q = 0.0;
    double q_m = 0.0;
    Vec2 gamma = Vec2::Zero();
    Vec2 i_cv = Vec2::Zero();
    Vec2 v_f = Vec2::Zero();
    Vec2 i_g = Vec2::Zero();

    static constexpr std::size_t size = 15;
    static GflState from(std::span<const double> s) {
        return {s[0], s[1], s[2], s[3], s[4], s[5], s[6], {s[7], s[8]}, {s[9], s[10]}, {s[11], s[12]}, {s[13], s[14]}};
    }
    std::array<double, size> pack() const {
        return {theta, vq_pll, epsilon, sigma_p, p_m, sigma_q, q_m, gamma.x(), gamma.y(),
                i_cv.x(), i_cv.y(), v_f.x(), v_f.y(), i_g.x(), i_g.y()};
    }
};

/// Current reference layout of the power loops. `crossed` puts the reactive loop on
/// the d axis and the active loop on the q axis; `aligned` drives i_d from the
/// active loop and i_q from the (sign-corrected) reactive loop.
enum class PowerLoopLayout { crossed, aligned };

inline InverterResult gfl_residuals(const GflState& s, const Vec2& v_ri, const GflParams& p, const PerUnitBase& base,
                                    double decoupling_sign = -1.0, PowerLoopLayout layout = PowerLoopLayout::aligned) {
    InverterResult r;
    const FrameAngle angle{s.theta};
    r.omega = base.omega_s + p.kp_pll * s.vq_pll + p.ki_pll * s.epsilon;
    r.v_pcc = rotate(angle, v_ri);
    r.i_ri = unrotate(angle, s.i_g);
    r.p = s.v_f.dot(s.i_g);
    r.q = s.v_f.dot(jmul(s.i_g));
    const double p_loop = p.kp_p * (p.p_ref - s.p_m) + p.ki_p * s.sigma_p;
    const double q_loop = p.kp_q * (p.q_ref - s.q_m) + p.ki_q * s.sigma_q;
    r.i_ref = layout == PowerLoopLayout::crossed ? Vec2{q_loop, p_loop} : Vec2{p_loop, -q_loop};
    r.v_cv = p.kp_c * (r.i_ref - s.i_cv) + p.ki_c * s.gamma + decoupling_sign * r.omega * p.l_f * jmul(s.i_cv);

    const double wb = base.omega_b;
    const Vec2 dgamma = r.i_ref - s.i_cv;
    const Vec2 di_cv = wb / p.l_f * (r.v_cv - s.v_f - p.r_f * s.i_cv - r.omega * p.l_f * jmul(s.i_cv));
    const Vec2 dv_f = wb / p.c_f * (s.i_cv - s.i_g - r.omega * p.c_f * jmul(s.v_f));
    const Vec2 di_g = wb / p.l_g * (s.v_f - r.v_pcc - p.r_g * s.i_g - r.omega * p.l_g * jmul(s.i_g));
    r.dx = {wb * (r.omega - base.omega_s),
            p.omega_lp * (s.v_f.y() - s.vq_pll),
            s.vq_pll,
            p.p_ref - s.p_m,
            p.omega_z * (r.p - s.p_m),
            p.q_ref - s.q_m,
            p.omega_f * (r.q - s.q_m),
            dgamma.x(), dgamma.y(), di_cv.x(), di_cv.y(), dv_f.x(), dv_f.y(), di_g.x(), di_g.y()};
    return r;
}

/// LCL steady state behind a bus: filter-capacitor voltage and converter current in
/// the grid frame for injected current `i_g` at bus voltage `v`, at omega = 1.
struct LclSteadyState {
    Complex v_f;
    Complex i_cv;
};

inline LclSteadyState lcl_steady_state(Complex v, Complex i_g, double r_g, double l_g, double c_f, double omega = 1.0) {
    const Complex j{0.0, 1.0};
    const Complex v_f = v + (r_g + j * omega * l_g) * i_g;
    return {v_f, i_g + j * omega * c_f * v_f};
}

/// Setpoints and states that make the grid-forming inverter inject `i` at bus voltage `v`.
inline std::pair<GfmState, GfmParams> gfm_steady_state(Complex v, Complex i, GfmParams p, double decoupling_sign = -1.0) {
    const Complex j{0.0, 1.0};
    const auto lcl = lcl_steady_state(v, i, p.r_g, p.l_g, p.c_f);
    // Internal voltage sits on the local q axis: e^{-j theta} (v_f + z_v i) = j v_oc.
    const Complex e = lcl.v_f + (p.r_v + j * p.l_v) * i;
    GfmState s;
    s.theta = std::arg(e) - std::numbers::pi / 2.0;
    const Complex rot = std::polar(1.0, -s.theta);
    s.v_f = to_vec2(lcl.v_f * rot);
    s.i_g = to_vec2(i * rot);
    s.i_cv = to_vec2(lcl.i_cv * rot);
    s.p_oc = s.v_f.dot(s.i_g);
    s.q_oc = s.v_f.dot(jmul(s.i_g));
    p.p_ref = s.p_oc;
    p.q_ref = s.q_oc;
    p.v_ref = std::abs(e);
    p.omega_ref = 1.0;
    s.xi = (s.i_cv - p.c_f * jmul(s.v_f)) / p.ki_v;
    // v_cv = v_f + r_f i_cv + l_f J i_cv from the inductor balance
    const Vec2 v_cv = s.v_f + p.r_f * s.i_cv + p.l_f * jmul(s.i_cv);
    s.gamma = (v_cv - decoupling_sign * p.l_f * jmul(s.i_cv)) / p.ki_c;
    return {s, p};
}

inline std::pair<GflState, GflParams> gfl_steady_state(Complex v, Complex i, GflParams p, double decoupling_sign = -1.0,
                                                       PowerLoopLayout layout = PowerLoopLayout::aligned) {
    const auto lcl = lcl_steady_state(v, i, p.r_g, p.l_g, p.c_f);
    GflState s;
    // the PLL locks onto the filter-capacitor voltage
    s.theta = std::arg(lcl.v_f);
    const Complex rot = std::polar(1.0, -s.theta);
    s.v_f = to_vec2(lcl.v_f * rot);
    s.i_g = to_vec2(i * rot);
    s.i_cv = to_vec2(lcl.i_cv * rot);
    s.p_m = s.v_f.dot(s.i_g);
    s.q_m = s.v_f.dot(jmul(s.i_g));
    p.p_ref = s.p_m;
    p.q_ref = s.q_m;
    if (layout == PowerLoopLayout::crossed) {
        s.sigma_q = s.i_cv.x() / p.ki_q;
        s.sigma_p = s.i_cv.y() / p.ki_p;
    } else {
        s.sigma_p = s.i_cv.x() / p.ki_p;
        s.sigma_q = -s.i_cv.y() / p.ki_q;
    }
    const Vec2 v_cv = s.v_f + p.r_f * s.i_cv + p.l_f * jmul(s.i_cv);
    s.gamma = (v_cv - decoupling_sign * p.l_f * jmul(s.i_cv)) / p.ki_c;
    return {s, p};
}

// ---------------------------------------------------------------- blocks

/// Synchronous machine. Input: terminal bus voltage (r, i). Owns the injected current (r, i).
class SmBlock final : public ComponentBlock {
public:
    SmBlock(std::string name, SmParams p, PerUnitBase base, std::string v_r, std::string v_i)
        : ComponentBlock(std::move(name)), p_(p), base_(base), inputs_{std::move(v_r), std::move(v_i)} {}

    std::vector<std::string> state_names() const override {
        return {"delta", "omega", "e_qp", "e_dp", "e_fd", "v_f", "v_r", "p_sv", "tau_m"};
    }
    std::vector<std::string> algebraic_names() const override { return {"i_r", "i_i"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = sm_residuals(SmState::from(io.x()), io.in2(0), p_, base_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        g[0] = io.y(0) - r.i_ri.x();
        g[1] = io.y(1) - r.i_ri.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto r = sm_residuals(SmState::from(io.x()), io.in2(0), p_, base_);
        out["tau_e"] = r.tau_e;
        out["v_t"] = r.v_t;
        out["p"] = io.in2(0).dot(r.i_ri);
        out["q"] = io.in2(0).dot(jmul(r.i_ri));
    }

private:
    SmParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

class GfmBlock final : public ComponentBlock {
public:
    GfmBlock(std::string name, GfmParams p, PerUnitBase base, std::string v_r, std::string v_i, double decoupling_sign = -1.0)
        : ComponentBlock(std::move(name)), p_(p), base_(base), sign_(decoupling_sign), inputs_{std::move(v_r), std::move(v_i)} {}

    std::vector<std::string> state_names() const override {
        return {"theta", "p_oc", "q_oc", "xi_d", "xi_q", "gamma_d", "gamma_q", "i_cv_d", "i_cv_q", "v_f_d", "v_f_q", "i_g_d", "i_g_q"};
    }
    std::vector<std::string> algebraic_names() const override { return {"i_r", "i_i"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = gfm_residuals(GfmState::from(io.x()), io.in2(0), p_, base_, sign_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        g[0] = io.y(0) - r.i_ri.x();
        g[1] = io.y(1) - r.i_ri.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto r = gfm_residuals(GfmState::from(io.x()), io.in2(0), p_, base_, sign_);
        out["omega"] = r.omega;
        out["p_f"] = r.p;
        out["q_f"] = r.q;
    }

private:
    GfmParams p_;
    PerUnitBase base_;
    double sign_;
    std::vector<std::string> inputs_;
};

class GflBlock final : public ComponentBlock {
public:
    GflBlock(std::string name, GflParams p, PerUnitBase base, std::string v_r, std::string v_i, double decoupling_sign = -1.0,
             PowerLoopLayout layout = PowerLoopLayout::aligned)
        : ComponentBlock(std::move(name)), p_(p), base_(base), sign_(decoupling_sign), layout_(layout),
          inputs_{std::move(v_r), std::move(v_i)} {}

    std::vector<std::string> state_names() const override {
        return {"theta_pll", "vq_pll", "epsilon_pll", "sigma_p", "p_m", "sigma_q", "q_m", "gamma_d", "gamma_q",
                "i_cv_d", "i_cv_q", "v_f_d", "v_f_q", "i_g_d", "i_g_q"};
    }
    std::vector<std::string> algebraic_names() const override { return {"i_r", "i_i"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = gfl_residuals(GflState::from(io.x()), io.in2(0), p_, base_, sign_, layout_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        g[0] = io.y(0) - r.i_ri.x();
        g[1] = io.y(1) - r.i_ri.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto r = gfl_residuals(GflState::from(io.x()), io.in2(0), p_, base_, sign_, layout_);
        out["omega_pll"] = r.omega;
        out["p_f"] = r.p;
        out["q_f"] = r.q;
    }

private:
    GflParams p_;
    PerUnitBase base_;
    double sign_;
    PowerLoopLayout layout_;
    std::vector<std::string> inputs_;
};

// ---------------------------------------------------------------- network

struct Branch {
    int from = 0;  // zero-based bus index
    int to = 0;
    double r = 0.0;
    double x = 0.0;
    double b = 0.0;  // total line charging
};

enum class BusType { slack, pv, pq };

struct Bus {
    BusType type = BusType::pq;
    double v_set = 1.0;  // slack / PV magnitude
    double p_gen = 0.0;  // PV dispatch
    double p_load = 0.0;
    double q_load = 0.0;
};

struct NetworkData {
    std::vector<Bus> buses;
    std::vector<Branch> branches;
};

/// WSCC 3-machine 9-bus data on a 100 MVA base (generator step-up transformers
/// included as branches 1-4, 2-7, 3-9).
inline NetworkData wscc9() {
    NetworkData n;
    n.buses.resize(9);
    n.buses[0] = {BusType::slack, 1.04, 0.0, 0.0, 0.0};
    n.buses[1] = {BusType::pv, 1.025, 1.63, 0.0, 0.0};
    n.buses[2] = {BusType::pv, 1.025, 0.85, 0.0, 0.0};
    n.buses[4].p_load = 1.25;
    n.buses[4].q_load = 0.5;
    n.buses[5].p_load = 0.9;
    n.buses[5].q_load = 0.3;
    n.buses[7].p_load = 1.0;
    n.buses[7].q_load = 0.35;
    n.branches = {{0, 3, 0.0, 0.0576, 0.0},     {1, 6, 0.0, 0.0625, 0.0},     {2, 8, 0.0, 0.0586, 0.0},
                  {3, 4, 0.010, 0.085, 0.176},  {3, 5, 0.017, 0.092, 0.158},  {4, 6, 0.032, 0.161, 0.306},
                  {5, 8, 0.039, 0.170, 0.358},  {6, 7, 0.0085, 0.072, 0.149}, {7, 8, 0.0119, 0.1008, 0.209}};
    return n;
}

/// Bus admittance matrix of the passive network (lines, transformers, charging).
inline CMatrix admittance(const NetworkData& n) {
    const auto nb = static_cast<Eigen::Index>(n.buses.size());
    CMatrix y = CMatrix::Zero(nb, nb);
    for (const auto& br : n.branches) {
        if (br.from < 0 || br.to < 0 || br.from >= nb || br.to >= nb) throw ParameterError("network", "branch bus out of range");
        const Complex z{br.r, br.x};
        if (std::abs(z) == 0.0) throw ParameterError("network", "zero-impedance branch");
        const Complex ys = 1.0 / z;
        const Complex ysh{0.0, br.b / 2.0};
        y(br.from, br.from) += ys + ysh;
        y(br.to, br.to) += ys + ysh;
        y(br.from, br.to) -= ys;
        y(br.to, br.from) -= ys;
    }
    return y;
}

struct PowerFlowResult {
    CVector v;        // bus voltage phasors
    CVector s_inj;    // net injected complex power per bus (generation - load)
    int iterations = 0;
};

/// Newton-Raphson power flow in polar form. `extra_p_load` adds constant-power
/// active load per bus (the data center).
inline PowerFlowResult power_flow(const NetworkData& n, const std::vector<double>& extra_p_load = {}, double tol = 1e-12,
                                  int max_iter = 30) {
    const auto nb = static_cast<Eigen::Index>(n.buses.size());
    const CMatrix y = admittance(n);
    Vector p_spec = Vector::Zero(nb), q_spec = Vector::Zero(nb);
    Vector vm = Vector::Ones(nb), va = Vector::Zero(nb);
    std::vector<Eigen::Index> pvpq, pq;
    int n_slack = 0;
    for (Eigen::Index k = 0; k < nb; ++k) {
        const auto& b = n.buses[static_cast<std::size_t>(k)];
        const double extra = static_cast<std::size_t>(k) < extra_p_load.size() ? extra_p_load[static_cast<std::size_t>(k)] : 0.0;
        p_spec(k) = b.p_gen - b.p_load - extra;
        q_spec(k) = -b.q_load;
        if (b.type == BusType::slack) {
            ++n_slack;
            vm(k) = b.v_set;
        } else {
            pvpq.push_back(k);
            if (b.type == BusType::pv) vm(k) = b.v_set;
            else pq.push_back(k);
        }
    }
    if (n_slack != 1) throw ParameterError("network", "exactly one slack bus required");
    const auto npv = static_cast<Eigen::Index>(pvpq.size());
    const auto npq = static_cast<Eigen::Index>(pq.size());

    auto voltages = [&]() {
        CVector v(nb);
        for (Eigen::Index k = 0; k < nb; ++k) v(k) = std::polar(vm(k), va(k));
        return v;
    };
    auto mismatch = [&](const CVector& v) {
        const CVector s = v.cwiseProduct((y * v).conjugate());
        Vector m(npv + npq);
        for (Eigen::Index a = 0; a < npv; ++a) m(a) = s(pvpq[a]).real() - p_spec(pvpq[a]);
        for (Eigen::Index a = 0; a < npq; ++a) m(npv + a) = s(pq[a]).imag() - q_spec(pq[a]);
        return m;
    };
    PowerFlowResult out;
    for (int it = 0; it <= max_iter; ++it) {
        CVector v = voltages();
        Vector m = mismatch(v);
        if (m.lpNorm<Eigen::Infinity>() < tol) {
            out.v = v;
            out.s_inj = v.cwiseProduct((y * v).conjugate());
            out.iterations = it;
            return out;
        }
        // Jacobian by central differences in (angle, magnitude); the system is small.
        Matrix jac(npv + npq, npv + npq);
        for (Eigen::Index c = 0; c < npv + npq; ++c) {
            const bool is_angle = c < npv;
            const Eigen::Index bus = is_angle ? pvpq[c] : pq[c - npv];
            double& var = is_angle ? va(bus) : vm(bus);
            const double h = 1e-7;
            const double keep = var;
            var = keep + h;
            const Vector mp = mismatch(voltages());
            var = keep - h;
            const Vector mm = mismatch(voltages());
            var = keep;
            jac.col(c) = (mp - mm) / (2.0 * h);
        }
        const Vector dx = jac.fullPivLu().solve(m);
        if (!dx.allFinite()) throw SolverError("power_flow", "singular power-flow Jacobian");
        for (Eigen::Index a = 0; a < npv; ++a) va(pvpq[a]) -= dx(a);
        for (Eigen::Index a = 0; a < npq; ++a) vm(pq[a]) -= dx(npv + a);
    }
    throw SolverError("power_flow", "no convergence after " + std::to_string(max_iter) + " iterations");
}

/// Adds the static loads at the solved voltages as constant shunt admittances.
inline CMatrix admittance_with_loads(const NetworkData& n, const CVector& v) {
    CMatrix y = admittance(n);
    for (std::size_t k = 0; k < n.buses.size(); ++k) {
        const auto& b = n.buses[k];
        const auto i = static_cast<Eigen::Index>(k);
        if (b.p_load != 0.0 || b.q_load != 0.0) y(i, i) += std::conj(Complex{b.p_load, b.q_load}) / std::norm(v(i));
    }
    return y;
}

/// Algebraic network: owns every bus voltage (r, i) and enforces Y v = sum of
/// injected currents. Each port lists a bus index, the two current variables and a gain
/// (negative gain for a load drawing current).
class NetworkBlock final : public ComponentBlock {
public:
    struct Port {
        int bus = 0;
        std::string i_r;
        std::string i_i;
        double gain = 1.0;
    };

    NetworkBlock(std::string name, CMatrix y, std::vector<Port> ports)
        : ComponentBlock(std::move(name)), y_(std::move(y)), ports_(std::move(ports)) {
        for (const auto& p : ports_) {
            if (p.bus < 0 || p.bus >= y_.rows()) throw BuildError("port bus out of range");
            inputs_.push_back(p.i_r);
            inputs_.push_back(p.i_i);
        }
        Eigen::FullPivLU<CMatrix> lu(y_);
        if (!lu.isInvertible()) {
            Eigen::JacobiSVD<CMatrix> svd(y_, Eigen::ComputeFullV);
            Eigen::Index k;
            svd.matrixV().col(y_.cols() - 1).cwiseAbs().maxCoeff(&k);
            throw BuildError("singular network admittance at bus " + std::to_string(k + 1));
        }
    }

    static std::string v_r(int bus) { return "v" + std::to_string(bus + 1) + "_r"; }
    static std::string v_i(int bus) { return "v" + std::to_string(bus + 1) + "_i"; }

    std::vector<std::string> state_names() const override { return {}; }
    std::vector<std::string> algebraic_names() const override {
        std::vector<std::string> out;
        for (int k = 0; k < y_.rows(); ++k) {
            out.push_back(v_r(k));
            out.push_back(v_i(k));
        }
        return out;
    }
    std::vector<std::string> input_names() const override { return inputs_; }
    const CMatrix& admittance_matrix() const { return y_; }

    void evaluate(const BlockIo& io, std::span<double>, std::span<double> g) const override {
        const auto nb = y_.rows();
        CVector v(nb);
        for (Eigen::Index k = 0; k < nb; ++k) v(k) = {io.y(static_cast<std::size_t>(2 * k)), io.y(static_cast<std::size_t>(2 * k + 1))};
        CVector mis = y_ * v;
        for (std::size_t a = 0; a < ports_.size(); ++a)
            mis(ports_[a].bus) -= ports_[a].gain * Complex{io.in(2 * a), io.in(2 * a + 1)};
        for (Eigen::Index k = 0; k < nb; ++k) {
            g[static_cast<std::size_t>(2 * k)] = mis(k).real();
            g[static_cast<std::size_t>(2 * k + 1)] = mis(k).imag();
        }
    }

private:
    CMatrix y_;
    std::vector<Port> ports_;
    std::vector<std::string> inputs_;
};

}  // namespace dcpower::grid
