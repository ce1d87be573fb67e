#pragma once

// Reduced positive-sequence models of the data-center power-delivery chain:
// active front end (AFE), DC link, voltage-source inverter (VSI), aggregated
// PSU array, aggregated DC-DC/load stage, and the infinite-bus closure.
// Every left-hand coefficient (l/omega_b, c/omega_b, 1/omega_lp) is folded in,
// so each evaluator returns dx/dt directly.

#include "dcpower/assembly.hpp"
#include "dcpower/core.hpp"
#include "dcpower/errors.hpp"
#include "dcpower/params.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace dcpower::dcchain {

inline void require_positive(double v, const char* block, const char* variable, const char* what) {
    if (!(v > 0.0)) throw DomainError(block, variable, what);
}

// ---------------------------------------------------------------- AFE

struct AfeState {
    double theta_pll = 0.0;
    double epsilon = 0.0;
    double vq_pll = 0.0;
    Vec2 i_dq = Vec2::Zero();
    double xi_dc = 0.0;
    Vec2 gamma_dq = Vec2::Zero();

    static constexpr std::size_t size = 8;
    static AfeState from(std::span<const double> s) {
        return {s[0], s[1], s[2], {s[3], s[4]}, s[5], {s[6], s[7]}};
    }
    std::array<double, size> pack() const {
        return {theta_pll, epsilon, vq_pll, i_dq.x(), i_dq.y(), xi_dc, gamma_dq.x(), gamma_dq.y()};
    }
};

struct AfeResult {
    std::array<double, AfeState::size> dx{};
    double omega_pll = 0.0;
    Vec2 v_dq_pcc = Vec2::Zero();
    Vec2 i_ri_pcc = Vec2::Zero();  // current drawn from the PCC, grid frame
    Vec2 i_dq_ref = Vec2::Zero();
    Vec2 v_dq_ref = Vec2::Zero();
    Vec2 m_dq = Vec2::Zero();
};

inline AfeResult afe_residuals(const AfeState& s, const Vec2& v_pcc_ri, double v_dc_ups, const AfeParams& p,
                               const PerUnitBase& base) {
    require_positive(v_dc_ups, "afe", "v_dc_ups", "nonpositive DC-link voltage makes the modulation command singular");
    AfeResult r;
    const FrameAngle angle{s.theta_pll};
    r.omega_pll = base.omega_s + p.kp_pll * s.vq_pll + p.ki_pll * s.epsilon;
    r.v_dq_pcc = rotate(angle, v_pcc_ri);
    r.i_ri_pcc = unrotate(angle, s.i_dq);
    r.i_dq_ref = {p.kp_dc * (p.vdc_ref - v_dc_ups) + p.ki_dc * s.xi_dc, 0.0};
    const Vec2 coupling = r.omega_pll * p.l_afe * jmul(s.i_dq);
    // Current PI acts on (i - i_ref); the converter voltage enters the plant with a minus sign.
    r.v_dq_ref = p.kp_c * (s.i_dq - r.i_dq_ref) + p.ki_c * s.gamma_dq + coupling;
    r.m_dq = r.v_dq_ref / v_dc_ups;

    const Vec2 di = (base.omega_b / p.l_afe) * (r.v_dq_pcc - v_dc_ups * r.m_dq - p.r_afe * s.i_dq + coupling);
    const Vec2 dgamma = s.i_dq - r.i_dq_ref;
    r.dx = {base.omega_b * (r.omega_pll - base.omega_s),
            s.vq_pll,
            p.omega_lp * (r.v_dq_pcc.y() - s.vq_pll),
            di.x(),
            di.y(),
            p.vdc_ref - v_dc_ups,
            dgamma.x(),
            dgamma.y()};
    return r;
}

// ---------------------------------------------------------------- VSI

struct VsiState {
    Vec2 i_cv = Vec2::Zero();
    Vec2 v_uv = Vec2::Zero();
    Vec2 xi_uv = Vec2::Zero();
    Vec2 gamma_uv = Vec2::Zero();

    static constexpr std::size_t size = 8;
    static VsiState from(std::span<const double> s) {
        return {{s[0], s[1]}, {s[2], s[3]}, {s[4], s[5]}, {s[6], s[7]}};
    }
    std::array<double, size> pack() const {
        return {i_cv.x(), i_cv.y(), v_uv.x(), v_uv.y(), xi_uv.x(), xi_uv.y(), gamma_uv.x(), gamma_uv.y()};
    }
};

struct VsiResult {
    std::array<double, VsiState::size> dx{};
    Vec2 v_ref = Vec2::Zero();
    Vec2 i_cv_ref = Vec2::Zero();
    Vec2 v_cv_ref = Vec2::Zero();
    Vec2 m_uv = Vec2::Zero();
    Vec2 cap_coupling = Vec2::Zero();  // omega c J v
};

inline VsiResult vsi_residuals(const VsiState& s, const Vec2& i_uv_vsi, double v_dc_ups, const VsiParams& p,
                               const PerUnitBase& base) {
    require_positive(v_dc_ups, "vsi", "v_dc_ups", "nonpositive DC-link voltage makes the modulation command singular");
    VsiResult r;
    const double omega = base.omega_s;
    r.v_ref = {p.vu_ref, 0.0};
    r.cap_coupling = omega * p.c_vsi * jmul(s.v_uv);
    const Vec2 ind_coupling = omega * p.l_vsi * jmul(s.i_cv);
    r.i_cv_ref = p.kp_v * (r.v_ref - s.v_uv) + p.ki_v * s.xi_uv - r.cap_coupling;
    r.v_cv_ref = p.kp_c * (r.i_cv_ref - s.i_cv) + p.ki_c * s.gamma_uv - ind_coupling;
    r.m_uv = r.v_cv_ref / v_dc_ups;

    const Vec2 di = (base.omega_b / p.l_vsi) * (v_dc_ups * r.m_uv - s.v_uv - p.r_vsi * s.i_cv + ind_coupling);
    const Vec2 dv = (base.omega_b / p.c_vsi) * (s.i_cv - i_uv_vsi + r.cap_coupling);
    const Vec2 dxi = r.v_ref - s.v_uv;
    const Vec2 dgamma = r.i_cv_ref - s.i_cv;
    r.dx = {di.x(), di.y(), dv.x(), dv.y(), dxi.x(), dxi.y(), dgamma.x(), dgamma.y()};
    return r;
}

// ---------------------------------------------------------------- DC link

inline double dclink_residual(double /*v_dc_ups*/, const Vec2& m_dq, const Vec2& i_dq_afe, const Vec2& m_uv,
                              const Vec2& i_uv_cv, double c_dc, const PerUnitBase& base) {
    const double i_in = m_dq.dot(i_dq_afe);
    const double i_out = m_uv.dot(i_uv_cv);
    return base.omega_b / c_dc * (i_in - i_out);
}

// ---------------------------------------------------------------- PSU array (common-DC, QSS inner loop)

struct PsuReducedState {
    double v_psu = 0.0;
    double xi_psu = 0.0;
};

struct PsuResult {
    std::array<double, 2> dx{};
    double g_eq = 0.0;
    Vec2 i_uv_vsi = Vec2::Zero();
};

inline PsuResult psu_reduced_residuals(const PsuReducedState& s, const Vec2& v_uv_vsi, double i_psu, const PsuParams& p,
                                       const PerUnitBase& base) {
    require_positive(s.v_psu, "psu", "v_psu", "nonpositive PSU DC-port voltage");
    PsuResult r;
    r.g_eq = p.kp_v * (p.v_psu_ref - s.v_psu) + p.ki_v * s.xi_psu;
    r.i_uv_vsi = r.g_eq * v_uv_vsi;
    const double p_in = (r.g_eq - p.r_psu * r.g_eq * r.g_eq) * v_uv_vsi.squaredNorm();
    r.dx = {base.omega_b / p.c_psu * (p_in / (3.0 * s.v_psu) - i_psu), p.v_psu_ref - s.v_psu};
    return r;
}

// ---------------------------------------------------------------- DC-DC + load (QSS inner loop)

struct DcdcReducedState {
    double v_eq = 0.0;
    double xi_eq = 0.0;
};

struct DcdcResult {
    std::array<double, 2> dx{};
    double g_load = 0.0;
    double i_eq = 0.0;
    double i_psu = 0.0;
};

inline double load_conductance(double p_load, double v_eq_ref) { return p_load / (3.0 * v_eq_ref * v_eq_ref); }

inline DcdcResult dcdc_reduced_residuals(const DcdcReducedState& s, double p_load, double v_psu, const DcdcParams& p,
                                         const PerUnitBase& base) {
    require_positive(v_psu, "dcdc", "v_psu", "nonpositive PSU DC-port voltage");
    DcdcResult r;
    r.g_load = load_conductance(p_load, p.v_eq_ref);
    r.i_eq = p.kp_v * (p.v_eq_ref - s.v_eq) + p.ki_v * s.xi_eq;
    r.i_psu = s.v_eq / v_psu * r.i_eq;
    r.dx = {base.omega_b / p.c_eq * (r.i_eq - r.g_load * s.v_eq), p.v_eq_ref - s.v_eq};
    return r;
}

// ---------------------------------------------------------------- infinite bus

inline Vec2 infinite_bus_closure(const Vec2& i_ri_afe, const InfiniteBusParams& p) {
    Eigen::Matrix2d z;
    z << p.r_inf, -p.x_inf, p.x_inf, p.r_inf;
    return Vec2{p.v_inf, 0.0} - z * i_ri_afe;
}

// ================================================================ blocks

/// AFE block. Inputs: PCC voltage (r, i) in the grid frame and the DC-link voltage.
/// Owns algebraic m_d, m_q and the drawn PCC current i_r, i_i.
class AfeBlock final : public ComponentBlock {
public:
    AfeBlock(std::string name, AfeParams p, PerUnitBase base, std::string v_pcc_r, std::string v_pcc_i, std::string v_dc)
        : ComponentBlock(std::move(name)), p_(p), base_(base), inputs_{std::move(v_pcc_r), std::move(v_pcc_i), std::move(v_dc)} {}

    std::vector<std::string> state_names() const override {
        return {"theta_pll", "epsilon_pll", "vq_pll", "i_d", "i_q", "xi_dc", "gamma_d", "gamma_q"};
    }
    std::vector<std::string> algebraic_names() const override { return {"m_d", "m_q", "i_r", "i_i"}; }
    std::vector<std::string> input_names() const override { return inputs_; }
    const AfeParams& params() const { return p_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = afe_residuals(AfeState::from(io.x()), io.in2(0), io.in(2), p_, base_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        g[0] = io.y(0) - r.m_dq.x();
        g[1] = io.y(1) - r.m_dq.y();
        g[2] = io.y(2) - r.i_ri_pcc.x();
        g[3] = io.y(3) - r.i_ri_pcc.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto s = AfeState::from(io.x());
        const auto r = afe_residuals(s, io.in2(0), io.in(2), p_, base_);
        out["omega_pll"] = r.omega_pll;
        out["v_d_pcc"] = r.v_dq_pcc.x();
        out["v_q_pcc"] = r.v_dq_pcc.y();
        out["m_d"] = r.m_dq.x();
        out["m_q"] = r.m_dq.y();
        out["p_pcc"] = r.v_dq_pcc.dot(s.i_dq);
        out["q_pcc"] = r.v_dq_pcc.dot(jmul(s.i_dq));
        out["i_dc_in"] = r.m_dq.dot(s.i_dq);
    }

private:
    AfeParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

/// DC-link capacitor between the AFE and the VSI.
class DcLinkBlock final : public ComponentBlock {
public:
    DcLinkBlock(std::string name, DcLinkParams p, PerUnitBase base, std::string afe, std::string vsi)
        : ComponentBlock(std::move(name)), p_(p), base_(base),
          inputs_{afe + ".m_d", afe + ".m_q", afe + ".i_d", afe + ".i_q",
                  vsi + ".m_u", vsi + ".m_v", vsi + ".i_cv_u", vsi + ".i_cv_v"} {}

    std::vector<std::string> state_names() const override { return {"v_dc_ups"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double>) const override {
        f[0] = dclink_residual(io.x(0), io.in2(0), io.in2(2), io.in2(4), io.in2(6), p_.c_dc, base_);
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        out["i_dc_in"] = io.in2(0).dot(io.in2(2));
        out["i_dc_out"] = io.in2(4).dot(io.in2(6));
    }

private:
    DcLinkParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

/// VSI block. Inputs: DC-link voltage and the AC-bus load current (u, v).
class VsiBlock final : public ComponentBlock {
public:
    VsiBlock(std::string name, VsiParams p, PerUnitBase base, std::string v_dc, std::string i_u, std::string i_v)
        : ComponentBlock(std::move(name)), p_(p), base_(base), inputs_{std::move(v_dc), std::move(i_u), std::move(i_v)} {}

    std::vector<std::string> state_names() const override {
        return {"i_cv_u", "i_cv_v", "v_u", "v_v", "xi_u", "xi_v", "gamma_u", "gamma_v"};
    }
    std::vector<std::string> algebraic_names() const override { return {"m_u", "m_v"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = vsi_residuals(VsiState::from(io.x()), io.in2(1), io.in(0), p_, base_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        g[0] = io.y(0) - r.m_uv.x();
        g[1] = io.y(1) - r.m_uv.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto s = VsiState::from(io.x());
        const Vec2 i_load = io.in2(1);
        out["p_vsi"] = s.v_uv.dot(i_load);
        out["i_dc_out"] = io.y(0) * s.i_cv.x() + io.y(1) * s.i_cv.y();
    }

private:
    VsiParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

/// Common-DC PSU array. Inputs: VSI capacitor voltage (u, v) and DC-DC input current.
/// Owns the AC-bus current i_u, i_v drawn from the VSI.
class PsuBlock final : public ComponentBlock {
public:
    PsuBlock(std::string name, PsuParams p, PerUnitBase base, std::string vsi, std::string i_psu)
        : ComponentBlock(std::move(name)), p_(p), base_(base), inputs_{vsi + ".v_u", vsi + ".v_v", std::move(i_psu)} {}

    std::vector<std::string> state_names() const override { return {"v_psu", "xi_psu"}; }
    std::vector<std::string> algebraic_names() const override { return {"i_u", "i_v"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = psu_reduced_residuals({io.x(0), io.x(1)}, io.in2(0), io.in(2), p_, base_);
        f[0] = r.dx[0];
        f[1] = r.dx[1];
        g[0] = io.y(0) - r.i_uv_vsi.x();
        g[1] = io.y(1) - r.i_uv_vsi.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto r = psu_reduced_residuals({io.x(0), io.x(1)}, io.in2(0), io.in(2), p_, base_);
        out["g_eq"] = r.g_eq;
    }

private:
    PsuParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

/// Aggregated DC-DC converter and IT load. Inputs: PSU DC-port voltage and p_load (w).
class DcdcBlock final : public ComponentBlock {
public:
    DcdcBlock(std::string name, DcdcParams p, PerUnitBase base, std::string v_psu)
        : ComponentBlock(std::move(name)), p_(p), base_(base), inputs_{std::move(v_psu), "w"} {}

    std::vector<std::string> state_names() const override { return {"v_eq", "xi_eq"}; }
    std::vector<std::string> algebraic_names() const override { return {"i_psu"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = dcdc_reduced_residuals({io.x(0), io.x(1)}, io.in(1), io.in(0), p_, base_);
        f[0] = r.dx[0];
        f[1] = r.dx[1];
        g[0] = io.y(0) - r.i_psu;
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto r = dcdc_reduced_residuals({io.x(0), io.x(1)}, io.in(1), io.in(0), p_, base_);
        out["g_load"] = r.g_load;
        out["i_eq"] = r.i_eq;
        out["p_load"] = io.in(1);
    }

private:
    DcdcParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

/// Ideal source behind R + jX; owns the PCC voltage (r, i).
class InfiniteBusBlock final : public ComponentBlock {
public:
    InfiniteBusBlock(std::string name, InfiniteBusParams p, std::string i_r, std::string i_i)
        : ComponentBlock(std::move(name)), p_(p), inputs_{std::move(i_r), std::move(i_i)} {}

    std::vector<std::string> state_names() const override { return {}; }
    std::vector<std::string> algebraic_names() const override { return {"v_r", "v_i"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double>, std::span<double> g) const override {
        const Vec2 v = infinite_bus_closure(io.in2(0), p_);
        g[0] = io.y(0) - v.x();
        g[1] = io.y(1) - v.y();
    }

private:
    InfiniteBusParams p_;
    std::vector<std::string> inputs_;
};

}  // namespace dcpower::dcchain
