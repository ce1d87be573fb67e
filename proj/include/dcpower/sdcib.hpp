#pragma once

// Single data center on an infinite bus, plus the shared data-center attach
// helper and its closed-form steady state.

#include "dcpower/assembly.hpp"
#include "dcpower/dcchain.hpp"
#include "dcpower/errors.hpp"
#include "dcpower/params.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <string>

namespace dcpower {

/// Which data-center blocks to include; omitting one leaves a coupling unresolved.
struct DataCenterLayout {
    bool afe = true;
    bool dclink = true;
    bool vsi = true;
    bool psu = true;
    bool dcdc = true;
};

/// Adds the five data-center blocks ("afe", "dclink", "vsi", "psu", "dcdc") fed
/// from the PCC voltage variables v_r, v_i.
inline void add_datacenter(SystemModel::Builder& b, const DataCenterParams& p, const std::string& v_pcc_r,
                           const std::string& v_pcc_i, const DataCenterLayout& layout = {}) {
    const PerUnitBase base = p.base.base;
    using namespace dcchain;
    if (layout.dcdc) b.add(std::make_shared<DcdcBlock>("dcdc", p.dcdc, base, "psu.v_psu"));
    if (layout.psu) b.add(std::make_shared<PsuBlock>("psu", p.psu, base, "vsi", "dcdc.i_psu"));
    if (layout.vsi) b.add(std::make_shared<VsiBlock>("vsi", p.vsi, base, "dclink.v_dc_ups", "psu.i_u", "psu.i_v"));
    if (layout.dclink) b.add(std::make_shared<DcLinkBlock>("dclink", p.dclink, base, "afe", "vsi"));
    if (layout.afe) b.add(std::make_shared<AfeBlock>("afe", p.afe, base, v_pcc_r, v_pcc_i, "dclink.v_dc_ups"));
}

/// Steady state of the chain downstream of the AFE (DC-DC, PSU, VSI) at load p_load.
struct DownstreamSteadyState {
    std::map<std::string, double> states;   // global names
    std::map<std::string, double> algebraics;
    double converter_power = 0.0;  // v_dc * i_dc_out, power the AFE must deliver to the DC link
};

inline DownstreamSteadyState downstream_steady_state(const DataCenterParams& p, double p_load) {
    DownstreamSteadyState out;
    const double omega = p.base.base.omega_s;
    // DC-DC: v_eq at reference, i_eq = g_load v_eq
    const double v_eq = p.dcdc.v_eq_ref;
    const double i_eq = dcchain::load_conductance(p_load, v_eq) * v_eq;
    const double v_psu = p.psu.v_psu_ref;
    const double i_psu = v_eq / v_psu * i_eq;
    out.states["dcdc.v_eq"] = v_eq;
    out.states["dcdc.xi_eq"] = p.dcdc.ki_v > 0 ? i_eq / p.dcdc.ki_v : 0.0;
    out.algebraics["dcdc.i_psu"] = i_psu;

    // PSU: (g - r g^2) |v|^2 / (3 v_psu) = i_psu
    const double vu = p.vsi.vu_ref;
    const double k = 3.0 * v_psu * i_psu / (vu * vu);
    double g = k;
    if (p.psu.r_psu > 0.0) {
        const double disc = 1.0 - 4.0 * p.psu.r_psu * k;
        if (disc < 0.0) throw SolverError("initial_guess", "load exceeds the PSU array's deliverable power");
        g = (1.0 - std::sqrt(disc)) / (2.0 * p.psu.r_psu);
    }
    out.states["psu.v_psu"] = v_psu;
    out.states["psu.xi_psu"] = p.psu.ki_v > 0 ? g / p.psu.ki_v : 0.0;
    const Vec2 v_uv{vu, 0.0};
    const Vec2 i_load = g * v_uv;
    out.algebraics["psu.i_u"] = i_load.x();
    out.algebraics["psu.i_v"] = i_load.y();

    // VSI: capacitor and inductor balances with integrators absorbing the references
    const Vec2 i_cv = i_load - omega * p.vsi.c_vsi * jmul(v_uv);
    const Vec2 xi = i_load / p.vsi.ki_v;
    const Vec2 gamma = (v_uv + p.vsi.r_vsi * i_cv) / p.vsi.ki_c;
    const Vec2 v_cv = v_uv + p.vsi.r_vsi * i_cv - omega * p.vsi.l_vsi * jmul(i_cv);
    const double v_dc = p.afe.vdc_ref;
    const Vec2 m_uv = v_cv / v_dc;
    out.states["vsi.i_cv_u"] = i_cv.x();
    out.states["vsi.i_cv_v"] = i_cv.y();
    out.states["vsi.v_u"] = v_uv.x();
    out.states["vsi.v_v"] = v_uv.y();
    out.states["vsi.xi_u"] = xi.x();
    out.states["vsi.xi_v"] = xi.y();
    out.states["vsi.gamma_u"] = gamma.x();
    out.states["vsi.gamma_v"] = gamma.y();
    out.algebraics["vsi.m_u"] = m_uv.x();
    out.algebraics["vsi.m_v"] = m_uv.y();
    out.states["dclink.v_dc_ups"] = v_dc;
    out.converter_power = v_dc * m_uv.dot(i_cv);
    return out;
}

/// AFE steady state for a PCC voltage phasor (grid frame) and required converter power.
inline void afe_steady_state(const DataCenterParams& p, Complex v_pcc, double converter_power,
                             std::map<std::string, double>& states, std::map<std::string, double>& algebraics) {
    const double vp = std::abs(v_pcc);
    const double theta = std::arg(v_pcc);
    const double r = p.afe.r_afe;
    // (v_d - r i_d) i_d = P
    double i_d = converter_power / vp;
    if (r > 0.0) {
        const double disc = vp * vp - 4.0 * r * converter_power;
        if (disc < 0.0) throw SolverError("initial_guess", "PCC voltage too low for the requested power");
        i_d = (vp - std::sqrt(disc)) / (2.0 * r);
    }
    const Vec2 i_dq{i_d, 0.0};
    const double omega = p.base.base.omega_s;
    const double v_dc = p.afe.vdc_ref;
    const Vec2 v_dq{vp, 0.0};
    const Vec2 m_dq = (v_dq - r * i_dq + omega * p.afe.l_afe * jmul(i_dq)) / v_dc;
    const Vec2 gamma = (v_dq - r * i_dq) / p.afe.ki_c;
    states["afe.theta_pll"] = theta;
    states["afe.epsilon_pll"] = 0.0;
    states["afe.vq_pll"] = 0.0;
    states["afe.i_d"] = i_d;
    states["afe.i_q"] = 0.0;
    states["afe.xi_dc"] = p.afe.ki_dc > 0 ? i_d / p.afe.ki_dc : 0.0;
    states["afe.gamma_d"] = gamma.x();
    states["afe.gamma_q"] = gamma.y();
    algebraics["afe.m_d"] = m_dq.x();
    algebraics["afe.m_q"] = m_dq.y();
    const Vec2 i_ri = unrotate(FrameAngle{theta}, i_dq);
    algebraics["afe.i_r"] = i_ri.x();
    algebraics["afe.i_i"] = i_ri.y();
}

/// Scalar solve for the AFE current behind an infinite bus (PLL aligned, v_q = 0).
inline Complex infinite_bus_pcc_voltage(const InfiniteBusParams& g, double r_afe, double converter_power) {
    // v_dq = V e^{-j theta} - Z i_d with v_q = 0  ->  sin(theta) = -X i_d / V
    auto pcc = [&](double i_d) {
        const double s = -g.x_inf * i_d / g.v_inf;
        const double c = std::sqrt(std::max(0.0, 1.0 - s * s));
        const double v_d = g.v_inf * c - g.r_inf * i_d;
        return std::pair{v_d, std::atan2(s, c)};
    };
    double i_d = converter_power / g.v_inf;
    for (int it = 0; it < 60; ++it) {
        const double h = 1e-7;
        auto fn = [&](double i) { return (pcc(i).first - r_afe * i) * i - converter_power; };
        const double f0 = fn(i_d);
        const double d = (fn(i_d + h) - fn(i_d - h)) / (2.0 * h);
        const double step = f0 / d;
        i_d -= step;
        if (std::abs(step) < 1e-15) break;
    }
    auto [v_d, theta] = pcc(i_d);
    return std::polar(v_d, theta);
}

inline std::pair<Vector, Vector> to_vectors(const SystemModel& model, const std::map<std::string, double>& states,
                                            const std::map<std::string, double>& algebraics) {
    Vector x = Vector::Zero(static_cast<Eigen::Index>(model.n_x()));
    Vector y = Vector::Zero(static_cast<Eigen::Index>(model.n_y()));
    for (const auto& [name, v] : states)
        if (auto r = model.index().find(name); r && r->kind == VarRef::Kind::state) x(static_cast<Eigen::Index>(r->index)) = v;
    for (const auto& [name, v] : algebraics)
        if (auto r = model.index().find(name); r && r->kind == VarRef::Kind::algebraic) y(static_cast<Eigen::Index>(r->index)) = v;
    return {x, y};
}

/// Closed-form SDCIB equilibrium by global variable name.
inline DownstreamSteadyState sdcib_steady_state(const SdcibParams& params, double p_load) {
    auto ds = downstream_steady_state(params.dc, p_load);
    const Complex v_pcc = infinite_bus_pcc_voltage(params.grid, params.dc.afe.r_afe, ds.converter_power);
    afe_steady_state(params.dc, v_pcc, ds.converter_power, ds.states, ds.algebraics);
    ds.algebraics["grid.v_r"] = v_pcc.real();
    ds.algebraics["grid.v_i"] = v_pcc.imag();
    return ds;
}

/// SDCIB: the data-center chain behind R + jX from an ideal source. Output p_pcc.
inline SystemModel build_sdcib(const SdcibParams& params, const DataCenterLayout& layout = {}) {
    validate(params);
    SystemModel::Builder b("sdcib");
    add_datacenter(b, params.dc, "grid.v_r", "grid.v_i", layout);
    b.add(std::make_shared<dcchain::InfiniteBusBlock>("grid", params.grid, "afe.i_r", "afe.i_i"));
    b.output(power_channel("p_pcc", "grid.v_r", "grid.v_i", "afe.i_r", "afe.i_i"));
    b.disturbance("p_load");
    b.initializer([params](const SystemModel& m, double w) {
        const auto ss = sdcib_steady_state(params, w);
        return to_vectors(m, ss.states, ss.algebraics);
    });
    return b.build();
}

}  // namespace dcpower
