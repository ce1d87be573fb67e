#pragma once

// Full-order per-phase PSU array and DC-DC stage, used to check the QSS and
// common-DC reductions against a step in server load.

#include "dcpower/assembly.hpp"
#include "dcpower/dcchain.hpp"
#include "dcpower/equilibrium.hpp"
#include "dcpower/params.hpp"
#include "dcpower/sdcib.hpp"
#include "dcpower/timedomain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace dcpower::fullorder {

using Abc = std::array<double, 3>;

inline constexpr double kSignSmoothing = 1e-3;  // tanh(v / eps) stands in for sgn(v)
inline constexpr std::array<char, 3> kPhases{'a', 'b', 'c'};

/// Power-invariant Park rows at angle theta. Rotation sense matches the VSI's uv
/// frame, where d/dt x_uv = T dx_abc/dt + omega J x_uv.
inline std::array<Abc, 2> park_rows(double theta) {
    const double k = std::sqrt(2.0 / 3.0);
    const double s = 2.0 * std::numbers::pi / 3.0;
    return {Abc{k * std::cos(theta), k * std::cos(theta - s), k * std::cos(theta + s)},
            Abc{k * std::sin(theta), k * std::sin(theta - s), k * std::sin(theta + s)}};
}

inline Abc abc_from_uv(double theta, const Vec2& x) {
    const auto t = park_rows(theta);
    return {t[0][0] * x.x() + t[1][0] * x.y(), t[0][1] * x.x() + t[1][1] * x.y(), t[0][2] * x.x() + t[1][2] * x.y()};
}

inline Vec2 uv_from_abc(double theta, const Abc& x) {
    const auto t = park_rows(theta);
    return {t[0][0] * x[0] + t[0][1] * x[1] + t[0][2] * x[2], t[1][0] * x[0] + t[1][1] * x[1] + t[1][2] * x[2]};
}

inline double smooth_sign(double v) { return std::tanh(v / kSignSmoothing); }

// ---------------------------------------------------------------- PSU array, per phase

struct PsuFullState {
    Abc i_rec{};
    Abc v_psu{};
    Abc xi{};
    Abc gamma{};

    static constexpr std::size_t size = 12;
    static PsuFullState from(std::span<const double> s) {
        PsuFullState out;
        for (std::size_t k = 0; k < 3; ++k) {
            out.i_rec[k] = s[k];
            out.v_psu[k] = s[3 + k];
            out.xi[k] = s[6 + k];
            out.gamma[k] = s[9 + k];
        }
        return out;
    }
};

struct PsuFullResult {
    std::array<double, PsuFullState::size> dx{};
    Abc i_vsi{};  // phase currents drawn from the AC bus
    Abc d{};
    int clamped = 0;  // phases whose duty command hit a limit
};

inline PsuFullResult psu_full_residuals(const PsuFullState& s, const Abc& v_vsi, const Abc& i_psu, const PsuParams& p,
                                        const PerUnitBase& base) {
    PsuFullResult r;
    const double wb = base.omega_b;
    for (std::size_t k = 0; k < 3; ++k) {
        const double sg = smooth_sign(v_vsi[k]);
        const double v_rec = sg * v_vsi[k];
        const double g_eq = p.kp_v * (p.v_psu_ref - s.v_psu[k]) + p.ki_v * s.xi[k];
        const double i_ref = g_eq * v_rec;
        const double d_raw = p.kp_c * (i_ref - s.i_rec[k]) + p.ki_c * s.gamma[k];
        r.d[k] = std::clamp(d_raw, 0.0, 1.0);
        if (r.d[k] != d_raw) ++r.clamped;
        const double boost = 1.0 - r.d[k];
        r.dx[k] = wb / p.l_psu * (v_rec - boost * s.v_psu[k] - p.r_psu * s.i_rec[k]);
        r.dx[3 + k] = wb / p.c_psu * (boost * s.i_rec[k] - i_psu[k]);
        r.dx[6 + k] = p.v_psu_ref - s.v_psu[k];
        r.dx[9 + k] = i_ref - s.i_rec[k];
        r.i_vsi[k] = sg * s.i_rec[k];
    }
    return r;
}

// ---------------------------------------------------------------- DC-DC stage with inner current loop

struct DcdcFullState {
    double i_eq = 0.0;
    double v_o = 0.0;
    double xi = 0.0;
    double gamma = 0.0;
};

struct DcdcFullResult {
    std::array<double, 4> dx{};
    double i_psu = 0.0;
    double d = 0.0;
    bool clamped = false;
};

inline DcdcFullResult dcdc_full_residuals(const DcdcFullState& s, double v_psu, double p_load, const DcdcParams& p,
                                          const PerUnitBase& base) {
    dcchain::require_positive(v_psu, "dcdc", "v_psu", "nonpositive PSU DC-port voltage");
    DcdcFullResult r;
    const double wb = base.omega_b;
    const double g_load = dcchain::load_conductance(p_load, p.v_eq_ref);
    const double i_ref = p.kp_v * (p.v_eq_ref - s.v_o) + p.ki_v * s.xi;
    const double d_raw = p.kp_c * (i_ref - s.i_eq) + p.ki_c * s.gamma;
    r.d = std::clamp(d_raw, 0.0, 1.0);
    r.clamped = r.d != d_raw;
    r.i_psu = r.d * s.i_eq;
    r.dx = {wb / p.l_eq * (r.d * v_psu - s.v_o), wb / p.c_eq * (s.i_eq - g_load * s.v_o), p.v_eq_ref - s.v_o,
            i_ref - s.i_eq};
    return r;
}

// ---------------------------------------------------------------- blocks

/// VSI angle, d theta / dt = omega_b * omega_s. Gives the full model its explicit time dependence.
class ClockBlock final : public ComponentBlock {
public:
    ClockBlock(std::string name, PerUnitBase base) : ComponentBlock(std::move(name)), base_(base) {}
    std::vector<std::string> state_names() const override { return {"theta_vsi"}; }
    void evaluate(const BlockIo&, std::span<double> f, std::span<double>) const override {
        f[0] = base_.omega_b * base_.omega_s;
    }

private:
    PerUnitBase base_;
};

/// Per-phase PSU array. Inputs: VSI capacitor voltage (u, v), VSI angle, and the three
/// DC-DC input currents. Owns the AC-bus current (u, v) like the reduced block.
class PsuFullBlock final : public ComponentBlock {
public:
    PsuFullBlock(std::string name, PsuParams p, PerUnitBase base, std::string vsi, std::string theta,
                 std::array<std::string, 3> i_psu)
        : ComponentBlock(std::move(name)), p_(p), base_(base),
          inputs_{vsi + ".v_u", vsi + ".v_v", std::move(theta), i_psu[0], i_psu[1], i_psu[2]} {}

    std::vector<std::string> state_names() const override {
        std::vector<std::string> out;
        for (const char* stem : {"i_rec_", "v_psu_", "xi_", "gamma_"})
            for (char ph : kPhases) out.push_back(std::string(stem) + ph);
        return out;
    }
    std::vector<std::string> algebraic_names() const override { return {"i_u", "i_v"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const double theta = io.in(2);
        const auto r = psu_full_residuals(PsuFullState::from(io.x()), abc_from_uv(theta, io.in2(0)),
                                          {io.in(3), io.in(4), io.in(5)}, p_, base_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        const Vec2 i_uv = uv_from_abc(theta, r.i_vsi);
        g[0] = io.y(0) - i_uv.x();
        g[1] = io.y(1) - i_uv.y();
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const double theta = io.in(2);
        const auto s = PsuFullState::from(io.x());
        const Abc i_psu{io.in(3), io.in(4), io.in(5)};
        const auto r = psu_full_residuals(s, abc_from_uv(theta, io.in2(0)), i_psu, p_, base_);
        out["v_psu"] = (s.v_psu[0] + s.v_psu[1] + s.v_psu[2]) / 3.0;
        out["p_dc"] = s.v_psu[0] * i_psu[0] + s.v_psu[1] * i_psu[1] + s.v_psu[2] * i_psu[2];
        out["duty_clamped"] = r.clamped;
    }

private:
    PsuParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

class DcdcFullBlock final : public ComponentBlock {
public:
    DcdcFullBlock(std::string name, DcdcParams p, PerUnitBase base, std::string v_psu)
        : ComponentBlock(std::move(name)), p_(p), base_(base), inputs_{std::move(v_psu), "w"} {}

    std::vector<std::string> state_names() const override { return {"i_eq", "v_eq", "xi_eq", "gamma_eq"}; }
    std::vector<std::string> algebraic_names() const override { return {"i_psu"}; }
    std::vector<std::string> input_names() const override { return inputs_; }

    void evaluate(const BlockIo& io, std::span<double> f, std::span<double> g) const override {
        const auto r = dcdc_full_residuals({io.x(0), io.x(1), io.x(2), io.x(3)}, io.in(0), io.in(1), p_, base_);
        std::copy(r.dx.begin(), r.dx.end(), f.begin());
        g[0] = io.y(0) - r.i_psu;
    }

    void observe(const BlockIo& io, SignalMap& out) const override {
        const auto r = dcdc_full_residuals({io.x(0), io.x(1), io.x(2), io.x(3)}, io.in(0), io.in(1), p_, base_);
        out["d_eq"] = r.d;
        out["duty_clamped"] = r.clamped ? 1.0 : 0.0;
    }

private:
    DcdcParams p_;
    PerUnitBase base_;
    std::vector<std::string> inputs_;
};

// ---------------------------------------------------------------- assembly

/// Reduced-model equilibrium mapped onto the full-order states at theta_vsi = 0,
/// with each inner current loop placed at its quasi-steady operating point.
inline DownstreamSteadyState fullorder_initial_state(const SdcibParams& params, double p_load) {
    auto ss = sdcib_steady_state(params, p_load);
    const auto& psu = params.dc.psu;
    const auto& dcdc = params.dc.dcdc;
    const double v_psu = ss.states.at("psu.v_psu");
    const double xi_psu = ss.states.at("psu.xi_psu");
    const double g_eq = psu.kp_v * (psu.v_psu_ref - v_psu) + psu.ki_v * xi_psu;
    const Abc v_abc = abc_from_uv(0.0, {ss.states.at("vsi.v_u"), ss.states.at("vsi.v_v")});
    const double v_eq = ss.states.at("dcdc.v_eq");
    const double i_eq = dcchain::load_conductance(p_load, dcdc.v_eq_ref) * v_eq;
    const double d_eq = v_eq / v_psu;
    for (std::size_t k = 0; k < 3; ++k) {
        const std::string ph(1, kPhases[k]);
        const double v_rec = smooth_sign(v_abc[k]) * v_abc[k];
        const double i_rec = g_eq * v_rec;
        const double d = 1.0 - (v_rec - psu.r_psu * i_rec) / v_psu;
        ss.states["psu.i_rec_" + ph] = i_rec;
        ss.states["psu.v_psu_" + ph] = v_psu;
        ss.states["psu.xi_" + ph] = xi_psu;
        ss.states["psu.gamma_" + ph] = d / psu.ki_c;
        const std::string dc = "dcdc_" + ph;
        ss.states[dc + ".i_eq"] = i_eq;
        ss.states[dc + ".v_eq"] = v_eq;
        ss.states[dc + ".xi_eq"] = ss.states.at("dcdc.xi_eq");
        ss.states[dc + ".gamma_eq"] = d_eq / dcdc.ki_c;
        ss.algebraics[dc + ".i_psu"] = d_eq * i_eq;
    }
    ss.states["clock.theta_vsi"] = 0.0;
    return ss;
}

/// SDCIB with the full-order PSU array and one DC-DC stage per phase.
inline SystemModel build_sdcib_fullorder(const SdcibParams& params) {
    validate(params);
    const PerUnitBase base = params.dc.base.base;
    SystemModel::Builder b("sdcib_fullorder");
    DataCenterLayout layout;
    layout.psu = false;
    layout.dcdc = false;
    for (char ph : kPhases) {
        const std::string s(1, ph);
        b.add(std::make_shared<DcdcFullBlock>("dcdc_" + s, params.dc.dcdc, base, "psu.v_psu_" + s));
    }
    b.add(std::make_shared<ClockBlock>("clock", base));
    b.add(std::make_shared<PsuFullBlock>("psu", params.dc.psu, base, "vsi", "clock.theta_vsi",
                                         std::array<std::string, 3>{"dcdc_a.i_psu", "dcdc_b.i_psu", "dcdc_c.i_psu"}));
    add_datacenter(b, params.dc, "grid.v_r", "grid.v_i", layout);
    b.add(std::make_shared<dcchain::InfiniteBusBlock>("grid", params.grid, "afe.i_r", "afe.i_i"));
    b.output(power_channel("p_pcc", "grid.v_r", "grid.v_i", "afe.i_r", "afe.i_i"));
    b.disturbance("p_load");
    b.initializer([params](const SystemModel& m, double w) {
        const auto ss = fullorder_initial_state(params, w);
        return to_vectors(m, ss.states, ss.algebraics);
    });
    return b.build();
}

// ---------------------------------------------------------------- reduction check

struct ValidationScenario {
    double p_from = 0.5;
    double p_to = 0.6;
    double t_step = 0.5;     // leaves the full model time to reach its periodic state
    double t_end = 1.5;
    double dt_full = 50e-6;
    double dt_reduced = 1e-3;
    double spectrum_window = 0.5;  // seconds at the end of the run
};

struct ValidationReport {
    std::vector<double> t;  // reduced-model grid
    std::vector<double> p_pcc_full, p_pcc_reduced;
    std::vector<double> p_vsi_full, p_vsi_reduced;
    std::vector<double> v_psu_full, v_psu_reduced;  // phase a of the full array
    double max_dp_pcc = 0.0;  // over [t_step, t_end]
    Spectrum v_psu_spectrum_full, v_psu_spectrum_reduced, p_vsi_spectrum_full;
    double ripple_120_full = 0.0, ripple_120_reduced = 0.0, ripple_360_p_vsi = 0.0;
    IntegratorStats full_stats, reduced_stats;
};

inline ValidationReport validate_reduction(const SdcibParams& params, const ValidationScenario& sc = {}) {
    const auto input = InputSignal::step(sc.t_step, sc.p_from, sc.p_to);
    const double f_line = params.dc.base.base.omega_b / (2.0 * std::numbers::pi);

    const auto reduced = build_sdcib(params);
    const auto op = solve_equilibrium(reduced, sc.p_from);
    SimOptions ro;
    ro.t_end = sc.t_end;
    ro.dt = sc.dt_reduced;
    ro.signals = {"vsi.p_vsi", "psu.v_psu"};
    const auto tr_red = simulate(reduced, op, input, ro);

    const auto full = build_sdcib_fullorder(params);
    const auto [x0, y0] = full.initial_guess(sc.p_from);
    SimOptions fo;
    fo.t_end = sc.t_end;
    fo.dt = sc.dt_full;
    fo.signals = {"vsi.p_vsi", "psu.v_psu_a"};
    const auto tr_full = simulate(full, x0, y0, input, fo);

    ValidationReport rep;
    rep.full_stats = tr_full.stats;
    rep.reduced_stats = tr_red.stats;
    rep.t = tr_red.t;
    const auto at = [&](const std::string& name) {
        return InputSignal::trace(tr_full.t, tr_full.column(name));
    };
    const auto p_full = at("p_pcc"), pv_full = at("vsi.p_vsi"), v_full = at("psu.v_psu_a");
    for (std::size_t k = 0; k < tr_red.t.size(); ++k) {
        const double t = tr_red.t[k];
        rep.p_pcc_full.push_back(p_full(t));
        rep.p_vsi_full.push_back(pv_full(t));
        rep.v_psu_full.push_back(v_full(t));
        rep.p_pcc_reduced.push_back(tr_red.column("p_pcc")[k]);
        rep.p_vsi_reduced.push_back(tr_red.column("vsi.p_vsi")[k]);
        rep.v_psu_reduced.push_back(tr_red.column("psu.v_psu")[k]);
    }
    // Compare on the fine grid so that ripple between coarse samples is not missed.
    const auto p_red = InputSignal::trace(tr_red.t, tr_red.column("p_pcc"));
    for (std::size_t k = 0; k < tr_full.t.size(); ++k)
        if (tr_full.t[k] >= sc.t_step)
            rep.max_dp_pcc = std::max(rep.max_dp_pcc, std::abs(tr_full.column("p_pcc")[k] - p_red(tr_full.t[k])));

    const double ta = sc.t_end - sc.spectrum_window;
    rep.v_psu_spectrum_full = spectrum(tr_full, "psu.v_psu_a", ta, sc.t_end, 0.0, true);
    rep.v_psu_spectrum_reduced = spectrum(tr_red, "psu.v_psu", ta, sc.t_end, 0.0, true);
    rep.p_vsi_spectrum_full = spectrum(tr_full, "vsi.p_vsi", ta, sc.t_end, 0.0, true);
    rep.ripple_120_full = rep.v_psu_spectrum_full.at(2.0 * f_line);
    rep.ripple_120_reduced = rep.v_psu_spectrum_reduced.at(2.0 * f_line);
    rep.ripple_360_p_vsi = rep.p_vsi_spectrum_full.at(6.0 * f_line);
    return rep;
}

}  // namespace dcpower::fullorder
