#pragma once

#include "dcpower/core.hpp"
#include "dcpower/errors.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace dcpower {

// Bandwidth-rule PI gains on the 60 Hz base at full precision. Gains rounded to 3-4
// digits move the fast AFE current-loop pair by about 0.16 Hz.
namespace gains {
inline constexpr double kBaseHz = 60.0;
constexpr double voltage_kp(double f_bw, double zeta, double c) { return 2.0 * zeta * f_bw / kBaseHz * c; }
constexpr double voltage_ki(double f_bw, double c) { return 2.0 * std::numbers::pi * f_bw * f_bw / kBaseHz * c; }
constexpr double current_kp(double f_bw, double zeta, double l, double r) { return voltage_kp(f_bw, zeta, l) - r; }
}  // namespace gains

// Each parameter struct exposes visit(f) with f(name, double&) so that the
// config layer can override by dotted name and the manifest can list values.

struct AfeParams {
    double l_afe = 0.05;
    double r_afe = 0.003;
    double kp_pll = gains::voltage_kp(20.0, 0.707, 1.0);
    double ki_pll = gains::voltage_ki(20.0, 1.0);
    double omega_lp = 2.0 * std::numbers::pi * 100.0;
    double vdc_ref = 1.0;
    double kp_dc = gains::voltage_kp(5.0, 1.0, 2.0);  // plant is dclink.c_dc
    double ki_dc = gains::voltage_ki(5.0, 2.0);
    double kp_c = gains::current_kp(200.0, 0.707, l_afe, r_afe);
    double ki_c = gains::voltage_ki(200.0, l_afe);

    template <class F>
    void visit(F&& f) {
        f("l_afe", l_afe); f("r_afe", r_afe); f("kp_pll", kp_pll); f("ki_pll", ki_pll);
        f("omega_lp", omega_lp); f("vdc_ref", vdc_ref); f("kp_dc", kp_dc); f("ki_dc", ki_dc);
        f("kp_c", kp_c); f("ki_c", ki_c);
    }
};

struct VsiParams {
    double l_vsi = 0.05;
    double r_vsi = 0.003;
    double c_vsi = 0.2;
    double vu_ref = 1.0;
    // Voltage PI at f_bw = 80 Hz, zeta = 1, not the 100 Hz design (0.667, 209.4).
    // The reference modes and the 5.5 Hz POA peak need the 80 Hz design.
    double kp_v = gains::voltage_kp(80.0, 1.0, c_vsi);
    double ki_v = gains::voltage_ki(80.0, c_vsi);
    double kp_c = gains::current_kp(400.0, 1.0, l_vsi, r_vsi);
    double ki_c = gains::voltage_ki(400.0, l_vsi);

    template <class F>
    void visit(F&& f) {
        f("l_vsi", l_vsi); f("r_vsi", r_vsi); f("c_vsi", c_vsi); f("vu_ref", vu_ref);
        f("kp_v", kp_v); f("ki_v", ki_v); f("kp_c", kp_c); f("ki_c", ki_c);
    }
};

struct DcLinkParams {
    double c_dc = 2.0;

    template <class F>
    void visit(F&& f) { f("c_dc", c_dc); }
};

struct PsuParams {
    double c_psu = 2.0;
    double r_psu = 0.005;
    double v_psu_ref = 1.0;
    double kp_v = gains::voltage_kp(10.0, 1.0, c_psu);
    double ki_v = gains::voltage_ki(10.0, c_psu);
    // full-order extras
    double l_psu = 0.05;
    double kp_c = gains::current_kp(1000.0, 1.0, l_psu, r_psu);
    double ki_c = gains::voltage_ki(1000.0, l_psu);

    template <class F>
    void visit(F&& f) {
        f("c_psu", c_psu); f("r_psu", r_psu); f("v_psu_ref", v_psu_ref); f("kp_v", kp_v); f("ki_v", ki_v);
        f("l_psu", l_psu); f("kp_c", kp_c); f("ki_c", ki_c);
    }
};

struct DcdcParams {
    double c_eq = 0.2;
    double v_eq_ref = 0.5;
    double kp_v = gains::voltage_kp(100.0, 1.0, c_eq);
    double ki_v = gains::voltage_ki(100.0, c_eq);
    // full-order extras
    double l_eq = 0.05;
    double kp_c = gains::current_kp(1000.0, 1.0, l_eq, 0.005);  // loop resistance r_psu
    double ki_c = gains::voltage_ki(1000.0, l_eq);

    template <class F>
    void visit(F&& f) {
        f("c_eq", c_eq); f("v_eq_ref", v_eq_ref); f("kp_v", kp_v); f("ki_v", ki_v);
        f("l_eq", l_eq); f("kp_c", kp_c); f("ki_c", ki_c);
    }
};

struct InfiniteBusParams {
    double v_inf = 1.0;
    double r_inf = 0.02;
    double x_inf = 0.19;

    double scr() const { return 1.0 / std::hypot(r_inf, x_inf); }

    template <class F>
    void visit(F&& f) { f("v_inf", v_inf); f("r_inf", r_inf); f("x_inf", x_inf); }
};

struct BaseParams {
    PerUnitBase base;

    template <class F>
    void visit(F&& f) { f("omega_b", base.omega_b); f("omega_s", base.omega_s); f("s_base", base.s_base); }
};

/// Data-center chain parameter set; defaults reproduce the SDCIB table.
struct DataCenterParams {
    BaseParams base;
    AfeParams afe;
    DcLinkParams dclink;
    VsiParams vsi;
    PsuParams psu;
    DcdcParams dcdc;
    double p_load = 0.5;

    template <class F>
    void visit(F&& f) {
        base.visit([&](const char* n, double& v) { f(std::string("base.") + n, v); });
        afe.visit([&](const char* n, double& v) { f(std::string("afe.") + n, v); });
        dclink.visit([&](const char* n, double& v) { f(std::string("dclink.") + n, v); });
        vsi.visit([&](const char* n, double& v) { f(std::string("vsi.") + n, v); });
        psu.visit([&](const char* n, double& v) { f(std::string("psu.") + n, v); });
        dcdc.visit([&](const char* n, double& v) { f(std::string("dcdc.") + n, v); });
        f("p_load", p_load);
    }
};

struct SdcibParams {
    DataCenterParams dc;
    InfiniteBusParams grid;

    template <class F>
    void visit(F&& f) {
        dc.visit([&](const std::string& n, double& v) { f("dcchain." + n, v); });
        grid.visit([&](const char* n, double& v) { f(std::string("grid.") + n, v); });
    }
};

struct SmParams {
    double h = 3.0;
    double d = 0.0;
    double x_d = 0.1460;
    double x_q = 0.0969;
    double x_dp = 0.0608;
    double x_qp = 0.0969;
    double t_d0p = 8.96;
    double t_q0p = 0.31;
    double k_a = 5.0;
    double t_a = 0.2;
    double k_e = 1.0;
    double t_e = 0.314;
    double k_f = 0.063;
    double t_f = 0.35;
    double a_e = 0.0039;
    double b_e = 1.555;
    double r = 0.15;
    double t_sv = 0.1;
    double t_ch = 0.5;
    // setpoints, filled from the power flow
    double v_ref = 1.0;
    double p_ref = 0.0;

    template <class F>
    void visit(F&& f) {
        f("h", h); f("d", d); f("x_d", x_d); f("x_q", x_q); f("x_dp", x_dp); f("x_qp", x_qp);
        f("t_d0p", t_d0p); f("t_q0p", t_q0p); f("k_a", k_a); f("t_a", t_a); f("k_e", k_e); f("t_e", t_e);
        f("k_f", k_f); f("t_f", t_f); f("a_e", a_e); f("b_e", b_e); f("r", r); f("t_sv", t_sv); f("t_ch", t_ch);
        f("v_ref", v_ref); f("p_ref", p_ref);
    }
};

struct GfmParams {
    double l_f = 0.08;
    double r_f = 0.003;
    double c_f = 0.074;
    double l_g = 0.2;
    double r_g = 0.01;
    double kp_droop = 0.02;
    double omega_z = 20.0;
    double kq_droop = 0.05;
    double omega_f = 50.0;
    double r_v = 0.0;
    double l_v = 0.2;
    double kp_v = 0.3947;
    double ki_v = 49.5953;
    double kp_c = 0.3771;
    double ki_c = 335.1032;
    // setpoints, filled from the power flow
    double omega_ref = 1.0;
    double p_ref = 0.0;
    double q_ref = 0.0;
    double v_ref = 1.0;

    template <class F>
    void visit(F&& f) {
        f("l_f", l_f); f("r_f", r_f); f("c_f", c_f); f("l_g", l_g); f("r_g", r_g);
        f("kp_droop", kp_droop); f("omega_z", omega_z); f("kq_droop", kq_droop); f("omega_f", omega_f);
        f("r_v", r_v); f("l_v", l_v); f("kp_v", kp_v); f("ki_v", ki_v); f("kp_c", kp_c); f("ki_c", ki_c);
        f("omega_ref", omega_ref); f("p_ref", p_ref); f("q_ref", q_ref); f("v_ref", v_ref);
    }
};

struct GflParams {
    double l_f = 0.08;
    double r_f = 0.003;
    double c_f = 0.074;
    double l_g = 0.1;
    double r_g = 0.01;
    double kp_pll = 0.05;
    double ki_pll = 1.42;
    double omega_lp = 376.99;
    double kp_p = 0.01;
    double ki_p = 0.12;
    double kp_q = 0.01;
    double ki_q = 0.12;
    double omega_z = 41.47;
    double omega_f = 41.47;
    double kp_c = 0.15;
    double ki_c = 0.267;
    // setpoints, filled from the power flow
    double p_ref = 0.0;
    double q_ref = 0.0;

    template <class F>
    void visit(F&& f) {
        f("l_f", l_f); f("r_f", r_f); f("c_f", c_f); f("l_g", l_g); f("r_g", r_g);
        f("kp_pll", kp_pll); f("ki_pll", ki_pll); f("omega_lp", omega_lp);
        f("kp_p", kp_p); f("ki_p", ki_p); f("kp_q", kp_q); f("ki_q", ki_q);
        f("omega_z", omega_z); f("omega_f", omega_f); f("kp_c", kp_c); f("ki_c", ki_c);
        f("p_ref", p_ref); f("q_ref", q_ref);
    }
};

/// 9-bus scenario: data center at bus 8 plus the three grid devices. Setpoints in
/// the device structs are overwritten from the power flow when the model is built.
struct NinebusParams {
    DataCenterParams dc;
    SmParams sm;
    GfmParams gfm;
    GflParams gfl;
    double p_gen2 = 1.63;  // GFM dispatch
    double p_gen3 = 0.85;  // GFL dispatch
    double v_gen1 = 1.04;
    double v_gen2 = 1.025;
    double v_gen3 = 1.025;

    template <class F>
    void visit(F&& f) {
        dc.visit([&](const std::string& n, double& v) { f("dcchain." + n, v); });
        sm.visit([&](const char* n, double& v) { f(std::string("sm.") + n, v); });
        gfm.visit([&](const char* n, double& v) { f(std::string("gfm.") + n, v); });
        gfl.visit([&](const char* n, double& v) { f(std::string("gfl.") + n, v); });
        f("network.p_gen2", p_gen2); f("network.p_gen3", p_gen3);
        f("network.v_gen1", v_gen1); f("network.v_gen2", v_gen2); f("network.v_gen3", v_gen3);
    }
};

/// Collects every (dotted name -> value) pair of a visitable parameter set.
template <class P>
std::map<std::string, double> flatten(P& params) {
    std::map<std::string, double> out;
    params.visit([&](const std::string& n, double& v) { out[n] = v; });
    return out;
}

/// Sets one parameter by dotted name; unknown names are rejected.
template <class P>
void set_parameter(P& params, const std::string& name, double value) {
    bool found = false;
    params.visit([&](const std::string& n, double& v) {
        if (n == name) {
            v = value;
            found = true;
        }
    });
    if (!found) throw ParameterError(name, "unknown parameter");
    if (!std::isfinite(value)) throw ParameterError(name, "must be finite");
}

inline void validate(const DataCenterParams& p) {
    auto positive = [](const char* n, double v) {
        if (!(v > 0.0)) throw ParameterError(n, "must be positive");
    };
    auto nonneg = [](const char* n, double v) {
        if (!(v >= 0.0)) throw ParameterError(n, "must be nonnegative");
    };
    positive("base.omega_b", p.base.base.omega_b);
    positive("base.omega_s", p.base.base.omega_s);
    positive("base.s_base", p.base.base.s_base);
    positive("afe.l_afe", p.afe.l_afe);
    nonneg("afe.r_afe", p.afe.r_afe);
    positive("afe.omega_lp", p.afe.omega_lp);
    positive("afe.vdc_ref", p.afe.vdc_ref);
    for (auto [n, v] : {std::pair{"afe.kp_pll", p.afe.kp_pll}, {"afe.ki_pll", p.afe.ki_pll}, {"afe.kp_dc", p.afe.kp_dc},
                        {"afe.ki_dc", p.afe.ki_dc}, {"afe.kp_c", p.afe.kp_c}, {"afe.ki_c", p.afe.ki_c},
                        {"vsi.kp_v", p.vsi.kp_v}, {"vsi.ki_v", p.vsi.ki_v}, {"vsi.kp_c", p.vsi.kp_c},
                        {"vsi.ki_c", p.vsi.ki_c}, {"psu.kp_v", p.psu.kp_v}, {"psu.ki_v", p.psu.ki_v},
                        {"dcdc.kp_v", p.dcdc.kp_v}, {"dcdc.ki_v", p.dcdc.ki_v}})
        nonneg(n, v);
    positive("dclink.c_dc", p.dclink.c_dc);
    positive("vsi.l_vsi", p.vsi.l_vsi);
    nonneg("vsi.r_vsi", p.vsi.r_vsi);
    positive("vsi.c_vsi", p.vsi.c_vsi);
    positive("psu.c_psu", p.psu.c_psu);
    nonneg("psu.r_psu", p.psu.r_psu);
    positive("psu.v_psu_ref", p.psu.v_psu_ref);
    positive("dcdc.c_eq", p.dcdc.c_eq);
    positive("dcdc.v_eq_ref", p.dcdc.v_eq_ref);
    nonneg("p_load", p.p_load);
}

inline void validate(const SdcibParams& p) {
    validate(p.dc);
    if (!(std::hypot(p.grid.r_inf, p.grid.x_inf) > 0.0)) throw ParameterError("grid.x_inf", "grid impedance must be nonzero");
    if (!(p.grid.v_inf > 0.0)) throw ParameterError("grid.v_inf", "must be positive");
}

inline void validate(const NinebusParams& p) {
    validate(p.dc);
    auto positive = [](const char* n, double v) {
        if (!(v > 0.0)) throw ParameterError(n, "must be positive");
    };
    positive("sm.h", p.sm.h); positive("sm.x_dp", p.sm.x_dp); positive("sm.x_qp", p.sm.x_qp);
    positive("sm.t_d0p", p.sm.t_d0p); positive("sm.t_q0p", p.sm.t_q0p); positive("sm.t_a", p.sm.t_a);
    positive("sm.t_e", p.sm.t_e); positive("sm.t_f", p.sm.t_f); positive("sm.r", p.sm.r);
    positive("sm.t_sv", p.sm.t_sv); positive("sm.t_ch", p.sm.t_ch); positive("sm.k_a", p.sm.k_a);
    positive("gfm.l_f", p.gfm.l_f); positive("gfm.c_f", p.gfm.c_f); positive("gfm.l_g", p.gfm.l_g);
    positive("gfm.ki_v", p.gfm.ki_v); positive("gfm.ki_c", p.gfm.ki_c);
    positive("gfl.l_f", p.gfl.l_f); positive("gfl.c_f", p.gfl.c_f); positive("gfl.l_g", p.gfl.l_g);
    positive("gfl.ki_p", p.gfl.ki_p); positive("gfl.ki_q", p.gfl.ki_q); positive("gfl.ki_c", p.gfl.ki_c);
    positive("network.v_gen1", p.v_gen1); positive("network.v_gen2", p.v_gen2); positive("network.v_gen3", p.v_gen3);
}

}  // namespace dcpower
