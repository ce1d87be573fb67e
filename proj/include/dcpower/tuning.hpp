#pragma once

#include "dcpower/errors.hpp"
#include "dcpower/params.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

namespace dcpower::tuning {

struct VoltagePlant {
    double c;  // effective capacitance (p.u.)
};
struct CurrentPlant {
    double l;  // loop inductance (p.u.)
    double r;  // loop resistance (p.u.)
};
struct PllPlant {};

using Plant = std::variant<VoltagePlant, CurrentPlant, PllPlant>;

struct TuningSpec {
    double f_bw = 0.0;  // Hz
    double zeta = 0.0;
    Plant plant = PllPlant{};
};

struct PiGains {
    double kp = 0.0;
    double ki = 0.0;
};

/// Bandwidth-based PI synthesis: match the loop to s^2 + 2 zeta wn s + wn^2 with wn = 2 pi f_bw.
inline PiGains tune(const TuningSpec& spec, double omega_b) {
    if (!(spec.f_bw > 0.0)) throw ParameterError("f_bw", "must be positive");
    if (!(spec.zeta > 0.0)) throw ParameterError("zeta", "must be positive");
    if (!(omega_b > 0.0)) throw ParameterError("omega_b", "must be positive");
    const double wn = 2.0 * std::numbers::pi * spec.f_bw;

    struct Visitor {
        double wn, zeta, wb;
        PiGains operator()(const VoltagePlant& p) const {
            if (!(p.c > 0.0)) throw ParameterError("C", "must be positive");
            return {2.0 * zeta * wn * p.c / wb, wn * wn * p.c / wb};
        }
        PiGains operator()(const CurrentPlant& p) const {
            if (!(p.l > 0.0)) throw ParameterError("L", "must be positive");
            const double kp = 2.0 * zeta * wn * p.l / wb - p.r;
            if (!(kp > 0.0)) throw ParameterError("R", "current-loop kp <= 0; resistance too large for the target bandwidth");
            return {kp, wn * wn * p.l / wb};
        }
        PiGains operator()(const PllPlant&) const { return {2.0 * zeta * wn / wb, wn * wn / wb}; }
    };
    return std::visit(Visitor{wn, spec.zeta, omega_b}, spec.plant);
}

inline std::string plant_kind(const Plant& p) {
    if (std::holds_alternative<VoltagePlant>(p)) return "voltage";
    if (std::holds_alternative<CurrentPlant>(p)) return "current";
    return "pll";
}

/// A controller of the data-center chain and the loop target it was tuned for.
struct NamedLoop {
    std::string name;  // dotted parameter stem, e.g. "vsi" for vsi.kp_v / vsi.ki_v
    std::string kp;
    std::string ki;
    TuningSpec spec;
};

/// Loop targets behind the default data-center gains. The current loops of the
/// full-order PSU and DC-DC stages use r_psu as the loop resistance.
inline std::vector<NamedLoop> datacenter_loops(const DataCenterParams& p) {
    return {
        {"afe.pll", "afe.kp_pll", "afe.ki_pll", {20.0, 0.707, PllPlant{}}},
        {"afe.dc", "afe.kp_dc", "afe.ki_dc", {5.0, 1.0, VoltagePlant{p.dclink.c_dc}}},
        {"afe.current", "afe.kp_c", "afe.ki_c", {200.0, 0.707, CurrentPlant{p.afe.l_afe, p.afe.r_afe}}},
        {"vsi.voltage", "vsi.kp_v", "vsi.ki_v", {80.0, 1.0, VoltagePlant{p.vsi.c_vsi}}},
        {"vsi.current", "vsi.kp_c", "vsi.ki_c", {400.0, 1.0, CurrentPlant{p.vsi.l_vsi, p.vsi.r_vsi}}},
        {"psu.voltage", "psu.kp_v", "psu.ki_v", {10.0, 1.0, VoltagePlant{p.psu.c_psu}}},
        {"dcdc.voltage", "dcdc.kp_v", "dcdc.ki_v", {100.0, 1.0, VoltagePlant{p.dcdc.c_eq}}},
        {"psu.current", "psu.kp_c", "psu.ki_c", {1000.0, 1.0, CurrentPlant{p.psu.l_psu, p.psu.r_psu}}},
        {"dcdc.current", "dcdc.kp_c", "dcdc.ki_c", {1000.0, 1.0, CurrentPlant{p.dcdc.l_eq, p.psu.r_psu}}},
    };
}

/// Re-tunes one loop of `p` to a new bandwidth, keeping its damping and plant.
inline void retune(DataCenterParams& p, const std::string& loop, double f_bw) {
    for (auto& l : datacenter_loops(p)) {
        if (l.name != loop) continue;
        l.spec.f_bw = f_bw;
        const auto g = tune(l.spec, p.base.base.omega_b);
        set_parameter(p, l.kp, g.kp);
        set_parameter(p, l.ki, g.ki);
        return;
    }
    throw ParameterError(loop, "unknown controller loop");
}

}  // namespace dcpower::tuning
