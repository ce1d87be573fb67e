#pragma once

// Modified 3-machine 9-bus system: synchronous machine on bus 1, grid-forming
// inverter on bus 2, grid-following inverter on bus 3, data center on bus 8 in
// parallel with the existing static load.

#include "dcpower/assembly.hpp"
#include "dcpower/gridmodels.hpp"
#include "dcpower/params.hpp"
#include "dcpower/sdcib.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <string>

namespace dcpower {

struct NinebusLayout {
    bool gfl = true;
    bool datacenter = true;
    DataCenterLayout dc{};
    // Sign of the converter-inductor feed-forward in both inverters' current loops:
    // -1 as written in the device equations, +1 cancels the plant coupling.
    double decoupling_sign = -1.0;
    // The crossed layout (reactive loop on d) has an unstable power-loop mode here.
    grid::PowerLoopLayout gfl_loops = grid::PowerLoopLayout::aligned;
};

inline constexpr int kDataCenterBus = 7;  // bus 8, zero-based

/// Power flow with the data center drawing its steady-state PCC power at bus 8.
/// The PCC power depends on |V8| through the AFE series resistance, so the two are
/// iterated to a fixed point.
struct NinebusDispatch {
    grid::NetworkData network;
    grid::PowerFlowResult flow;
    DownstreamSteadyState downstream;
    double p_pcc = 0.0;  // data-center side, before s_base scaling
};

inline NinebusDispatch ninebus_dispatch(const NinebusParams& p, const NinebusLayout& layout, double p_load) {
    NinebusDispatch d;
    d.network = grid::wscc9();
    auto& buses = d.network.buses;
    buses[0].v_set = p.v_gen1;
    buses[1].v_set = p.v_gen2;
    buses[1].p_gen = p.p_gen2;
    buses[2].v_set = p.v_gen3;
    buses[2].p_gen = p.p_gen3;
    if (!layout.gfl) buses[2] = grid::Bus{};
    const double s_base = p.dc.base.base.s_base;
    const double r = p.dc.afe.r_afe;
    std::vector<double> extra(buses.size(), 0.0);
    double v8 = 1.0;
    if (layout.datacenter) d.downstream = downstream_steady_state(p.dc, p_load);
    for (int it = 0; it < 50; ++it) {
        if (layout.datacenter) {
            const double pc = d.downstream.converter_power;
            const double disc = v8 * v8 - 4.0 * r * pc;
            if (disc < 0.0) throw SolverError("initial_guess", "bus-8 voltage too low for the data-center load");
            const double i_d = r > 0.0 ? (v8 - std::sqrt(disc)) / (2.0 * r) : pc / v8;
            d.p_pcc = v8 * i_d;
        }
        extra[kDataCenterBus] = s_base * d.p_pcc;
        d.flow = grid::power_flow(d.network, extra);
        const double v8_new = std::abs(d.flow.v(kDataCenterBus));
        const bool done = std::abs(v8_new - v8) < 1e-14;
        v8 = v8_new;
        if (done || !layout.datacenter) break;
    }
    return d;
}

/// Builds the composite model. Device setpoints (SM v_ref/p_ref, GFM and GFL power
/// references) come from the power flow at the data-center load `params.dc.p_load`,
/// which is also the only disturbance value with an equilibrium.
inline SystemModel build_ninebus(NinebusParams params, const NinebusLayout& layout = {}) {
    validate(params);
    const double w0 = params.dc.p_load;
    const PerUnitBase base = params.dc.base.base;
    const double s_base = base.s_base;
    const auto d = ninebus_dispatch(params, layout, w0);
    const auto& v = d.flow.v;
    auto injected = [&](int bus) { return std::conj(d.flow.s_inj(bus) / v(bus)); };

    std::map<std::string, double> states, algebraics;
    auto put_states = [&](const std::string& prefix, const std::vector<std::string>& names, const auto& values) {
        for (std::size_t k = 0; k < names.size(); ++k) states[prefix + "." + names[k]] = values[k];
    };
    auto put_current = [&](const std::string& prefix, Complex i) {
        algebraics[prefix + ".i_r"] = i.real();
        algebraics[prefix + ".i_i"] = i.imag();
    };

    using grid::NetworkBlock;
    SystemModel::Builder b("ninebus");
    std::vector<NetworkBlock::Port> ports;
    auto vr = [](int bus) { return "net." + NetworkBlock::v_r(bus); };
    auto vi = [](int bus) { return "net." + NetworkBlock::v_i(bus); };

    // G1: synchronous machine
    {
        const Complex i = injected(0);
        const auto ss = grid::sm_steady_state(v(0), i, params.sm);
        params.sm.v_ref = ss.v_ref;
        params.sm.p_ref = ss.p_ref;
        auto blk = std::make_shared<grid::SmBlock>("sm", params.sm, base, vr(0), vi(0));
        put_states("sm", blk->state_names(), ss.state.pack());
        put_current("sm", i);
        b.add(blk);
        ports.push_back({0, "sm.i_r", "sm.i_i", 1.0});
    }
    // G2: grid-forming inverter
    {
        const Complex i = injected(1);
        auto [s, gp] = grid::gfm_steady_state(v(1), i, params.gfm, layout.decoupling_sign);
        params.gfm = gp;
        auto blk = std::make_shared<grid::GfmBlock>("gfm", params.gfm, base, vr(1), vi(1), layout.decoupling_sign);
        put_states("gfm", blk->state_names(), s.pack());
        put_current("gfm", i);
        b.add(blk);
        ports.push_back({1, "gfm.i_r", "gfm.i_i", 1.0});
    }
    // G3: grid-following inverter
    if (layout.gfl) {
        const Complex i = injected(2);
        auto [s, gp] = grid::gfl_steady_state(v(2), i, params.gfl, layout.decoupling_sign, layout.gfl_loops);
        params.gfl = gp;
        auto blk = std::make_shared<grid::GflBlock>("gfl", params.gfl, base, vr(2), vi(2), layout.decoupling_sign,
                                                    layout.gfl_loops);
        put_states("gfl", blk->state_names(), s.pack());
        put_current("gfl", i);
        b.add(blk);
        ports.push_back({2, "gfl.i_r", "gfl.i_i", 1.0});
    }
    if (layout.datacenter) {
        add_datacenter(b, params.dc, vr(kDataCenterBus), vi(kDataCenterBus), layout.dc);
        auto ds = d.downstream;
        states.insert(ds.states.begin(), ds.states.end());
        algebraics.insert(ds.algebraics.begin(), ds.algebraics.end());
        afe_steady_state(params.dc, v(kDataCenterBus), ds.converter_power, states, algebraics);
        ports.push_back({kDataCenterBus, "afe.i_r", "afe.i_i", -s_base});
    }
    for (int k = 0; k < v.size(); ++k) {
        algebraics[vr(k)] = v(k).real();
        algebraics[vi(k)] = v(k).imag();
    }
    b.add(std::make_shared<NetworkBlock>("net", grid::admittance_with_loads(d.network, v), ports));

    b.output(power_channel("p_sm", vr(0), vi(0), "sm.i_r", "sm.i_i"));
    b.output(power_channel("p_gfm", vr(1), vi(1), "gfm.i_r", "gfm.i_i"));
    if (layout.gfl) b.output(power_channel("p_gfl", vr(2), vi(2), "gfl.i_r", "gfl.i_i"));
    if (layout.datacenter)
        b.output(power_channel("p_dc", vr(kDataCenterBus), vi(kDataCenterBus), "afe.i_r", "afe.i_i", s_base));
    b.disturbance("p_load");
    b.angle_reference("sm.delta");
    b.initializer([states, algebraics](const SystemModel& m, double) { return to_vectors(m, states, algebraics); });
    return b.build();
}

}  // namespace dcpower
