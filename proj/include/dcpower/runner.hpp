#pragma once

// Scenario runner: turns a parsed config into analyses and CSV/text artifacts,
// plus one recipe per reference figure.

#include "dcpower/equilibrium.hpp"
#include "dcpower/fullorder.hpp"
#include "dcpower/io.hpp"
#include "dcpower/ninebus.hpp"
#include "dcpower/params.hpp"
#include "dcpower/sdcib.hpp"
#include "dcpower/smallsignal.hpp"
#include "dcpower/timedomain.hpp"
#include "dcpower/tuning.hpp"
#include "dcpower/workload.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dcpower::runner {

inline constexpr const char* kVersion = "1.0.0";

enum class Topology { sdcib, ninebus };

inline const std::vector<std::string>& analysis_names() {
    static const std::vector<std::string> n{"tune", "equilibrium", "modes", "poa", "simulate", "spectrum", "sweep",
                                            "validate-fullorder"};
    return n;
}

struct Scenario {
    Topology topology = Topology::sdcib;
    std::vector<std::string> analyses;
    std::string output_dir = "out";

    // Both parameter sets are kept; `dcchain.*` overrides reach both.
    SdcibParams sdcib;
    NinebusParams ninebus;
    NinebusLayout layout;

    NewtonOptions newton;
    struct {
        double f_min = 0.01, f_max = 1000.0;
        int points = 400;
    } poa;
    struct {
        std::string input;  // empty: step of +0.1 p.u. at t = 1 s
        double t_end = 5.0, dt = 1e-3;
        int record_every = 1;
        std::vector<std::string> signals;
    } sim;
    struct {
        std::string signal;  // empty: first output channel
        double t_a = -1.0, t_b = -1.0;  // negative: second half of the run
        bool remove_mean = true;
    } spectrum;
    struct {
        std::string parameter = "p_load";
        std::string values = "0.2:1.0:9";
        int top_k = 6;
    } sweep;
    fullorder::ValidationScenario validate;
    struct {
        std::string loop = "all";
        double f_bw = 0.0;  // > 0 re-tunes `loop` before the other analyses
    } tune;
    struct {
        std::string path;  // empty: synthetic stand-in trace
        double dt = 0.1;
        workload::Scaling scaling = workload::Scaling::to_mean(0.5);
    } workload;

    DataCenterParams& dc() { return topology == Topology::sdcib ? sdcib.dc : ninebus.dc; }
    const DataCenterParams& dc() const { return topology == Topology::sdcib ? sdcib.dc : ninebus.dc; }
    double load() const { return dc().p_load; }
    std::string topology_name() const { return topology == Topology::sdcib ? "sdcib" : "ninebus"; }
};

/// Sets a dotted parameter on every parameter set that knows it.
inline void set_scenario_parameter(Scenario& sc, const std::string& name, double value) {
    bool found = false;
    auto try_set = [&](auto& params) {
        try {
            set_parameter(params, name, value);
            found = true;
        } catch (const ParameterError& e) {
            if (std::string(e.what()).find("unknown parameter") == std::string::npos) throw;
        }
    };
    try_set(sc.sdcib);
    try_set(sc.ninebus);
    if (!found) throw ConfigError("unknown parameter '" + name + "'");
}

inline Scenario from_config(const io::Config& c) {
    Scenario sc;
    const auto topo = c.get("scenario.topology", std::string("sdcib"));
    if (topo == "sdcib")
        sc.topology = Topology::sdcib;
    else if (topo == "ninebus")
        sc.topology = Topology::ninebus;
    else
        throw ConfigError("scenario.topology: expected sdcib or ninebus, got '" + topo + "'");
    for (const auto& a : io::split_list(c.get("scenario.analyses", std::string()))) {
        if (std::find(analysis_names().begin(), analysis_names().end(), a) == analysis_names().end())
            throw ConfigError("scenario.analyses: unknown analysis '" + a + "'");
        sc.analyses.push_back(a);
    }
    sc.output_dir = c.get("scenario.output_dir", sc.output_dir);
    for (const auto& [k, v] : c.overrides()) set_scenario_parameter(sc, k, v);

    sc.layout.gfl = c.get("ninebus.gfl", sc.layout.gfl);
    sc.layout.datacenter = c.get("ninebus.datacenter", sc.layout.datacenter);
    sc.layout.decoupling_sign = c.get("ninebus.decoupling_sign", sc.layout.decoupling_sign);
    if (sc.layout.decoupling_sign != 1.0 && sc.layout.decoupling_sign != -1.0)
        throw ConfigError("ninebus.decoupling_sign: expected 1 or -1");
    const auto loops = c.get("ninebus.gfl_loops", std::string("aligned"));
    if (loops == "aligned")
        sc.layout.gfl_loops = grid::PowerLoopLayout::aligned;
    else if (loops == "crossed")
        sc.layout.gfl_loops = grid::PowerLoopLayout::crossed;
    else
        throw ConfigError("ninebus.gfl_loops: expected aligned or crossed");

    sc.newton.tol = c.get("equilibrium.tol", sc.newton.tol);
    sc.newton.max_iter = c.get("equilibrium.max_iter", sc.newton.max_iter);
    sc.poa.f_min = c.get("poa.f_min", sc.poa.f_min);
    sc.poa.f_max = c.get("poa.f_max", sc.poa.f_max);
    sc.poa.points = c.get("poa.points", sc.poa.points);
    sc.sim.input = c.get("simulate.input", sc.sim.input);
    sc.sim.t_end = c.get("simulate.t_end", sc.sim.t_end);
    sc.sim.dt = c.get("simulate.dt", sc.sim.dt);
    sc.sim.record_every = c.get("simulate.record_every", sc.sim.record_every);
    sc.sim.signals = io::split_list(c.get("simulate.signals", std::string()));
    sc.spectrum.signal = c.get("spectrum.signal", sc.spectrum.signal);
    sc.spectrum.t_a = c.get("spectrum.t_a", sc.spectrum.t_a);
    sc.spectrum.t_b = c.get("spectrum.t_b", sc.spectrum.t_b);
    sc.spectrum.remove_mean = c.get("spectrum.remove_mean", sc.spectrum.remove_mean);
    sc.sweep.parameter = c.get("sweep.parameter", sc.sweep.parameter);
    sc.sweep.values = c.get("sweep.values", sc.sweep.values);
    sc.sweep.top_k = c.get("sweep.top_k", sc.sweep.top_k);
    auto& v = sc.validate;
    v.p_from = c.get("validate.p_from", v.p_from);
    v.p_to = c.get("validate.p_to", v.p_to);
    v.t_step = c.get("validate.t_step", v.t_step);
    v.t_end = c.get("validate.t_end", v.t_end);
    v.dt_full = c.get("validate.dt_full", v.dt_full);
    v.dt_reduced = c.get("validate.dt_reduced", v.dt_reduced);
    v.spectrum_window = c.get("validate.spectrum_window", v.spectrum_window);
    sc.tune.loop = c.get("tune.loop", sc.tune.loop);
    sc.tune.f_bw = c.get("tune.f_bw", sc.tune.f_bw);
    sc.workload.path = c.get("workload.path", sc.workload.path);
    sc.workload.dt = c.get("workload.dt", sc.workload.dt);
    if (c.has("workload.offset") || c.has("workload.gain")) {
        if (c.has("workload.target_mean") || c.has("workload.target_peak"))
            throw ConfigError("workload: give either offset/gain or target_mean/target_peak");
        sc.workload.scaling = workload::Scaling::affine(c.get("workload.offset", 0.0), c.get("workload.gain", 1.0));
    } else if (c.has("workload.target_mean")) {
        std::optional<double> peak;
        if (c.has("workload.target_peak")) peak = c.get("workload.target_peak", 0.0);
        sc.workload.scaling = workload::Scaling::to_mean(c.get("workload.target_mean", 0.5), peak);
    } else if (c.has("workload.target_peak")) {
        throw ConfigError("workload.target_peak requires workload.target_mean");
    }

    if (sc.topology == Topology::sdcib)
        validate(sc.sdcib);
    else
        validate(sc.ninebus);
    return sc;
}

// ---------------------------------------------------------------- models

inline SystemModel build_model(const Scenario& sc) {
    return sc.topology == Topology::sdcib ? build_sdcib(sc.sdcib) : build_ninebus(sc.ninebus, sc.layout);
}

/// Model family and load level for a sweep of `parameter`. Besides dotted
/// parameter names: p_load, scr (fixed R/X ratio) and vsi_bandwidth (re-tuned
/// voltage PI of the VSI, Hz).
struct SweepFamily {
    ModelFamily family;
    std::function<double(double)> w0_of;
};

inline SweepFamily sweep_family(const Scenario& sc, const std::string& parameter) {
    const double w0 = sc.load();
    auto rebuild = [sc](std::function<void(Scenario&, double)> edit) {
        return [sc, edit](double v) {
            Scenario s = sc;
            edit(s, v);
            return build_model(s);
        };
    };
    if (parameter == "p_load") {
        if (sc.topology == Topology::sdcib) {
            const auto m = build_model(sc);
            return {[m](double) { return m; }, [](double v) { return v; }};
        }
        // The 9-bus dispatch (and its only equilibrium) follows the load.
        return {rebuild([](Scenario& s, double v) { s.ninebus.dc.p_load = v; }), [](double v) { return v; }};
    }
    if (parameter == "scr") {
        if (sc.topology != Topology::sdcib) throw ConfigError("sweep.parameter: scr applies to the sdcib topology only");
        return {rebuild([](Scenario& s, double v) {
                    if (!(v > 0.0)) throw ParameterError("scr", "must be positive");
                    const double a = std::atan2(s.sdcib.grid.x_inf, s.sdcib.grid.r_inf);
                    s.sdcib.grid.r_inf = std::cos(a) / v;
                    s.sdcib.grid.x_inf = std::sin(a) / v;
                }),
                [w0](double) { return w0; }};
    }
    if (parameter == "vsi_bandwidth")
        return {rebuild([](Scenario& s, double v) { tuning::retune(s.dc(), "vsi.voltage", v); }), [w0](double) { return w0; }};
    {
        Scenario probe = sc;
        set_scenario_parameter(probe, parameter, parameter == "dcchain.p_load" ? w0 : 1.0);
    }
    if (parameter == "dcchain.p_load") return sweep_family(sc, "p_load");
    return {rebuild([parameter](Scenario& s, double v) { set_scenario_parameter(s, parameter, v); }),
            [w0](double) { return w0; }};
}

/// `constant:v`, `step:t0,from,to`, `sine:base,amp,t1@f1,t2@f2,...` or
/// `trace[:path]`. Empty means a +0.1 p.u. step at t = 1 s.
inline InputSignal parse_input(const Scenario& sc, const std::string& spec) {
    const double w0 = sc.load();
    if (spec.empty()) return InputSignal::step(1.0, w0, w0 + 0.1);
    const auto colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string rest = colon == std::string::npos ? std::string() : spec.substr(colon + 1);
    const std::string key = "simulate.input";
    if (kind == "trace") {
        const std::string path = rest.empty() ? sc.workload.path : rest;
        const auto tr = path.empty() ? workload::synthetic_gpu_trace() : workload::ingest_csv(path, sc.workload.scaling);
        return workload::resample(tr, sc.workload.dt);
    }
    const auto items = io::split_list(rest);
    auto num = [&](const std::string& s) { return io::Config::to_number(key, s); };
    if (kind == "constant") {
        if (items.size() != 1) throw ConfigError(key + ": constant takes one value");
        return InputSignal::constant(num(items[0]));
    }
    if (kind == "step") {
        if (items.size() != 3) throw ConfigError(key + ": step takes t0,from,to");
        return InputSignal::step(num(items[0]), num(items[1]), num(items[2]));
    }
    if (kind == "sine") {
        if (items.size() < 3) throw ConfigError(key + ": sine takes base,amp,t1@f1[,t2@f2...]");
        std::vector<double> ts, fs;
        for (std::size_t k = 2; k < items.size(); ++k) {
            const auto at = items[k].find('@');
            if (at == std::string::npos) throw ConfigError(key + ": sine segment '" + items[k] + "' is not t@f");
            ts.push_back(num(items[k].substr(0, at)));
            fs.push_back(num(items[k].substr(at + 1)));
        }
        return InputSignal::sine(num(items[0]), num(items[1]), ts, fs);
    }
    throw ConfigError(key + ": unknown input kind '" + kind + "'");
}

// ---------------------------------------------------------------- artifacts

struct RunResult {
    std::vector<std::filesystem::path> files;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string state_line(const std::string& name, double v) { return name + " = " + io::format_number(v) + "\n"; }

inline io::CsvTable modes_table(const ModalReport& rep) {
    io::CsvTable t({"mode", "re", "im", "f_hz", "damping", "state1", "participation1", "state2", "participation2", "state3",
                    "participation3"});
    for (std::size_t k = 0; k < rep.modes.size(); ++k) {
        const auto& m = rep.modes[k];
        std::vector<std::string> row{std::to_string(k + 1), io::format_number(m.lambda.real()),
                                     io::format_number(m.lambda.imag()), io::format_number(m.frequency_hz),
                                     io::format_number(m.damping_ratio)};
        for (std::size_t j = 0; j < 3; ++j) {
            if (j < m.ranked.size()) {
                row.push_back(rep.state_names[m.ranked[j].state]);
                row.push_back(io::format_number(m.ranked[j].share));
            } else {
                row.push_back("");
                row.push_back("");
            }
        }
        t.add(row);
    }
    return t;
}

inline io::CsvTable poa_table(const PoaCurve& c) {
    std::vector<std::string> header{"f_hz"};
    header.insert(header.end(), c.channel_names.begin(), c.channel_names.end());
    io::CsvTable t(header);
    for (std::size_t i = 0; i < c.f_hz.size(); ++i) {
        std::vector<double> row{c.f_hz[i]};
        for (Eigen::Index ch = 0; ch < c.magnitude.cols(); ++ch) row.push_back(c.magnitude(static_cast<Eigen::Index>(i), ch));
        t.add(row);
    }
    return t;
}

inline io::CsvTable poa_peaks_table(const PoaCurve& c) {
    io::CsvTable t({"channel", "f_hz", "magnitude"});
    for (std::size_t ch = 0; ch < c.channel_names.size(); ++ch)
        t.add({c.channel_names[ch], io::format_number(c.peak_hz[ch]), io::format_number(c.peak_magnitude[ch])});
    return t;
}

inline io::CsvTable trace_table(const SimTrace& tr) {
    std::vector<std::string> names{"t"};
    names.insert(names.end(), tr.names.begin(), tr.names.end());
    std::vector<std::vector<double>> cols{tr.t};
    cols.insert(cols.end(), tr.columns.begin(), tr.columns.end());
    return io::columns_table(names, cols);
}

inline io::CsvTable spectrum_table(const Spectrum& s) { return io::columns_table({"f_hz", "magnitude"}, {s.f_hz, s.magnitude}); }

inline std::string sanitize(std::string s) {
    for (char& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
    return s;
}

}  // namespace detail

inline std::string operating_point_text(const SystemModel& model, const OperatingPoint& op) {
    std::string s = "[summary]\n";
    s += "model = " + model.topology() + "\n";
    s += detail::state_line("p_load", op.w0);
    s += detail::state_line("f_norm", op.f_norm);
    s += detail::state_line("g_norm", op.g_norm);
    s += detail::state_line("tol", op.tol);
    s += "iterations = " + std::to_string(op.iterations) + "\n";
    s += "n_x = " + std::to_string(model.n_x()) + "\nn_y = " + std::to_string(model.n_y()) + "\n\n[states]\n";
    const auto& sn = model.index().state_names();
    for (std::size_t i = 0; i < sn.size(); ++i) s += detail::state_line(sn[i], op.x0(static_cast<Eigen::Index>(i)));
    s += "\n[algebraics]\n";
    const auto& an = model.index().algebraic_names();
    for (std::size_t i = 0; i < an.size(); ++i) s += detail::state_line(an[i], op.y0(static_cast<Eigen::Index>(i)));
    s += "\n[outputs]\n";
    const Vector out = model.outputs_at(op.x0, op.y0, op.w0);
    for (std::size_t k = 0; k < model.outputs().size(); ++k)
        s += detail::state_line(model.outputs()[k].name, out(static_cast<Eigen::Index>(k)));
    return s;
}

/// Every effective parameter and option, tolerances and versions.
inline std::string manifest_text(Scenario sc) {
    std::string s = "[run]\n";
    s += "topology = " + sc.topology_name() + "\n";
    std::string list;
    for (const auto& a : sc.analyses) list += (list.empty() ? "" : " ") + a;
    s += "analyses = " + list + "\noutput_dir = " + sc.output_dir + "\n\n[parameters]\n";
    const auto params = sc.topology == Topology::sdcib ? flatten(sc.sdcib) : flatten(sc.ninebus);
    for (const auto& [k, v] : params) s += detail::state_line(k, v);
    if (sc.topology == Topology::ninebus) {
        s += "\n[ninebus]\n";
        s += std::string("gfl = ") + (sc.layout.gfl ? "true" : "false") + "\n";
        s += std::string("datacenter = ") + (sc.layout.datacenter ? "true" : "false") + "\n";
        s += detail::state_line("decoupling_sign", sc.layout.decoupling_sign);
        s += std::string("gfl_loops = ") + (sc.layout.gfl_loops == grid::PowerLoopLayout::aligned ? "aligned" : "crossed") + "\n";
    }
    s += "\n[equilibrium]\n" + detail::state_line("tol", sc.newton.tol) +
         "max_iter = " + std::to_string(sc.newton.max_iter) + "\n";
    s += "\n[poa]\n" + detail::state_line("f_min", sc.poa.f_min) + detail::state_line("f_max", sc.poa.f_max) +
         "points = " + std::to_string(sc.poa.points) + "\n";
    std::string sig;
    for (const auto& x : sc.sim.signals) sig += (sig.empty() ? "" : " ") + x;
    s += "\n[simulate]\ninput = " + sc.sim.input + "\n" + detail::state_line("t_end", sc.sim.t_end) +
         detail::state_line("dt", sc.sim.dt) + "record_every = " + std::to_string(sc.sim.record_every) +
         "\nsignals = " + sig + "\n";
    SimOptions so;
    s += detail::state_line("newton_tol", so.newton_tol) + detail::state_line("algebraic_tol", so.algebraic_tol) +
         "max_newton = " + std::to_string(so.max_newton) + "\nmax_halvings = " + std::to_string(so.max_halvings) + "\n";
    s += "\n[spectrum]\nsignal = " + sc.spectrum.signal + "\n" + detail::state_line("t_a", sc.spectrum.t_a) +
         detail::state_line("t_b", sc.spectrum.t_b) + "remove_mean = " + (sc.spectrum.remove_mean ? "true" : "false") + "\n";
    s += "\n[sweep]\nparameter = " + sc.sweep.parameter + "\nvalues = " + sc.sweep.values +
         "\ntop_k = " + std::to_string(sc.sweep.top_k) + "\n";
    const auto& v = sc.validate;
    s += "\n[validate]\n" + detail::state_line("p_from", v.p_from) + detail::state_line("p_to", v.p_to) +
         detail::state_line("t_step", v.t_step) + detail::state_line("t_end", v.t_end) +
         detail::state_line("dt_full", v.dt_full) + detail::state_line("dt_reduced", v.dt_reduced) +
         detail::state_line("spectrum_window", v.spectrum_window) +
         detail::state_line("sign_smoothing", fullorder::kSignSmoothing);
    s += "\n[tune]\nloop = " + sc.tune.loop + "\n" + detail::state_line("f_bw", sc.tune.f_bw);
    const auto& sc_w = sc.workload.scaling;
    s += "\n[workload]\npath = " + sc.workload.path + "\n" + detail::state_line("dt", sc.workload.dt);
    if (sc_w.target_mean) {
        s += detail::state_line("target_mean", *sc_w.target_mean);
        if (sc_w.target_peak) s += detail::state_line("target_peak", *sc_w.target_peak);
    } else {
        s += detail::state_line("offset", sc_w.offset) + detail::state_line("gain", sc_w.gain);
    }
    s += "\n[versions]\n";
    s += std::string("dcpower = ") + kVersion + "\n";
    s += "eigen = " + std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
         std::to_string(EIGEN_MINOR_VERSION) + "\n";
    s += "boost = " + std::to_string(BOOST_VERSION / 100000) + "." + std::to_string(BOOST_VERSION / 100 % 1000) + "\n";
    s += "cplusplus = " + std::to_string(__cplusplus) + "\n";
    return s;
}

/// Runs the requested analyses in dependency order and writes their artifacts
/// to `out`. Tuning comes first since it changes the parameters everything else uses.
inline RunResult run(Scenario sc, const std::filesystem::path& out) {
    RunResult res;
    auto wants = [&](const std::string& a) { return std::find(sc.analyses.begin(), sc.analyses.end(), a) != sc.analyses.end(); };
    auto emit = [&](const std::string& file, const std::string& content) {
        io::write_atomic(out / file, content);
        res.files.push_back(out / file);
    };

    if (wants("tune")) {
        if (sc.tune.f_bw > 0.0) {
            if (sc.tune.loop == "all") throw ConfigError("tune.f_bw needs a single tune.loop");
            tuning::retune(sc.sdcib.dc, sc.tune.loop, sc.tune.f_bw);
            tuning::retune(sc.ninebus.dc, sc.tune.loop, sc.tune.f_bw);
        }
        io::CsvTable t({"loop", "plant", "f_bw_hz", "zeta", "kp", "ki", "kp_name", "ki_name", "kp_in_use", "ki_in_use"});
        auto dc = sc.dc();
        const auto params = flatten(dc);
        bool matched = sc.tune.loop == "all";
        for (const auto& l : tuning::datacenter_loops(dc)) {
            if (sc.tune.loop != "all" && l.name != sc.tune.loop) continue;
            matched = true;
            const auto g = tuning::tune(l.spec, dc.base.base.omega_b);
            t.add({l.name, tuning::plant_kind(l.spec.plant), io::format_number(l.spec.f_bw), io::format_number(l.spec.zeta),
                   io::format_number(g.kp), io::format_number(g.ki), "dcchain." + l.kp, "dcchain." + l.ki,
                   io::format_number(params.at(l.kp)), io::format_number(params.at(l.ki))});
        }
        if (!matched) throw ParameterError(sc.tune.loop, "unknown controller loop");
        emit("tune.csv", t.str());
    }

    const bool small_signal = wants("modes") || wants("poa");
    const bool needs_op = wants("equilibrium") || small_signal || wants("simulate") || wants("spectrum");
    std::optional<SystemModel> model;
    std::optional<OperatingPoint> op;
    if (needs_op) {
        model = build_model(sc);
        op = solve_equilibrium(*model, sc.load(), sc.newton);
        emit("operating_point.txt", operating_point_text(*model, *op));
    }
    if (small_signal) {
        const auto lin = linearize(*model, *op);
        if (wants("modes")) {
            const auto rep = modal_analysis(lin);
            res.warnings.insert(res.warnings.end(), rep.warnings.begin(), rep.warnings.end());
            emit("modes.csv", detail::modes_table(rep).str());
        }
        if (wants("poa")) {
            const auto curve = poa(lin, log_grid(sc.poa.f_min, sc.poa.f_max, static_cast<std::size_t>(sc.poa.points)));
            if (curve.resonance_flag) res.warnings.push_back("poa: peak at the edge of the frequency grid");
            emit("poa.csv", detail::poa_table(curve).str());
            emit("poa_peaks.csv", detail::poa_peaks_table(curve).str());
        }
    }
    if (wants("simulate") || wants("spectrum")) {
        SimOptions so;
        so.t_end = sc.sim.t_end;
        so.dt = sc.sim.dt;
        so.record_every = sc.sim.record_every;
        so.signals = sc.sim.signals;
        const auto tr = simulate(*model, *op, parse_input(sc, sc.sim.input), so);
        if (wants("simulate")) emit("trace.csv", detail::trace_table(tr).str());
        if (wants("spectrum")) {
            const std::string sig = sc.spectrum.signal.empty() ? model->outputs().front().name : sc.spectrum.signal;
            const double ta = sc.spectrum.t_a >= 0.0 ? sc.spectrum.t_a : 0.5 * sc.sim.t_end;
            const double tb = sc.spectrum.t_b >= 0.0 ? sc.spectrum.t_b : sc.sim.t_end;
            const auto sp = spectrum(tr, sig, ta, tb, 0.0, sc.spectrum.remove_mean);
            res.warnings.insert(res.warnings.end(), sp.warnings.begin(), sp.warnings.end());
            emit("spectrum.csv", detail::spectrum_table(sp).str());
        }
    }
    if (wants("sweep")) {
        const auto values = io::parse_values("sweep.values", sc.sweep.values);
        const auto fam = sweep_family(sc, sc.sweep.parameter);
        const auto grid = log_grid(sc.poa.f_min, sc.poa.f_max, static_cast<std::size_t>(sc.poa.points));
        const auto sw = sweep(fam.family, values, static_cast<std::size_t>(std::max(1, sc.sweep.top_k)), fam.w0_of, grid);
        res.warnings.insert(res.warnings.end(), sw.warnings.begin(), sw.warnings.end());
        const std::string stem = "sweep_" + detail::sanitize(sc.sweep.parameter);
        io::CsvTable traj({"value", "mode_id", "re", "im", "f_hz", "damping", "residue"});
        for (const auto& pt : sw.points)
            for (const auto id : sw.top) {
                const auto k = pt.tracked[static_cast<std::size_t>(id)];
                const auto& m = pt.modes.modes[static_cast<std::size_t>(k)];
                traj.add({pt.value, static_cast<double>(id + 1), m.lambda.real(), m.lambda.imag(), m.frequency_hz,
                          m.damping_ratio, std::abs(pt.modes.residues(0, k))});
            }
        emit(stem + ".csv", traj.str());
        for (std::size_t i = 0; i < sw.points.size(); ++i)
            emit(stem + "_" + std::to_string(i + 1) + ".csv", detail::poa_table(sw.points[i].curve).str());
    }
    if (wants("validate-fullorder")) {
        if (sc.topology != Topology::sdcib) throw ConfigError("validate-fullorder applies to the sdcib topology only");
        const auto rep = fullorder::validate_reduction(sc.sdcib, sc.validate);
        emit("fullorder_trace.csv",
             io::columns_table({"t", "p_pcc_full", "p_pcc_reduced", "p_vsi_full", "p_vsi_reduced", "v_psu_full", "v_psu_reduced"},
                               {rep.t, rep.p_pcc_full, rep.p_pcc_reduced, rep.p_vsi_full, rep.p_vsi_reduced, rep.v_psu_full,
                                rep.v_psu_reduced})
                 .str());
        emit("fullorder_spectrum_v_psu_full.csv", detail::spectrum_table(rep.v_psu_spectrum_full).str());
        emit("fullorder_spectrum_v_psu_reduced.csv", detail::spectrum_table(rep.v_psu_spectrum_reduced).str());
        emit("fullorder_spectrum_p_vsi_full.csv", detail::spectrum_table(rep.p_vsi_spectrum_full).str());
        io::CsvTable s({"metric", "value"});
        s.add({"max_dp_pcc", io::format_number(rep.max_dp_pcc)});
        s.add({"ripple_120_full", io::format_number(rep.ripple_120_full)});
        s.add({"ripple_120_reduced", io::format_number(rep.ripple_120_reduced)});
        s.add({"ripple_360_p_vsi", io::format_number(rep.ripple_360_p_vsi)});
        emit("fullorder_summary.csv", s.str());
    }
    emit("run_manifest.ini", manifest_text(sc));
    return res;
}

// ---------------------------------------------------------------- figures

inline const std::vector<std::string>& figure_names() {
    static const std::vector<std::string> n{"fig4", "fig5", "fig6", "fig7", "fig9", "fig10", "fig11"};
    return n;
}

/// Forcing frequencies (in units of f_peak) and switch times of the three-segment
/// sine run. Each segment lasts 10 s, at least 20 periods at 0.5 f_peak.
struct SineSegments {
    double amplitude = 0.05;
    double t_on = 1.0;
    double segment = 10.0;
    std::vector<double> multiples{0.5, 1.0, 2.0};
};

inline InputSignal segmented_sine(double w0, double f_peak, const SineSegments& s = {}) {
    std::vector<double> ts, fs;
    for (std::size_t k = 0; k < s.multiples.size(); ++k) {
        ts.push_back(s.t_on + s.segment * static_cast<double>(k));
        fs.push_back(s.multiples[k] * f_peak);
    }
    return InputSignal::sine(w0, s.amplitude, ts, fs);
}

/// Server-load trace for the workload figures: the configured file, or the synthetic stand-in.
inline workload::LoadTrace figure_trace(const Scenario& sc) {
    return sc.workload.path.empty() ? workload::synthetic_gpu_trace() : workload::ingest_csv(sc.workload.path, sc.workload.scaling);
}

inline RunResult fig_repro(const std::string& figure, Scenario sc, const std::filesystem::path& out) {
    if (std::find(figure_names().begin(), figure_names().end(), figure) == figure_names().end())
        throw ConfigError("unknown figure recipe '" + figure + "'");
    RunResult res;
    auto emit = [&](const std::string& file, const io::CsvTable& t) {
        t.write(out / file);
        res.files.push_back(out / file);
    };
    const bool grid_case = figure == "fig9" || figure == "fig10" || figure == "fig11";
    sc.topology = grid_case ? Topology::ninebus : Topology::sdcib;
    const auto grid = log_grid(sc.poa.f_min, sc.poa.f_max, static_cast<std::size_t>(sc.poa.points));

    if (figure == "fig4") {
        sc.analyses = {"validate-fullorder"};
        auto r = run(sc, out);
        return r;
    }
    if (figure == "fig5") {
        struct Family {
            std::string parameter;
            std::vector<double> values;
        };
        const double scr0 = sc.sdcib.grid.scr();
        const std::vector<Family> families{
            {"vsi_bandwidth", {100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 45.0, 40.0, 35.0}},
            {"p_load", {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}},
            {"scr", {scr0, 4.5, 4.0, 3.5, 3.0, 2.5, 2.0, 1.75, 1.5}},
        };
        for (const auto& f : families) {
            const auto fam = sweep_family(sc, f.parameter);
            const auto sw = sweep(fam.family, f.values, 6, fam.w0_of, grid);
            res.warnings.insert(res.warnings.end(), sw.warnings.begin(), sw.warnings.end());
            io::CsvTable traj({"value", "mode_id", "re", "im", "f_hz", "damping", "residue"});
            std::vector<std::string> header{"f_hz"};
            std::vector<std::vector<double>> cols{sw.points.front().curve.f_hz};
            for (const auto& pt : sw.points) {
                for (const auto id : sw.top) {
                    const auto k = pt.tracked[static_cast<std::size_t>(id)];
                    const auto& m = pt.modes.modes[static_cast<std::size_t>(k)];
                    traj.add({pt.value, static_cast<double>(id + 1), m.lambda.real(), m.lambda.imag(), m.frequency_hz,
                              m.damping_ratio, std::abs(pt.modes.residues(0, k))});
                }
                header.push_back(f.parameter + "=" + io::format_number(pt.value));
                std::vector<double> col(static_cast<std::size_t>(pt.curve.magnitude.rows()));
                for (Eigen::Index i = 0; i < pt.curve.magnitude.rows(); ++i) col[static_cast<std::size_t>(i)] = pt.curve.magnitude(i, 0);
                cols.push_back(col);
            }
            emit("fig5_" + f.parameter + "_trajectory.csv", traj);
            emit("fig5_" + f.parameter + "_poa.csv", io::columns_table(header, cols));
        }
        return res;
    }
    const auto model = build_model(sc);
    const auto op = solve_equilibrium(model, sc.load(), sc.newton);
    const auto lin = linearize(model, op);
    if (figure == "fig6") {
        const auto curve = poa(lin, grid);
        emit("fig6_poa.csv", detail::poa_table(curve));
        emit("fig6_poa_peak.csv", detail::poa_peaks_table(curve));
        const SineSegments seg;
        const double f_peak = curve.peak_hz.front();
        SimOptions so;
        so.t_end = seg.t_on + seg.segment * static_cast<double>(seg.multiples.size());
        so.dt = 1e-3;
        so.record_every = 5;
        const auto tr = simulate(model, op, segmented_sine(sc.load(), f_peak, seg), so);
        emit("fig6_trace.csv", io::columns_table({"t", "p_load", "p_pcc"}, {tr.t, tr.column("w"), tr.column("p_pcc")}));
        io::CsvTable summary({"segment", "f_hz", "amplitude_ratio", "poa"});
        for (std::size_t k = 0; k < seg.multiples.size(); ++k) {
            const double t_b = seg.t_on + seg.segment * static_cast<double>(k + 1);
            const double f = seg.multiples[k] * f_peak;
            const double ratio = half_swing(tr, "p_pcc", t_b - 0.5 * seg.segment, t_b) / seg.amplitude;
            summary.add({std::to_string(k + 1), io::format_number(f), io::format_number(ratio),
                         io::format_number(std::abs(transfer(lin, f)(0)))});
        }
        emit("fig6_summary.csv", summary);
        return res;
    }
    if (figure == "fig9") {
        const auto rep = modal_analysis(lin);
        emit("fig9_modes.csv", detail::modes_table(rep));
        io::CsvTable residues({"mode", "re", "im", "channel", "residue"});
        for (Eigen::Index ch = 0; ch < rep.residues.rows(); ++ch)
            for (Eigen::Index k = 0; k < rep.residues.cols(); ++k)
                residues.add({std::to_string(k + 1), io::format_number(rep.eigenvalues(k).real()),
                              io::format_number(rep.eigenvalues(k).imag()), model.outputs()[static_cast<std::size_t>(ch)].name,
                              io::format_number(std::abs(rep.residues(ch, k)))});
        emit("fig9_residues.csv", residues);
        return res;
    }
    if (figure == "fig10") {
        const auto curve = multiport_poa(lin, grid);
        emit("fig10_poa.csv", detail::poa_table(curve));
        emit("fig10_poa_peaks.csv", detail::poa_peaks_table(curve));
        return res;
    }
    // fig7 and fig11: the server-load trace through the chain (and the grid).
    const auto trace = figure_trace(sc);
    const auto input = workload::resample(trace, sc.workload.dt);
    SimOptions so;
    so.t_end = input.times.back();
    so.dt = 1e-3;
    so.record_every = 10;
    const auto tr = simulate(model, op, input, so);
    if (figure == "fig7") {
        emit("fig7_trace.csv", io::columns_table({"t", "p_load", "p_pcc"}, {tr.t, tr.column("w"), tr.column("p_pcc")}));
        const double ta = 0.5 * so.t_end, tb = so.t_end;
        const auto s_load = spectrum(tr, "w", ta, tb, 0.0, true);
        const auto s_pcc = spectrum(tr, "p_pcc", ta, tb, 0.0, true);
        std::vector<double> g;
        for (double f : s_load.f_hz) g.push_back(f > 0.0 ? std::abs(transfer(lin, f)(0)) : std::abs(transfer(lin, grid.front())(0)));
        emit("fig7_spectrum.csv", io::columns_table({"f_hz", "p_load", "p_pcc", "poa"}, {s_load.f_hz, s_load.magnitude, s_pcc.magnitude, g}));
        return res;
    }
    std::vector<std::string> names{"t", "p_load"};
    std::vector<std::vector<double>> cols{{}, {}};
    const double t_from = so.t_end - 10.0;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < tr.t.size(); ++i)
        if (tr.t[i] >= t_from - 1e-9) keep.push_back(i);
    auto pick = [&](const std::vector<double>& c) {
        std::vector<double> v;
        for (auto i : keep) v.push_back(c[i]);
        return v;
    };
    cols[0] = pick(tr.t);
    cols[1] = pick(tr.column("w"));
    for (const auto& o : model.outputs()) {
        names.push_back(o.name);
        cols.push_back(pick(tr.column(o.name)));
    }
    emit("fig11_trace.csv", io::columns_table(names, cols));
    return res;
}

}  // namespace dcpower::runner
