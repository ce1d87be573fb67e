// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.

#include "dcpower/fullorder.hpp"
#include "dcpower/ninebus.hpp"
#include "dcpower/runner.hpp"
#include "dcpower/sdcib.hpp"
#include "dcpower/smallsignal.hpp"
#include "dcpower/timedomain.hpp"
#include "dcpower/tuning.hpp"
#include "dcpower/workload.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

using namespace dcpower;

namespace {

namespace tol {
constexpr int sig_figs = 3;
constexpr double eq_residual = 1e-10;
constexpr double setpoint = 1e-12;
constexpr double lambda_rel = 0.05;
constexpr double freq_hz = 0.1;
constexpr double share_abs = 0.05;
constexpr double peak_hz = 5.54, peak_band = 0.3;
constexpr double monotone_above_hz = 50.0;
constexpr double residue_rel = 1e-6;
constexpr double static_gain_rel = 1e-3;
constexpr double sine_amp_rel = 0.05;
constexpr double qss_dp = 0.005;
constexpr double ripple_ratio = 10.0;
constexpr double line_360_ratio = 10.0;
constexpr double scr_peak_rel = 0.05;
constexpr double grid_band_lo = 2.0, grid_band_hi = 6.0, grid_decreasing_above = 20.0;
constexpr double eig_residual = 1e-8;
constexpr double fd_halving = 1e-6;
constexpr double order_lo = 1.8, order_hi = 2.2;
constexpr double drift = 1e-7;
constexpr double track_rel = 0.10;
constexpr double line_floor = 0.05;
constexpr double notch_floor = 1e-3;
}  // namespace tol

constexpr double kPi = std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::ostringstream note;
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            note << " [" << what << "]";
        }
    }
};

struct Base {
    SdcibParams params;
    SystemModel model = build_sdcib(params);
    OperatingPoint op = solve_equilibrium(model, 0.5);
    LinearModel lin = linearize(model, op);
    ModalReport rep = modal_analysis(lin);
};

const Base& base() {
    static const Base b;
    return b;
}

bool same_to_sig_figs(double value, double reference, int digits) {
    const double scale = std::pow(10.0, std::floor(std::log10(std::abs(reference))) - digits + 1);
    return std::abs(value - reference) <= 0.5 * scale + 1e-12;
}

std::size_t nearest_mode(const ModalReport& rep, Complex target, const std::set<std::size_t>& taken = {}) {
    std::size_t best = rep.modes.size();
    for (std::size_t k = 0; k < rep.modes.size(); ++k) {
        if (taken.count(k)) continue;
        if (best == rep.modes.size() || std::abs(rep.modes[k].lambda - target) < std::abs(rep.modes[best].lambda - target)) best = k;
    }
    return best;
}

std::size_t tracked_id(const SweepResult& sw, Complex target) {
    const auto& first = sw.points.front();
    const auto k = static_cast<Eigen::Index>(nearest_mode(first.modes, target));
    for (std::size_t id = 0; id < first.tracked.size(); ++id)
        if (first.tracked[id] == k) return id;
    throw Error("acceptance", "mode not tracked");
}

// ---------------------------------------------------------------- criteria

void c1_tuning(Outcome& o) {
    using namespace tuning;
    const DataCenterParams d;
    const double wb = d.base.base.omega_b;
    struct Row {
        const char* name;
        TuningSpec spec;
        double kp, ki;
    };
    const std::vector<Row> rows{
        {"pll", {20.0, 0.707, PllPlant{}}, 0.471, 41.89},
        {"afe dc", {5.0, 1.0, VoltagePlant{d.dclink.c_dc}}, 0.333, 5.236},
        {"afe current", {200.0, 0.707, CurrentPlant{d.afe.l_afe, d.afe.r_afe}}, 0.233, 209.4},
        {"vsi voltage", {100.0, 1.0, VoltagePlant{d.vsi.c_vsi}}, 0.667, 209.4},
        {"vsi current", {400.0, 1.0, CurrentPlant{d.vsi.l_vsi, d.vsi.r_vsi}}, 0.664, 837.8},
        {"psu voltage", {10.0, 1.0, VoltagePlant{d.psu.c_psu}}, 0.667, 20.94},
        {"load-side voltage", {100.0, 1.0, VoltagePlant{d.dcdc.c_eq}}, 0.667, 209.4},
        {"psu current", {1000.0, 1.0, CurrentPlant{d.psu.l_psu, d.psu.r_psu}}, 1.6617, 5236.0},
        {"dc-dc current", {1000.0, 1.0, CurrentPlant{d.dcdc.l_eq, d.psu.r_psu}}, 1.6617, 5236.0},
    };
    for (const auto& r : rows) {
        const auto g = tune(r.spec, wb);
        o.require(same_to_sig_figs(g.kp, r.kp, tol::sig_figs) && same_to_sig_figs(g.ki, r.ki, tol::sig_figs), r.name);
    }
    o.note << " rows=" << rows.size();
}

void c2_sdcib(Outcome& o) {
    const auto& b = base();
    o.require(b.model.n_x() == 21, "n_x");
    const auto r = eval_residuals(b.model, b.op.x0, b.op.y0, 0.5);
    const double res = std::max(r.f.lpNorm<Eigen::Infinity>(), r.g.lpNorm<Eigen::Infinity>());
    o.require(res <= tol::eq_residual, "residual");
    const std::vector<std::pair<const char*, double>> set{
        {"dclink.v_dc_ups", 1.0}, {"psu.v_psu", 1.0}, {"dcdc.v_eq", 0.5}, {"afe.i_q", 0.0}, {"afe.vq_pll", 0.0}};
    for (const auto& [name, ref] : set) o.require(std::abs(b.model.value(name, b.op.x0, b.op.y0, 0.5) - ref) <= tol::setpoint, name);
    o.note << " n_x=" << b.model.n_x() << " residual=" << res;
}

void c3_modes(Outcome& o) {
    const auto& rep = base().rep;
    struct Row {
        Complex lambda;
        const char* top = nullptr;
        double share = 0.0;
    };
    const std::vector<Row> rows{
        {{-19.7, 38.6}, "psu.v_psu", 0.462},
        {{-30.6, 5.36}, "dclink.v_dc_ups", 0.500},
        {{-105.0, 107.0}, "afe.theta_pll", 0.452},
        {{-112.0, 0.0}},
        {{-168.0, 0.0}},
        {{-240.0, 9.99}},
        {{-325.0, 470.0}},
        {{-360.0, 0.0}},
        {{-541.0, 0.0}},
        {{-1507.0, 1956.0}},
        {{-2345.0, 0.0}},
        {{-2613.0, 4297.0}},
        {{-2883.0, 4672.0}},
    };
    std::set<std::size_t> taken;
    std::size_t listed = 0;
    for (const auto& r : rows) {
        const auto k = nearest_mode(rep, r.lambda, taken);
        taken.insert(k);
        const auto& m = rep.modes[k];
        // The conjugate partner is part of the same listed pair.
        if (r.lambda.imag() != 0.0) taken.insert(nearest_mode(rep, std::conj(m.lambda), taken));
        listed += r.lambda.imag() != 0.0 ? 2 : 1;
        std::ostringstream tag;
        tag << "lambda " << r.lambda;
        o.require(std::abs(std::abs(m.lambda) - std::abs(r.lambda)) <= tol::lambda_rel * std::abs(r.lambda), tag.str());
        o.require(std::abs(m.frequency_hz - std::abs(r.lambda.imag()) / (2 * kPi)) <= tol::freq_hz, tag.str() + " f");
        if (r.top) {
            const auto& p = m.ranked.front();
            o.require(rep.state_names[p.state] == r.top, tag.str() + " top state");
            o.require(std::abs(p.share - r.share) <= tol::share_abs, tag.str() + " participation");
        }
    }
    o.require(listed == 21, "21 modes");
    o.note << " slow pair " << rep.modes[nearest_mode(rep, rows[0].lambda)].lambda;
}

void c4_poa(Outcome& o) {
    const auto& b = base();
    const auto pc = poa(b.lin, log_grid(0.01, 1000.0, 400));
    o.require(std::abs(pc.peak_hz[0] - tol::peak_hz) <= tol::peak_band, "peak");
    for (std::size_t i = 1; i < pc.f_hz.size(); ++i)
        if (pc.f_hz[i - 1] >= tol::monotone_above_hz)
            o.require(pc.magnitude(static_cast<Eigen::Index>(i), 0) < pc.magnitude(static_cast<Eigen::Index>(i - 1), 0), "monotone");
    o.note << " peak=" << pc.peak_hz[0] << " Hz |H|=" << pc.peak_magnitude[0];
}

void c5_residues(Outcome& o) {
    const auto& b = base();
    const auto grid = log_grid(0.01, 1000.0, 200);
    const auto md = modal_poa_decomposition(b.rep, b.lin, grid);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double direct = std::abs(transfer(b.lin, grid[i])(0));
        worst = std::max(worst, std::abs(md.total_magnitude(static_cast<Eigen::Index>(i)) - direct) / direct);
    }
    o.require(worst <= tol::residue_rel, "identity");
    o.note << " worst=" << worst;
}

void c6_static_gain(Outcome& o) {
    const auto& b = base();
    const auto hi = solve_equilibrium(b.model, 0.51);
    const double p0 = b.model.outputs_at(b.op.x0, b.op.y0, 0.5)(0);
    const double p1 = b.model.outputs_at(hi.x0, hi.y0, 0.51)(0);
    const double diff = (p1 - p0) / 0.01;
    const double g = std::abs(transfer(b.lin, 0.01)(0));
    o.require(std::abs(g - diff) <= tol::static_gain_rel * std::abs(diff), "gain");
    o.note << " POA(0.01)=" << g << " difference=" << diff;
}

void c7_sine(Outcome& o) {
    const auto& b = base();
    const auto pc = poa(b.lin, log_grid(0.01, 1000.0, 400));
    const double f_peak = pc.peak_hz[0];
    const runner::SineSegments seg;
    SimOptions so;
    so.t_end = seg.t_on + seg.segment * static_cast<double>(seg.multiples.size());
    so.dt = 1e-3;
    const auto tr = simulate(b.model, b.op, runner::segmented_sine(0.5, f_peak, seg), so);
    std::vector<double> amp;
    for (std::size_t k = 0; k < seg.multiples.size(); ++k) {
        const double t_b = seg.t_on + seg.segment * static_cast<double>(k + 1);
        amp.push_back(half_swing(tr, "p_pcc", t_b - 0.5 * seg.segment, t_b));
    }
    const double expected = seg.amplitude * pc.peak_magnitude[0];
    o.require(std::abs(amp[1] - expected) <= tol::sine_amp_rel * expected, "amplitude at peak");
    o.require(amp[0] < amp[1] && amp[2] < amp[1], "off-peak amplitudes");
    o.note << " amplitudes(0.5,1,2 f_peak)=" << amp[0] << "," << amp[1] << "," << amp[2] << " expected=" << expected;
}

void c8_fullorder(Outcome& o) {
    const auto rep = fullorder::validate_reduction(SdcibParams{});
    o.require(rep.max_dp_pcc <= tol::qss_dp, "max dp_pcc");
    o.require(rep.ripple_120_full >= tol::ripple_ratio * rep.ripple_120_reduced, "120 Hz line");
    // 360 Hz line stands out against the neighbouring bins.
    const auto& sp = rep.p_vsi_spectrum_full;
    double floor = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < sp.f_hz.size(); ++i)
        if ((sp.f_hz[i] >= 300.0 && sp.f_hz[i] <= 340.0) || (sp.f_hz[i] >= 380.0 && sp.f_hz[i] <= 420.0)) {
            floor += sp.magnitude[i];
            ++n;
        }
    floor /= std::max(n, 1);
    o.require(rep.ripple_360_p_vsi >= tol::line_360_ratio * floor, "360 Hz line");
    o.note << " max_dp=" << rep.max_dp_pcc << " ripple120 full/reduced=" << rep.ripple_120_full << "/" << rep.ripple_120_reduced
           << " p_vsi 360/floor=" << rep.ripple_360_p_vsi << "/" << floor;
}

void c9_sweeps(Outcome& o) {
    runner::Scenario sc;
    const auto grid = log_grid(0.01, 1000.0, 200);
    const Complex slow = base().rep.modes[nearest_mode(base().rep, {-19.7, 38.6})].lambda;
    const Complex pll = base().rep.modes[nearest_mode(base().rep, {-105.0, 107.0})].lambda;

    {
        const auto fam = runner::sweep_family(sc, "p_load");
        const auto sw = sweep(fam.family, {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}, 6, fam.w0_of, grid);
        const auto id = tracked_id(sw, {-21.0, 38.6});
        double prev = -1e300;
        for (const auto& pt : sw.points) {
            const double re = pt.modes.eigenvalues(pt.tracked[id]).real();
            o.require(re > prev, "load: Re increasing");
            prev = re;
        }
        o.note << " load Re " << sw.points.front().modes.eigenvalues(sw.points.front().tracked[id]).real() << "->" << prev;
    }
    {
        const std::vector<double> bw{100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 45.0, 40.0, 35.0};
        const auto fam = runner::sweep_family(sc, "vsi_bandwidth");
        const auto sw = sweep(fam.family, bw, 6, fam.w0_of, grid);
        const auto id = tracked_id(sw, slow);
        double prev = 1e300;
        double crossing = 0.0;
        for (const auto& pt : sw.points) {
            const auto l = pt.modes.eigenvalues(pt.tracked[id]);
            const double z = damping_ratio(l);
            o.require(z < prev, "bandwidth: damping decreasing");
            if (l.real() > 0.0 && crossing == 0.0) crossing = pt.value;
            prev = z;
        }
        o.require(crossing > 0.0, "bandwidth: right-half-plane crossing");
        o.note << " first unstable bandwidth=" << crossing << " Hz";
    }
    {
        const double scr0 = sc.sdcib.grid.scr();
        const auto fam = runner::sweep_family(sc, "scr");
        const auto sw = sweep(fam.family, {scr0, 4.5, 4.0, 3.5, 3.0, 2.5, 2.0, 1.75, 1.5}, 6, fam.w0_of, grid);
        const double peak0 = sw.points.front().curve.peak_magnitude[0];
        double worst = 0.0;
        for (const auto& pt : sw.points) worst = std::max(worst, std::abs(pt.curve.peak_magnitude[0] - peak0) / peak0);
        o.require(worst < tol::scr_peak_rel, "scr: peak change");
        const auto id = tracked_id(sw, pll);
        const double re0 = sw.points.front().modes.eigenvalues(sw.points.front().tracked[id]).real();
        const double re1 = sw.points.back().modes.eigenvalues(sw.points.back().tracked[id]).real();
        o.require(re1 > re0, "scr: PLL pair toward the axis");
        o.note << " scr peak change=" << worst << " PLL Re " << re0 << "->" << re1;
    }
}

void c10_ninebus(Outcome& o) {
    const NinebusParams p;
    const auto model = build_ninebus(p);
    o.require(model.n_x() == 58, "n_x");
    const auto op = solve_equilibrium(model, p.dc.p_load);
    const auto r = eval_residuals(model, op.x0, op.y0, p.dc.p_load);
    const double res = std::max(r.f.lpNorm<Eigen::Infinity>(), r.g.lpNorm<Eigen::Infinity>());
    o.require(res <= tol::eq_residual, "residual");
    const auto lin = linearize(model, op);
    const auto pc = multiport_poa(lin, log_grid(0.01, 1000.0, 400));
    bool band = false;
    for (Eigen::Index ch = 0; ch < pc.magnitude.cols(); ++ch) {
        const double dc = pc.magnitude(0, ch);
        // Below this fraction of the channel peak the response is inside a transmission
        // zero, not part of the trend.
        const double floor = tol::notch_floor * pc.peak_magnitude[static_cast<std::size_t>(ch)];
        for (std::size_t i = 0; i < pc.f_hz.size(); ++i) {
            const double f = pc.f_hz[i], m = pc.magnitude(static_cast<Eigen::Index>(i), ch);
            if (f >= tol::grid_band_lo && f <= tol::grid_band_hi && m > dc && m > 1.0) band = true;
            if (i > 0 && pc.f_hz[i - 1] >= tol::grid_decreasing_above && m >= floor)
                o.require(m < pc.magnitude(static_cast<Eigen::Index>(i - 1), ch), pc.channel_names[static_cast<std::size_t>(ch)] + " decreasing");
        }
        o.note << " " << pc.channel_names[static_cast<std::size_t>(ch)] << "@" << pc.peak_hz[static_cast<std::size_t>(ch)] << "Hz="
               << pc.peak_magnitude[static_cast<std::size_t>(ch)];
    }
    o.require(band, "amplification band in 2-6 Hz");
    o.note << " n_x=" << model.n_x() << " residual=" << res;
}

void c11_properties(Outcome& o) {
    const auto& b = base();
    const auto& rep = b.rep;
    const auto n = rep.eigenvalues.size();
    for (Eigen::Index k = 0; k < n; ++k) o.require(std::abs(rep.participation.col(k).sum() - 1.0) <= 1e-8, "participation sum");
    const double er = eigen_residual(b.lin, rep);
    o.require(er <= tol::eig_residual, "eigen residual");
    for (Eigen::Index k = 0; k < n; ++k) {
        const Complex l = rep.eigenvalues(k);
        if (std::abs(l.imag()) < 1e-9) continue;
        bool found = false;
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != k && std::abs(rep.eigenvalues(j) - std::conj(l)) < 1e-8 * std::abs(l) &&
                (rep.participation.col(k) - rep.participation.col(j)).cwiseAbs().maxCoeff() < 1e-9)
                found = true;
        o.require(found, "conjugate symmetry");
    }
    const auto ja = jacobians(b.model, b.op, 1e-6), jb = jacobians(b.model, b.op, 5e-7);
    const double fd = (ja.f_x - jb.f_x).cwiseAbs().maxCoeff() / ja.f_x.cwiseAbs().maxCoeff();
    o.require(fd <= tol::fd_halving, "FD step halving");

    auto final_state = [&](double dt) {
        SimOptions so;
        so.t_end = 0.4;
        so.dt = dt;
        so.record_every = 1000000;
        return simulate(b.model, b.op, InputSignal::sine(0.5, 0.05, {0.0}, {5.0}), so).x_final;
    };
    const Vector xa = final_state(4e-3), xb = final_state(2e-3), xc = final_state(1e-3);
    const double order = std::log2((xa - xb).norm() / (xb - xc).norm());
    o.require(order >= tol::order_lo && order <= tol::order_hi, "trapezoidal order");

    SimOptions so;
    so.t_end = 5.0;
    so.dt = 1e-3;
    so.record_every = 1000000;
    const auto tr = simulate(b.model, b.op, InputSignal::constant(0.5), so);
    const double drift = (tr.x_final - b.op.x0).lpNorm<Eigen::Infinity>();
    o.require(drift <= tol::drift, "fixed-point drift");
    o.note << " eig_residual=" << er << " fd=" << fd << " order=" << order << " drift=" << drift;
}

void c12_trace(Outcome& o) {
    const auto& b = base();
    const auto trace = workload::synthetic_gpu_trace();
    const auto input = workload::resample(trace, 0.1);
    SimOptions so;
    so.t_end = input.times.back();
    so.dt = 1e-3;
    so.record_every = 10;
    const auto tr = simulate(b.model, b.op, input, so);
    const double ta = 0.5 * so.t_end, tb = so.t_end;
    const auto s_load = spectrum(tr, "w", ta, tb, 0.0, true);
    const auto s_pcc = spectrum(tr, "p_pcc", ta, tb, 0.0, true);
    const double top = *std::max_element(s_load.magnitude.begin(), s_load.magnitude.end());
    int tracked = 0, amplified = 0, low_bins = 0, amp_bins = 0;
    for (std::size_t i = 0; i < s_load.f_hz.size(); ++i) {
        const double f = s_load.f_hz[i], ml = s_load.magnitude[i], mp = s_pcc.magnitude[i];
        // Dominant components only: local maxima of the load spectrum above the floor.
        // Weaker bins are noise or window leakage from a neighbouring line.
        if (f <= 0.0 || f > 5.0 || ml < tol::line_floor * top) continue;
        if (i == 0 || i + 1 >= s_load.magnitude.size() || ml < s_load.magnitude[i - 1] || ml < s_load.magnitude[i + 1]) continue;
        const double g = std::abs(transfer(b.lin, f)(0));
        if (f <= 2.0) {
            ++low_bins;
            if (std::abs(mp / ml - g) <= tol::track_rel * g) ++tracked;
        }
        if (g > 1.0) {
            ++amp_bins;
            if (mp > ml) ++amplified;
        }
    }
    o.require(low_bins > 0 && tracked == low_bins, "low-frequency tracking");
    o.require(amp_bins > 0 && amplified == amp_bins, "amplification where POA > 1");
    o.note << " tracked " << tracked << "/" << low_bins << " amplified " << amplified << "/" << amp_bins;
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
        {"tuning golden values", c1_tuning},
        {"SDCIB dimension and equilibrium", c2_sdcib},
        {"modal reproduction", c3_modes},
        {"POA peak and low-pass", c4_poa},
        {"residue identity", c5_residues},
        {"static gain", c6_static_gain},
        {"time/frequency consistency", c7_sine},
        {"reduced vs full-order", c8_fullorder},
        {"sensitivity trends", c9_sweeps},
        {"9-bus composite", c10_ninebus},
        {"property suites", c11_properties},
        {"server-load trace spectrum", c12_trace},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.note << " exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << " (" << secs << " s):" << o.note.str()
                  << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
