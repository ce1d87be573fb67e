#include "dcpower/equilibrium.hpp"
#include "dcpower/gridmodels.hpp"
#include "dcpower/ninebus.hpp"
#include "dcpower/sdcib.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

using namespace dcpower;
using Catch::Approx;

namespace {

PerUnitBase base60() { return PerUnitBase{}; }

Vector random_like(const Vector& v, std::mt19937& rng, double rel) {
    std::uniform_real_distribution<double> u(-rel, rel);
    Vector out = v;
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = v(i) * (1.0 + u(rng)) + u(rng) * 1e-3;
    return out;
}

double afe_current(const SystemModel& m, const OperatingPoint& op) {
    return std::hypot(m.value("afe.i_d", op.x0, op.y0, op.w0), m.value("afe.i_q", op.x0, op.y0, op.w0));
}

}  // namespace

// ---------------------------------------------------------------- chain residuals

TEST_CASE("AFE residuals", "[dcchain]") {
    const AfeParams p;
    dcchain::AfeState s;
    s.theta_pll = 0.2;
    s.i_dq = {0.4, -0.05};
    s.xi_dc = 0.1;
    s.gamma_dq = {0.01, 0.02};
    const auto r = dcchain::afe_residuals(s, {1.0, 0.1}, 1.0, p, base60());
    CHECK((r.m_dq - r.v_dq_ref).norm() == 0.0);
    CHECK(r.i_dq_ref.y() == 0.0);
    CHECK_THROWS_AS(dcchain::afe_residuals(s, {1.0, 0.0}, 0.0, p, base60()), DomainError);
    CHECK_THROWS_AS(dcchain::afe_residuals(s, {1.0, 0.0}, -0.1, p, base60()), DomainError);
}

TEST_CASE("VSI residuals", "[dcchain]") {
    const VsiParams p;
    dcchain::VsiState s;
    s.v_uv = {1.0, 0.0};
    const auto r = dcchain::vsi_residuals(s, {0.5, 0.0}, 1.0, p, base60());
    CHECK(r.cap_coupling.x() == Approx(0.0).margin(1e-15));
    CHECK(r.cap_coupling.y() == Approx(0.2));
    CHECK(r.v_ref == Vec2(p.vu_ref, 0.0));
    CHECK_THROWS_AS(dcchain::vsi_residuals(s, {0.5, 0.0}, 0.0, p, base60()), DomainError);
}

TEST_CASE("DC-link residual", "[dcchain]") {
    const auto b = base60();
    CHECK(dcchain::dclink_residual(1.0, {0.5, 0.0}, {1.0, 0.0}, {0.5, 0.0}, {1.0, 0.0}, 2.0, b) == 0.0);
    CHECK(dcchain::dclink_residual(1.0, {1.0, 0.0}, {0.2, 0.0}, Vec2::Zero(), Vec2::Zero(), 2.0, b) ==
          Approx(0.2 * 2 * std::numbers::pi * 60 / 2));
}

TEST_CASE("reduced PSU residuals", "[dcchain]") {
    const PsuParams p;
    SECTION("proportional term vanishes at the reference") {
        const auto r = dcchain::psu_reduced_residuals({p.v_psu_ref, 0.03}, {1.0, 0.0}, 0.1, p, base60());
        CHECK(r.g_eq == Approx(p.ki_v * 0.03));
    }
    SECTION("zero conductance") {
        const auto r = dcchain::psu_reduced_residuals({p.v_psu_ref, 0.0}, {1.0, 0.0}, 0.1, p, base60());
        CHECK(r.i_uv_vsi == Vec2::Zero());
        CHECK(r.dx[0] == Approx(-base60().omega_b * 0.1 / p.c_psu));
    }
    CHECK_THROWS_AS(dcchain::psu_reduced_residuals({0.0, 0.0}, {1.0, 0.0}, 0.1, p, base60()), DomainError);
}

TEST_CASE("reduced DC-DC residuals", "[dcchain]") {
    const DcdcParams p;
    CHECK(dcchain::load_conductance(0.5, 0.5) == Approx(2.0 / 3.0));
    const auto zero = dcchain::dcdc_reduced_residuals({p.v_eq_ref, 0.0}, 0.0, 1.0, p, base60());
    CHECK(zero.i_eq == 0.0);
    CHECK(zero.i_psu == 0.0);
    CHECK(zero.dx[0] == 0.0);
    CHECK_THROWS_AS(dcchain::dcdc_reduced_residuals({0.5, 0.0}, 0.5, 0.0, p, base60()), DomainError);
}

TEST_CASE("infinite-bus closure", "[dcchain]") {
    const InfiniteBusParams g;
    CHECK(dcchain::infinite_bus_closure({0.0, 0.0}, g) == Vec2(1.0, 0.0));
    const Vec2 a = dcchain::infinite_bus_closure({1.0, 0.0}, g);
    CHECK(a.x() == Approx(0.98));
    CHECK(a.y() == Approx(-0.19));
    const Vec2 b = dcchain::infinite_bus_closure({0.0, 1.0}, g);
    CHECK(b.x() == Approx(1.19));
    CHECK(b.y() == Approx(-0.02));
}

// ---------------------------------------------------------------- assembly

TEST_CASE("SDCIB assembly", "[assembly]") {
    const SdcibParams p;
    const auto m = build_sdcib(p);
    CHECK(m.n_x() == 21);
    REQUIRE(m.outputs().size() == 1);
    CHECK(m.outputs()[0].name == "p_pcc");

    SECTION("missing DC-DC stage is a wiring error") {
        DataCenterLayout l;
        l.dcdc = false;
        CHECK_THROWS_AS(build_sdcib(p, l), BuildError);
    }
    SECTION("invalid parameters are named") {
        SdcibParams bad;
        bad.dc.psu.c_psu = -1.0;
        try {
            build_sdcib(bad);
            FAIL("expected a parameter error");
        } catch (const ParameterError& e) {
            CHECK(e.name() == "psu.c_psu");
        }
    }
    SECTION("index map is a bijection") {
        std::set<std::string> names(m.index().state_names().begin(), m.index().state_names().end());
        CHECK(names.size() == m.n_x());
        for (std::size_t i = 0; i < m.n_x(); ++i) CHECK(m.index().state_index(m.index().state_names()[i]) == i);
        std::mt19937 rng(5);
        Vector x = Vector::Random(static_cast<Eigen::Index>(m.n_x()));
        CHECK(m.states_from_names(m.named_states(x)) == x);
    }

    const auto op = solve_equilibrium(m, 0.5);
    std::mt19937 rng(11);

    SECTION("builds are deterministic") {
        const auto m2 = build_sdcib(p);
        for (int k = 0; k < 10; ++k) {
            const Vector x = random_like(op.x0, rng, 0.2), y = random_like(op.y0, rng, 0.2);
            const auto a = m.eval(x, y, 0.5), b = m2.eval(x, y, 0.5);
            CHECK(a.f == b.f);
            CHECK(a.g == b.g);
        }
    }
    SECTION("finite residuals in a 20% box") {
        for (int k = 0; k < 50; ++k) {
            const auto r = m.eval(random_like(op.x0, rng, 0.2), random_like(op.y0, rng, 0.2), 0.5);
            CHECK(r.f.allFinite());
            CHECK(r.g.allFinite());
        }
    }
    SECTION("a state perturbation stays inside its dependency cone") {
        const auto r0 = m.eval(op.x0, op.y0, 0.5);
        for (std::size_t i = 0; i < m.n_x(); ++i) {
            const auto& name = m.index().state_names()[i];
            Vector x = op.x0;
            x(static_cast<Eigen::Index>(i)) += 1e-3;
            const auto r = m.eval(x, op.y0, 0.5);
            const auto deps = m.dependents(name);
            for (const auto& block : m.index().block_order()) {
                const auto& s = m.index().slice(block);
                const bool changed = (r.f.segment(s.x_offset, s.n_x) - r0.f.segment(s.x_offset, s.n_x)).norm() > 0 ||
                                     (r.g.segment(s.y_offset, s.n_y) - r0.g.segment(s.y_offset, s.n_y)).norm() > 0;
                if (changed) {
                    INFO(name << " moved " << block);
                    CHECK(std::find(deps.begin(), deps.end(), block) != deps.end());
                }
            }
        }
    }
    SECTION("dimension mismatch") {
        CHECK_THROWS_AS(m.eval(Vector::Zero(3), op.y0, 0.5), Error);
    }
}

TEST_CASE("9-bus assembly", "[assembly][ninebus]") {
    const NinebusParams p;
    const auto m = build_ninebus(p);
    CHECK(m.n_x() == 58);
    std::vector<std::string> names;
    for (const auto& o : m.outputs()) names.push_back(o.name);
    CHECK(names == std::vector<std::string>{"p_sm", "p_gfm", "p_gfl", "p_dc"});

    NinebusLayout no_gfl;
    no_gfl.gfl = false;
    CHECK(build_ninebus(p, no_gfl).n_x() == 43);

    const auto op = solve_equilibrium(m, 0.5);
    CHECK(op.f_norm <= 1e-10);
    CHECK(op.g_norm <= 1e-10);
    const auto obs = m.observe(op.x0, op.y0, op.w0);
    CHECK(m.value("sm.omega", op.x0, op.y0, op.w0) == Approx(1.0).margin(1e-10));
    CHECK(m.value("sm.tau_m", op.x0, op.y0, op.w0) == Approx(obs.at("sm.tau_e")).margin(1e-9));
    CHECK(m.value("gfl.vq_pll", op.x0, op.y0, op.w0) == Approx(0.0).margin(1e-10));
    CHECK(obs.at("gfl.omega_pll") == Approx(1.0).margin(1e-10));
    CHECK(obs.at("afe.omega_pll") == Approx(1.0).margin(1e-10));
}

// ---------------------------------------------------------------- equilibrium

TEST_CASE("SDCIB operating point", "[equilibrium]") {
    const SdcibParams p;
    const auto m = build_sdcib(p);
    const auto op = solve_equilibrium(m, 0.5);
    const auto& x = op.x0;
    const auto& y = op.y0;
    auto v = [&](const char* n) { return m.value(n, x, y, 0.5); };

    CHECK(op.f_norm <= 1e-10);
    CHECK(op.g_norm <= 1e-10);
    CHECK(op.iterations <= 10);

    SECTION("integrator-forced setpoints") {
        CHECK(v("dclink.v_dc_ups") == Approx(1.0).margin(1e-10));
        CHECK(v("psu.v_psu") == Approx(1.0).margin(1e-10));
        CHECK(v("dcdc.v_eq") == Approx(0.5).margin(1e-10));
        CHECK(v("afe.i_q") == Approx(0.0).margin(1e-10));
        CHECK(v("afe.vq_pll") == Approx(0.0).margin(1e-10));
        CHECK(v("vsi.v_u") == Approx(p.dc.vsi.vu_ref).margin(1e-10));
        CHECK(v("vsi.v_v") == Approx(0.0).margin(1e-10));
        const auto obs = m.observe(x, y, 0.5);
        CHECK(obs.at("afe.omega_pll") == Approx(1.0).margin(1e-12));
        CHECK(obs.at("dclink.i_dc_in") == Approx(obs.at("dclink.i_dc_out")).margin(1e-10));
        CHECK(obs.at("dcdc.i_eq") == Approx(obs.at("dcdc.g_load") * 0.5).margin(1e-10));
    }
    SECTION("loss audit") {
        const double p_pcc = m.outputs_at(x, y, 0.5)(0);
        const double i_afe2 = std::pow(v("afe.i_d"), 2) + std::pow(v("afe.i_q"), 2);
        const double i_vsi2 = std::pow(v("vsi.i_cv_u"), 2) + std::pow(v("vsi.i_cv_v"), 2);
        const double g_eq = m.observe(x, y, 0.5).at("psu.g_eq");
        const double v_uv2 = std::pow(v("vsi.v_u"), 2) + std::pow(v("vsi.v_v"), 2);
        const double losses = p.dc.afe.r_afe * i_afe2 + p.dc.vsi.r_vsi * i_vsi2 + p.dc.psu.r_psu * g_eq * g_eq * v_uv2;
        CHECK(losses > 0.0);
        CHECK(p_pcc - 0.5 == Approx(losses).margin(1e-8));
    }
    SECTION("zero load is exact from the initial guess") {
        const auto z = solve_equilibrium(m, 0.0);
        CHECK(z.iterations == 0);
        CHECK(std::abs(m.value("dcdc.xi_eq", z.x0, z.y0, 0.0)) < 1e-12);
        // Only the VSI filter circulates current, so the grid supplies its copper loss.
        auto vz = [&](const char* n) { return m.value(n, z.x0, z.y0, 0.0); };
        const double loss = p.dc.afe.r_afe * (std::pow(vz("afe.i_d"), 2) + std::pow(vz("afe.i_q"), 2)) +
                            p.dc.vsi.r_vsi * (std::pow(vz("vsi.i_cv_u"), 2) + std::pow(vz("vsi.i_cv_v"), 2));
        const double p0 = m.outputs_at(z.x0, z.y0, 0.0)(0);
        CHECK(p0 > 0.0);
        CHECK(p0 == Approx(loss).margin(1e-10));
    }
    SECTION("independent of the starting point") {
        std::mt19937 rng(2);
        const auto guess = m.initial_guess(0.5);
        const Vector xg = random_like(guess.first, rng, 0.02), yg = random_like(guess.second, rng, 0.02);
        const auto other = solve_equilibrium(m, 0.5, xg, yg, {});
        CHECK((other.x0 - x).lpNorm<Eigen::Infinity>() < 1e-8);
        CHECK((other.y0 - y).lpNorm<Eigen::Infinity>() < 1e-8);
        REQUIRE(other.history.size() >= 3);
        // Quadratic tail: each of the last residuals is far below the previous one.
        const auto& h = other.history;
        const double e1 = h[h.size() - 3], e2 = h[h.size() - 2];
        CHECK(e2 <= 10.0 * e1 * e1 + 1e-12);
    }
    SECTION("continuation in load") {
        double prev_i = 0.0;
        Vector prev_x;
        for (double w = 0.2; w <= 1.0 + 1e-9; w += 0.05) {
            const auto o = solve_equilibrium(m, w);
            const double i = afe_current(m, o);
            CHECK(i > prev_i);
            if (prev_x.size()) CHECK((o.x0 - prev_x).lpNorm<Eigen::Infinity>() < 1.0);
            prev_i = i;
            prev_x = o.x0;
        }
    }
    SECTION("overload converges or reports") {
        try {
            const auto o = solve_equilibrium(m, 1.2);
            CHECK(o.f_norm <= 1e-10);
            CHECK(afe_current(m, o) > afe_current(m, op));
        } catch (const SolverError& e) {
            CHECK(std::string(e.what()).size() > 0);
        }
    }
    SECTION("iteration limit") {
        auto guess = m.initial_guess(0.5);
        guess.first *= 0.5;
        CHECK_THROWS_AS(solve_equilibrium(m, 0.5, guess.first, guess.second, {1e-10, 1}), SolverError);
    }
}

// ---------------------------------------------------------------- grid devices and network

TEST_CASE("synchronous machine", "[gridmodels]") {
    const SmParams p;
    grid::SmState s;
    s.e_qp = 0.5 * p.x_dp;
    s.e_dp = 1.0;
    const auto r = grid::sm_residuals(s, {1.0, 0.0}, p, base60());
    CHECK(r.i_dq.x() == Approx(0.5));
    CHECK(r.i_dq.y() == Approx(0.0).margin(1e-15));
    CHECK(r.tau_e == Approx(0.5));
    CHECK(grid::exciter_saturation(0.0, p) == Approx(0.0039));
}

TEST_CASE("grid-forming droop", "[gridmodels]") {
    GfmParams p;
    grid::GfmState s;
    s.p_oc = p.p_ref - 0.1;
    s.q_oc = p.q_ref;
    const auto r = grid::gfm_residuals(s, {1.0, 0.0}, p, base60());
    CHECK(r.omega - p.omega_ref == Approx(0.002));
    s.p_oc = p.p_ref;
    CHECK(grid::gfm_residuals(s, {1.0, 0.0}, p, base60()).omega == p.omega_ref);
}

TEST_CASE("grid-following measurements", "[gridmodels]") {
    GflParams p;
    grid::GflState s;
    s.v_f = {1.0, 0.0};
    s.i_g = {0.3, 0.1};
    const auto r = grid::gfl_residuals(s, {1.0, 0.0}, p, base60());
    CHECK(r.p == Approx(0.3));
    CHECK(r.q == Approx(-0.1));

    SECTION("at the power setpoints only the integrators drive the reference") {
        s.p_m = p.p_ref;
        s.q_m = p.q_ref;
        s.sigma_p = 0.7;
        s.sigma_q = 0.2;
        const auto a = grid::gfl_residuals(s, {1.0, 0.0}, p, base60());
        CHECK(a.i_ref.x() == Approx(p.ki_p * 0.7));
        CHECK(a.i_ref.y() == Approx(-p.ki_q * 0.2));
    }
    SECTION("frame round trip") {
        s.theta = 0.9;
        const auto b = grid::gfl_residuals(s, {1.0, 0.0}, p, base60());
        CHECK((rotate(FrameAngle{0.9}, b.i_ri) - s.i_g).norm() < 1e-15);
    }
}

TEST_CASE("network power flow", "[gridmodels]") {
    SECTION("standard dispatch") {
        const auto n = grid::wscc9();
        const auto pf = grid::power_flow(n);
        for (Eigen::Index k = 0; k < pf.v.size(); ++k) {
            CHECK(std::abs(pf.v(k)) >= 0.9);
            CHECK(std::abs(pf.v(k)) <= 1.1);
        }
        // Published WSCC 9-bus solution.
        CHECK(pf.s_inj(0).real() == Approx(0.7164).margin(2e-4));
        CHECK(std::abs(pf.v(4)) == Approx(0.9956).margin(1e-4));
        CHECK(std::abs(pf.v(7)) == Approx(1.0159).margin(1e-4));

        // Generation = load + losses.
        const CMatrix y = grid::admittance(n);
        const CVector i = y * pf.v;
        double losses = 0.0, load = 0.0, gen = 0.0;
        for (const auto& br : n.branches) {
            const Complex z{br.r, br.x};
            const Complex ib = (pf.v(br.from) - pf.v(br.to)) / z;
            losses += br.r * std::norm(ib);
        }
        for (std::size_t k = 0; k < n.buses.size(); ++k) {
            load += n.buses[k].p_load;
            const auto kk = static_cast<Eigen::Index>(k);
            gen += (pf.v(kk) * std::conj(i(kk))).real() + n.buses[k].p_load;
        }
        CHECK(gen == Approx(load + losses).margin(1e-8));
    }
    SECTION("homogeneous network") {
        auto n = grid::wscc9();
        for (auto& b : n.buses) {
            b.p_load = b.q_load = b.p_gen = 0.0;
            b.v_set = 1.04;
        }
        for (auto& br : n.branches) br.b = 0.0;
        const auto pf = grid::power_flow(n);
        for (Eigen::Index k = 0; k < pf.v.size(); ++k) CHECK(std::abs(pf.v(k) - Complex{1.04, 0.0}) < 1e-10);
    }
    SECTION("without the data center the dynamic model matches the plain power flow") {
        NinebusLayout l;
        l.datacenter = false;
        const auto m = build_ninebus(NinebusParams{}, l);
        const auto op = solve_equilibrium(m, 0.5);
        const auto pf = grid::power_flow(grid::wscc9());
        const Complex ref{m.value("net.v1_r", op.x0, op.y0, 0.5), m.value("net.v1_i", op.x0, op.y0, 0.5)};
        for (int k = 0; k < 9; ++k) {
            const std::string b = "net.v" + std::to_string(k + 1);
            const Complex vk{m.value(b + "_r", op.x0, op.y0, 0.5), m.value(b + "_i", op.x0, op.y0, 0.5)};
            CHECK(std::abs(vk / ref - pf.v(k) / pf.v(0)) < 1e-8);
        }
    }
}
