#include "dcpower/core.hpp"
#include "dcpower/io.hpp"
#include "dcpower/params.hpp"
#include "dcpower/tuning.hpp"
#include "dcpower/workload.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace dcpower;
using Catch::Approx;

namespace {

// Agreement to the given number of significant figures of the reference value.
bool same_to_sig_figs(double value, double reference, int digits) {
    const double scale = std::pow(10.0, std::floor(std::log10(std::abs(reference))) - digits + 1);
    return std::abs(value - reference) <= 0.5 * scale + 1e-12;
}

}  // namespace

TEST_CASE("frame rotation and J", "[core]") {
    SECTION("identity and quarter turn") {
        const Vec2 a = rotate(FrameAngle{0.0}, {1.0, 0.0});
        CHECK(a.x() == Approx(1.0));
        CHECK(a.y() == Approx(0.0).margin(1e-15));
        const Vec2 b = rotate(FrameAngle{std::numbers::pi / 2}, {1.0, 0.0});
        CHECK(b.x() == Approx(0.0).margin(1e-15));
        CHECK(b.y() == Approx(-1.0));
    }
    SECTION("round trip for random angles") {
        std::mt19937 rng(3);
        std::uniform_real_distribution<double> u(-5.0, 5.0);
        for (int k = 0; k < 50; ++k) {
            const FrameAngle th{u(rng)};
            const Vec2 v{u(rng), u(rng)};
            const Vec2 back = unrotate(th, rotate(th, v));
            CHECK((back - v).norm() < 1e-13);
        }
    }
    SECTION("J columns and J^2 = -I") {
        CHECK(jmul({1.0, 0.0}) == Vec2(0.0, 1.0));
        CHECK(jmul({0.0, 1.0}) == Vec2(-1.0, 0.0));
        const Vec2 v{0.37, -1.2};
        CHECK(jmul(jmul(v)) == -v);
    }
    SECTION("rotation is multiplication by exp(-j theta)") {
        const double th = 0.7;
        const Vec2 v{0.3, 0.9};
        const Complex z = to_complex(v) * std::exp(Complex{0.0, -th});
        CHECK((rotate(FrameAngle{th}, v) - to_vec2(z)).norm() < 1e-15);
    }
}

TEST_CASE("parameter sets", "[core][params]") {
    SdcibParams p;
    const auto flat = flatten(p);
    CHECK(flat.at("dcchain.p_load") == 0.5);
    CHECK(flat.at("grid.r_inf") == 0.02);
    CHECK(flat.at("grid.x_inf") == 0.19);
    CHECK(flat.at("dcchain.afe.kp_pll") == Approx(0.471).margin(5e-4));

    set_parameter(p, "dcchain.vsi.kp_v", 0.4);
    CHECK(p.dc.vsi.kp_v == 0.4);
    CHECK_THROWS_AS(set_parameter(p, "dcchain.vsi.no_such_gain", 1.0), ParameterError);
    CHECK_THROWS_AS(set_parameter(p, "grid.x_inf", std::nan("")), ParameterError);

    SdcibParams bad;
    bad.dc.dclink.c_dc = 0.0;
    CHECK_THROWS_AS(validate(bad), ParameterError);

    NinebusParams nb;
    CHECK(flatten(nb).count("gfm.kp_droop") == 1);
    CHECK(flatten(nb).count("network.p_gen2") == 1);
}

TEST_CASE("bandwidth tuning reproduces the reference gains", "[tuning]") {
    using namespace tuning;
    const DataCenterParams d;
    const double wb = d.base.base.omega_b;
    struct Row {
        const char* name;
        TuningSpec spec;
        double kp, ki;
    };
    // Plants come from the default parameter set; reference gains rounded.
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
        INFO(r.name);
        const auto g = tune(r.spec, wb);
        CHECK(same_to_sig_figs(g.kp, r.kp, 3));
        CHECK(same_to_sig_figs(g.ki, r.ki, 3));
    }

    SECTION("spec examples") {
        const auto pll = tune({20.0, 0.707, PllPlant{}}, 2 * std::numbers::pi * 60);
        CHECK(pll.kp == Approx(0.471).margin(5e-4));
        CHECK(pll.ki == Approx(41.89).margin(5e-3));
        const auto v = tune({5.0, 1.0, VoltagePlant{2.0}}, 2 * std::numbers::pi * 60);
        CHECK(v.kp == Approx(0.333).margin(5e-4));
        CHECK(v.ki == Approx(5.236).margin(5e-4));
        const auto c = tune({1000.0, 1.0, CurrentPlant{0.05, 0.005}}, 2 * std::numbers::pi * 60);
        CHECK(c.kp == Approx(1.6617).margin(5e-5));
        CHECK(c.ki == Approx(5236).margin(0.5));
    }
    SECTION("invalid specs") {
        CHECK_THROWS_AS(tune({0.0, 1.0, PllPlant{}}, wb), ParameterError);
        CHECK_THROWS_AS(tune({10.0, -1.0, PllPlant{}}, wb), ParameterError);
        CHECK_THROWS_AS(tune({1.0, 1.0, CurrentPlant{0.01, 5.0}}, wb), ParameterError);
    }
    SECTION("the default loops reproduce the default gains") {
        const auto flat = [&] {
            auto copy = d;
            return flatten(copy);
        }();
        for (const auto& l : datacenter_loops(d)) {
            INFO(l.name);
            const auto g = tune(l.spec, wb);
            CHECK(same_to_sig_figs(g.kp, flat.at(l.kp), 3));
            CHECK(same_to_sig_figs(g.ki, flat.at(l.ki), 3));
        }
    }
    SECTION("retune moves one loop only") {
        auto p = d;
        retune(p, "vsi.voltage", 50.0);
        CHECK(p.vsi.kp_v == Approx(2 * 2 * std::numbers::pi * 50 * d.vsi.c_vsi / wb));
        CHECK(p.vsi.kp_c == d.vsi.kp_c);
        CHECK_THROWS_AS(retune(p, "vsi.nothing", 10.0), ParameterError);
    }
}

TEST_CASE("load traces", "[workload]") {
    using namespace workload;
    SECTION("two samples with a gain mapping") {
        std::istringstream in("t_seconds,p_load_pu\n0,100\n1,100\n");
        const auto tr = parse_csv(in, Scaling::affine(0.0, 0.005));
        REQUIRE(tr.p.size() == 2);
        CHECK(tr.p[0] == Approx(0.5));
        CHECK(tr.p[1] == Approx(0.5));
        const auto sig = resample(tr, 0.25);
        CHECK(sig(0.6) == Approx(0.5));
    }
    SECTION("mean normalization") {
        std::istringstream in("# GPU power\n0,310\n0.1,290\n0.2,420\n0.3,260\n");
        const auto tr = parse_csv(in, Scaling::to_mean(0.5));
        CHECK(tr.mean() == Approx(0.5).epsilon(1e-12));
        std::istringstream in2("0,1\n1,2\n2,6\n");
        const auto tr2 = parse_csv(in2, Scaling::to_mean(0.5, 0.8));
        CHECK(tr2.mean() == Approx(0.5).epsilon(1e-12));
        CHECK(*std::max_element(tr2.p.begin(), tr2.p.end()) == Approx(0.8));
    }
    SECTION("100 s at 100 ms") {
        std::ostringstream csv;
        for (int k = 0; k <= 1000; ++k) csv << k * 0.1 << ',' << 1.0 + 0.1 * std::sin(k) << '\n';
        std::istringstream in(csv.str());
        const auto tr = parse_csv(in);
        CHECK(tr.t.size() == 1001);
        CHECK(tr.duration() == Approx(100.0));
    }
    SECTION("midpoint interpolation") {
        std::istringstream in("0,0\n1,1\n");
        const auto r = resample_trace(parse_csv(in), 0.5);
        REQUIRE(r.p.size() == 3);
        CHECK(r.p[0] == 0.0);
        CHECK(r.p[1] == Approx(0.5));
        CHECK(r.p[2] == Approx(1.0));
    }
    SECTION("constant trace gives a constant signal") {
        std::istringstream in("0,0.4\n1,0.4\n2,0.4\n");
        const auto s = resample(parse_csv(in), 0.1);
        for (double t : {0.0, 0.33, 1.7, 2.0, 5.0}) CHECK(s(t) == Approx(0.4));
    }
    SECTION("resampled 2 Hz trace keeps its spectral line") {
        std::ostringstream csv;
        for (int k = 0; k <= 200; ++k) csv << k * 0.1 << ',' << 0.5 + 0.1 * std::sin(2 * std::numbers::pi * 2.0 * k * 0.1 + 0.3) << '\n';
        std::istringstream in(csv.str());
        const auto r = resample_trace(parse_csv(in), 0.01);
        std::vector<double> samples(r.p.begin(), r.p.end() - 1);
        const auto sp = amplitude_spectrum(samples, 0.01, true);
        const auto peak = std::max_element(sp.magnitude.begin(), sp.magnitude.end()) - sp.magnitude.begin();
        CHECK(std::abs(sp.f_hz[static_cast<std::size_t>(peak)] - 2.0) <= sp.resolution());
    }
    SECTION("malformed input") {
        std::istringstream a("0,1\n0,2\n");
        CHECK_THROWS_AS(parse_csv(a), ParseError);
        std::istringstream b("0,1\n1,abc\n");
        CHECK_THROWS_AS(parse_csv(b), ParseError);
        std::istringstream c("0;1\n");
        CHECK_THROWS_AS(parse_csv(c), ParseError);
        std::istringstream d("0,1\n1,-3\n");
        CHECK_THROWS_AS(parse_csv(d), ParseError);
        std::istringstream e("");
        CHECK_THROWS_AS(parse_csv(e), ParseError);
    }
    SECTION("synthetic stand-in") {
        const auto tr = synthetic_gpu_trace();
        CHECK(tr.t.size() == 1001);
        CHECK(tr.mean() == Approx(0.5).epsilon(1e-12));
        CHECK(synthetic_gpu_trace().p == tr.p);
        std::ostringstream out;
        write_csv(out, tr);
        std::istringstream back(out.str());
        CHECK(parse_csv(back).p == tr.p);
    }
}

TEST_CASE("scenario files", "[io]") {
    SECTION("number format") {
        CHECK(io::format_number(1.0) == "1.00000000e+00");
        CHECK(io::format_number(-0.0) == "0.00000000e+00");
        CHECK(io::format_number(5.54123456789) == "5.54123457e+00");
    }
    SECTION("known keys and overrides") {
        std::istringstream in("[scenario]\ntopology = sdcib\nanalyses = modes, poa\n[parameters]\ndcchain.vsi.kp_v = 0.5\n");
        auto c = io::Config::parse(in);
        CHECK(c.get("scenario.topology", std::string()) == "sdcib");
        c.apply_override("dcchain.psu.kp_v=0.7");
        c.apply_override("simulate.t_end=2");
        const auto ov = c.overrides();
        REQUIRE(ov.size() == 2);
        CHECK(ov[1].first == "dcchain.psu.kp_v");
        CHECK(c.get("simulate.t_end", 0.0) == 2.0);
    }
    SECTION("unknown keys are rejected") {
        std::istringstream a("[scenario]\ntopolgy = sdcib\n");
        CHECK_THROWS_AS(io::Config::parse(a), ConfigError);
        std::istringstream b("[simulat]\nt_end = 1\n");
        CHECK_THROWS_AS(io::Config::parse(b), ConfigError);
        io::Config c;
        CHECK_THROWS_AS(c.apply_override("no_equals_sign"), ConfigError);
    }
    SECTION("type checks") {
        std::istringstream in("[simulate]\nt_end = soon\nrecord_every = 2.5\n[parameters]\ndcchain.p_load = lots\n");
        const auto c = io::Config::parse(in);
        CHECK_THROWS_AS(c.get("simulate.t_end", 1.0), ConfigError);
        CHECK_THROWS_AS(c.get("simulate.record_every", 1), ConfigError);
        CHECK_THROWS_AS(c.overrides(), ConfigError);
    }
    SECTION("value ranges") {
        CHECK(io::parse_values("v", "0.2:1.0:5") == std::vector<double>{0.2, 0.4, 0.6000000000000001, 0.8, 1.0});
        CHECK(io::parse_values("v", "1, 2 3") == std::vector<double>{1, 2, 3});
        CHECK_THROWS_AS(io::parse_values("v", "1:2"), ConfigError);
    }
    SECTION("CSV tables need a header and square rows") {
        io::CsvTable t({"a", "b"});
        t.add(std::vector<double>{1.0, 2.0});
        CHECK(t.str() == "a,b\n1.00000000e+00,2.00000000e+00\n");
        CHECK_THROWS(t.add(std::vector<double>{1.0}));
    }
}
