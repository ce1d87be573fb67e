// Command-line front end: dcchain <subcommand> --config file [--override k=v ...] [--out dir]

#include "dcpower/runner.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

using namespace dcpower;

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config,-c", c.config, "scenario INI file")->check(CLI::ExistingFile);
    sub->add_option("--override,-O", c.overrides, "section.key=value or dotted.parameter=value")->take_all();
    sub->add_option("--out,-o", c.out, "output directory (default: $DCCHAIN_OUT, then scenario.output_dir)");
}

io::Config load(const Common& c) {
    io::Config cfg = c.config.empty() ? io::Config{} : io::Config::load(c.config);
    for (const auto& o : c.overrides) cfg.apply_override(o);
    return cfg;
}

std::filesystem::path out_dir(const Common& c, const runner::Scenario& sc) {
    if (!c.out.empty()) return c.out;
    if (const char* env = std::getenv("DCCHAIN_OUT"); env && *env) return env;
    return sc.output_dir;
}

void report(const runner::RunResult& r) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& f : r.files) std::cout << f.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic and small-signal analysis of data-center power-delivery chains"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(runner::kVersion));

    Common common;
    std::string figure, input;
    double t_end = 0.0, dt = 0.0;

    const std::vector<std::pair<std::string, std::string>> analyses{
        {"equilibrium", "solve the operating point"},
        {"modes", "eigenvalues, damping and participation table"},
        {"poa", "power oscillation amplification curve"},
        {"simulate", "time-domain run under a load input"},
        {"spectrum", "simulate, then the amplitude spectrum of one signal"},
        {"sweep", "parameter sweep with mode tracking"},
        {"validate-fullorder", "full-order against reduced step response"},
        {"tune", "PI gains from loop bandwidth targets"},
    };
    std::vector<std::pair<std::string, CLI::App*>> subs;
    for (const auto& [name, help] : analyses) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, common);
        if (name == "simulate" || name == "spectrum") {
            sub->add_option("--input", input, "constant:v | step:t0,from,to | sine:base,amp,t@f,... | trace[:file.csv]");
            sub->add_option("--tend", t_end, "end time (s)");
            sub->add_option("--dt", dt, "step size (s)");
        }
        subs.emplace_back(name, sub);
    }
    auto* run_cmd = app.add_subcommand("run", "run the analyses listed in scenario.analyses");
    add_common(run_cmd, common);
    auto* fig_cmd = app.add_subcommand("fig", "data series behind one reference figure");
    add_common(fig_cmd, common);
    fig_cmd->add_option("figure", figure, "fig4 | fig5 | fig6 | fig7 | fig9 | fig10 | fig11")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load(common);
        if (!input.empty()) cfg.set("simulate.input", input);
        if (t_end > 0.0) cfg.set("simulate.t_end", std::to_string(t_end));
        if (dt > 0.0) cfg.set("simulate.dt", std::to_string(dt));
        auto sc = runner::from_config(cfg);
        const auto out = out_dir(common, sc);
        if (fig_cmd->parsed()) {
            report(runner::fig_repro(figure, sc, out));
            return 0;
        }
        if (!run_cmd->parsed()) {
            for (const auto& [name, sub] : subs)
                if (sub->parsed()) sc.analyses = {name};
        }
        if (sc.analyses.empty()) throw ConfigError("no analyses requested");
        report(runner::run(sc, out));
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
