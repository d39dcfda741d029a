// gfmstab command line front end.
//
//   gfmstab <command> --config PATH --out DIR [--threads N] [--seed N]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "gfmstab/gfmstab.hpp"

namespace fs = std::filesystem;
using namespace gfmstab;

namespace {

struct Args {
    std::string command;
    std::string config;
    std::string out = ".";
    unsigned threads = 0;
    unsigned long long seed = 0;
};

/// Rendered artifacts, written only once the whole command has succeeded.
struct Artifacts {
    std::vector<std::pair<std::string, std::string>> files;
    void add(std::string name, std::string body) { files.emplace_back(std::move(name), std::move(body)); }
};

template <class F>
std::string render(F&& f) {
    std::ostringstream os;
    f(os);
    return os.str();
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json with_meta(const ArtifactMeta& m, const char* key, nlohmann::json body) {
    nlohmann::json j = meta_json(m);
    j[key] = std::move(body);
    return j;
}

std::vector<double> default_eta_grid() {
    std::vector<double> g;
    for (int k = 1; k <= 99; ++k) g.push_back(k / 100.0);
    g.push_back(0.499);
    g.push_back(0.501);
    std::sort(g.begin(), g.end());
    return g;
}

SweepResult run_sweep(const SystemModel& sys, const StudySpec& st, unsigned threads) {
    SweepOptions so;
    so.stability = st.stability;
    so.warm_start = st.warm_start;
    so.threads = threads;
    return pv_sweep(sys, st.sweep.from, st.sweep.to, st.sweep.step, so);
}

void cmd_powerflow(const SystemModel& sys, const Scenario& sc, const ArtifactMeta& m, Artifacts& out) {
    const OperatingPoint op = initialize(sys, sc.study.at);
    out.add("operating_point.json", dump(with_meta(m, "operating_point", to_json(sys, op))));
}

void cmd_eigs(const SystemModel& sys, const Scenario& sc, const ArtifactMeta& m, Artifacts& out) {
    const OperatingPoint op = initialize(sys, sc.study.at);
    const EigenReport rep = analyze(sys, op, sc.study.stability);
    out.add("eigs.json", dump(with_meta(m, "eigen_report", to_json(rep))));
}

void cmd_pv_sweep(const SystemModel& sys, const Scenario& sc, const ArtifactMeta& m, Artifacts& out, unsigned threads) {
    const SweepResult sw = run_sweep(sys, sc.study, threads);
    const BifurcationReport b = analyze_sweep(sys, sw, sc.study.classify, sc.study.stability, sc.study.refine_tol);
    out.add("sweep.csv", render([&](std::ostream& os) { write_sweep_csv(os, sw, m); }));
    out.add("bifurcation.json", dump(with_meta(m, "bifurcation", to_json(b))));
}

void cmd_eta_sweep(const SystemModel& sys, const Scenario& sc, const ArtifactMeta& m, Artifacts& out) {
    if (sys.parameter_name != "eta") throw ConfigError("eta-sweep needs study.parameter = \"eta\"");
    const auto grid = sc.study.eta_grid.empty() ? default_eta_grid() : sc.study.eta_grid;
    const auto pts = eta_rootlocus(sys, grid, sc.study.guard, sc.study.stability);
    out.add("rootlocus.csv", render([&](std::ostream& os) { write_rootlocus_csv(os, pts, m); }));
}

void cmd_simulate(const SystemModel& sys, const Scenario& sc, const ArtifactMeta& m, Artifacts& out) {
    const SimulateSpec& s = sc.study.simulate;
    for (const auto& [label, d] : s.perturbation)
        if (sys.x_index(label) < 0) throw ConfigError("study.simulate.perturbation: unknown state " + label);
    for (const auto& l : s.phase)
        if (sys.x_index(l) < 0) throw ConfigError("study.simulate.phase: unknown state " + l);
    const OperatingPoint op = initialize(sys, sc.study.at);
    IntegrateOptions io;
    io.tol = sc.study.newton_tol;
    io.record_every = s.record_every;
    const double dt = s.dt > 0.0 ? s.dt : default_dt(sys.mode);
    const Trajectory tr = integrate(sys, op, s.perturbation, s.t_end, dt, io);
    if (tr.truncated) std::cerr << "gfmstab: warning: trajectory truncated: " << tr.reason << "\n";
    out.add("trajectory.csv", render([&](std::ostream& os) { write_trajectory_csv(os, tr, m); }));
    if (s.phase.size() == 2)
        out.add("phase.csv", render([&](std::ostream& os) { write_phase_csv(os, tr, s.phase[0], s.phase[1], m); }));
}

void cmd_probe(const SystemModel& sys, const Scenario& sc, const ArtifactMeta& m, Artifacts& out, unsigned threads) {
    const ProbeSpec& p = sc.study.probe;
    if (sys.x_index(p.state) < 0) throw ConfigError("study.probe.state: unknown state " + p.state);
    for (const auto& l : sc.study.simulate.phase)
        if (sys.x_index(l) < 0) throw ConfigError("study.simulate.phase: unknown state " + l);

    double level = sc.study.at;
    nlohmann::json info = nlohmann::json::object();
    if (p.below_pstar) {
        const SweepResult sw = run_sweep(sys, sc.study, threads);
        const BifurcationReport b = analyze_sweep(sys, sw, sc.study.classify, sc.study.stability, sc.study.refine_tol);
        if (b.kind == BifurcationKind::none || !std::isfinite(b.p_star))
            throw NumericalFailure("probe-cycle: the sweep shows no stability boundary to probe below (" + b.note + ")");
        level = (1.0 - *p.below_pstar) * b.p_star;
        info["bifurcation"] = to_json(b);
    }
    const OperatingPoint op = initialize(sys, level);
    const EigenReport rep = analyze(sys, op, sc.study.stability);
    if (!rep.stable) std::cerr << "gfmstab: warning: probed equilibrium is not small-signal stable\n";

    ProbeOptions po;
    po.dt = p.dt;
    po.threads = threads;
    po.keep_trajectories = true;
    po.integrate.tol = sc.study.newton_tol;
    po.integrate.record_every = p.record_every;
    const auto res = probe_limit_cycle(sys, op, p.state, p.amplitudes, p.t_end, po);

    info["level"] = num(level);
    info["state"] = p.state;
    info["max_real"] = num(rep.max_real);
    nlohmann::json runs = nlohmann::json::array();
    std::vector<std::string> cols{p.state};
    for (const auto& l : sc.study.simulate.phase)
        if (l != p.state) cols.push_back(l);
    for (std::size_t i = 0; i < res.size(); ++i) {
        const std::string name = "trajectory_" + std::to_string(i) + ".csv";
        runs.push_back({{"amplitude", num(res[i].amplitude)},
                        {"verdict", to_string(res[i].verdict)},
                        {"terminal_envelope", num(res[i].terminal_envelope)},
                        {"reason", res[i].reason},
                        {"file", name}});
        out.add(name, render([&](std::ostream& os) { write_trajectory_csv(os, res[i].trajectory, m, cols); }));
    }
    info["runs"] = runs;
    out.add("probe.csv", render([&](std::ostream& os) { write_probe_csv(os, res, m); }));
    out.add("probe.json", dump(with_meta(m, "probe", info)));
}

void write_all(const fs::path& dir, const Artifacts& a) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    for (const auto& [name, body] : a.files) {
        std::ofstream f(dir / name, std::ios::binary);
        f << body;
        if (!f) throw ConfigError("cannot write " + (dir / name).string());
    }
}

int run(const Args& a) {
    const Scenario sc = load_scenario(a.config);
    const SystemModel sys = assemble(sc.spec);
    const unsigned threads = a.threads ? a.threads : std::max(1u, std::thread::hardware_concurrency());
    const ArtifactMeta m{a.command, sc.hash, sc.spec.name};

    Artifacts out;
    if (a.command == "powerflow")
        cmd_powerflow(sys, sc, m, out);
    else if (a.command == "eigs")
        cmd_eigs(sys, sc, m, out);
    else if (a.command == "pv-sweep")
        cmd_pv_sweep(sys, sc, m, out, threads);
    else if (a.command == "eta-sweep")
        cmd_eta_sweep(sys, sc, m, out);
    else if (a.command == "simulate")
        cmd_simulate(sys, sc, m, out);
    else
        cmd_probe(sys, sc, m, out, threads);
    write_all(a.out, out);
    for (const auto& f : out.files) std::cout << (fs::path(a.out) / f.first).string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stability studies of a source feeding a load through a line"};
    app.require_subcommand(1, 1);
    Args a;
    const char* commands[][2] = {
        {"powerflow", "equilibrium at study.at"},
        {"eigs", "small-signal eigenvalues and participation at study.at"},
        {"pv-sweep", "parameter sweep with bifurcation classification"},
        {"eta-sweep", "root locus over the ZIP split eta"},
        {"simulate", "time-domain response to a state perturbation"},
        {"probe-cycle", "amplitude probe for a limit cycle around the equilibrium"},
    };
    for (auto& c : commands) {
        CLI::App* sub = app.add_subcommand(c[0], c[1]);
        sub->add_option("--config", a.config, "scenario JSON file")->required();
        sub->add_option("--out", a.out, "output directory");
        sub->add_option("--threads", a.threads, "worker threads (0: hardware concurrency)");
        sub->add_option("--seed", a.seed, "seed for randomized suites (recorded only)");
        sub->callback([&a, name = std::string(c[0])] { a.command = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        return run(a);
    } catch (const ConfigError& e) {
        std::cerr << "gfmstab: config error: " << e.what() << "\n";
        return 2;
    } catch (const InvalidParameter& e) {
        std::cerr << "gfmstab: invalid parameter: " << e.what() << "\n";
        return 2;
    } catch (const InvalidSplit& e) {
        std::cerr << "gfmstab: invalid split: " << e.what() << "\n";
        return 2;
    } catch (const ContractViolation& e) {
        std::cerr << "gfmstab: contract violation: " << e.what() << "\n";
        return 2;
    } catch (const NoEquilibrium& e) {
        std::cerr << "gfmstab: no equilibrium: " << e.what() << "\n";
        return 3;
    } catch (const Singularity& e) {
        std::cerr << "gfmstab: singular algebraic Jacobian: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "gfmstab: numerical failure: " << e.what() << "\n";
        return 3;
    }
}
