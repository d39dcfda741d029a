#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace gfmstab;
using namespace gfmstab::testing;
using Catch::Approx;

namespace {

const double kOmegaB = 2.0 * std::numbers::pi * 60.0;
const Phasor kVs{1.0, 0.0}, kVl{0.98, -0.1};
constexpr double kR = 0.01, kX = 0.1;

SystemModel rl_line() {
    SystemModel s;
    s.mode = NetworkMode::emt;
    s.x_labels = {"line.i_d", "line.i_q"};
    s.x_rotation = {Rotation::d, Rotation::q};
    const LineParams p{kR, kX};
    s.eval = [p, base = s.base](const Eigen::VectorXd& xv, const Eigen::VectorXd&, const Eigen::VectorXd&,
                                Eigen::VectorXd& f, Eigen::VectorXd& g) {
        const Phasor d = emt_line_residual({xv(0), xv(1)}, kVs, kVl, p, base);
        f.resize(2);
        f << d.d, d.q;
        g.resize(0);
    };
    return s;
}

Complex rl_steady() { return (Complex{kVs.d, kVs.q} - Complex{kVl.d, kVl.q}) / Complex{kR, kX}; }

OperatingPoint rl_equilibrium(const SystemModel& sys) {
    OperatingPoint op = origin(sys);
    op.x << rl_steady().real(), rl_steady().imag();
    return op;
}

// closed-form deviation from steady state after a kick e0 on i_d
Complex rl_exact(double e0, double t) { return e0 * std::exp(-kOmegaB * Complex{kR, kX} * t / kX); }

double rl_error(double dt) {
    const SystemModel sys = rl_line();
    const OperatingPoint op = rl_equilibrium(sys);
    const double t_end = 0.02;
    const Trajectory tr = integrate(sys, op, {{"line.i_d", 0.1}}, t_end, dt);
    double err = 0.0;
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        const Complex e{tr.x[i](0) - op.x(0), tr.x[i](1) - op.x(1)};
        err = std::max(err, std::abs(e - rl_exact(0.1, tr.t[i])));
    }
    return err;
}

double max_state_drift(const Trajectory& tr, const OperatingPoint& op) {
    double m = 0.0;
    for (const auto& x : tr.x) m = std::max(m, (x - op.x).lpNorm<Eigen::Infinity>());
    return m;
}

}  // namespace

TEST_CASE("equilibrium is a fixed point of the integrator") {
    for (auto [mode, src, load, level] :
         {std::tuple{NetworkMode::emt, SourceKind::droop, LoadKind::cil, 1.0},
          std::tuple{NetworkMode::emt, SourceKind::genrou, LoadKind::ccl, 0.8},
          std::tuple{NetworkMode::qsp, SourceKind::vsm, LoadKind::cpl, 0.5},
          std::tuple{NetworkMode::emt, SourceKind::dvoc, LoadKind::active, 0.5}}) {
        const SystemModel sys = assemble(scenario(mode, src, load));
        const OperatingPoint op = initialize(sys, level);
        const Trajectory tr = integrate(sys, op, {}, 0.05, default_dt(mode));
        INFO(sys.name);
        REQUIRE_FALSE(tr.truncated);
        CHECK(max_state_drift(tr, op) < 1e-7);
    }
}

TEST_CASE("RL step response matches the closed form") {
    CHECK(rl_error(50e-6) < 1e-4);
}

TEST_CASE("trapezoidal rule is second order") {
    const double coarse = rl_error(200e-6), fine = rl_error(100e-6);
    const double ratio = coarse / fine;
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
}

TEST_CASE("algebraic constraints hold along trajectories") {
    const SystemModel sys = assemble(scenario(NetworkMode::emt, SourceKind::droop, LoadKind::cil));
    const OperatingPoint op = initialize(sys, 1.0);
    const Trajectory tr = integrate(sys, op, {{"gfm.delta", 0.05}}, 0.2, 50e-6);
    REQUIRE_FALSE(tr.truncated);
    for (std::size_t i = 0; i < tr.t.size(); ++i)
        CHECK(residual(sys, tr.x[i], tr.y[i], op.theta).g.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("small perturbation of a stable equilibrium decays") {
    const SystemModel sys = assemble(scenario(NetworkMode::emt, SourceKind::droop, LoadKind::cil));
    const OperatingPoint op = initialize(sys, 1.0);
    REQUIRE(analyze(sys, op).stable);
    const Trajectory tr = integrate(sys, op, {{"line.i_d", 0.05}}, 2.0, 50e-6);
    REQUIRE_FALSE(tr.truncated);
    CHECK((tr.x.back() - op.x).lpNorm<Eigen::Infinity>() < 5e-4);
}

TEST_CASE("recording stride keeps the final sample") {
    const SystemModel sys = rl_line();
    IntegrateOptions io;
    io.record_every = 7;
    const Trajectory tr = integrate(sys, rl_equilibrium(sys), {}, 0.01, 1e-3, io);
    CHECK(tr.t.front() == 0.0);
    CHECK(tr.t.back() == Approx(0.01));
    CHECK(tr.t.size() == 3);
}

TEST_CASE("integrator argument validation") {
    const SystemModel sys = rl_line();
    const OperatingPoint op = rl_equilibrium(sys);
    CHECK_THROWS_AS(integrate(sys, op, {}, 0.01, 0.0), InvalidParameter);
    CHECK_THROWS_AS(integrate(sys, op, {}, -1.0, 1e-4), InvalidParameter);
    CHECK_THROWS_AS(integrate(sys, op, {{"nope", 1.0}}, 0.01, 1e-4), ContractViolation);
}

TEST_CASE("probe verdicts") {
    const SystemModel sys = rl_line();
    const OperatingPoint op = rl_equilibrium(sys);
    ProbeOptions po;
    po.dt = 50e-6;
    const auto res = probe_limit_cycle(sys, op, "line.i_d", {0.0, 1e-3, 0.1}, 0.2, po);
    REQUIRE(res.size() == 3);
    for (const auto& r : res) CHECK(r.verdict == ProbeVerdict::decays);
    CHECK(res[0].terminal_envelope == 0.0);
    CHECK_THROWS_AS(probe_limit_cycle(sys, op, "line.i_d", {0.1, 0.01}, 0.05, po), InvalidParameter);
    CHECK_THROWS_AS(probe_limit_cycle(sys, op, "line.x", {0.1}, 0.05, po), ContractViolation);
}

TEST_CASE("judge_probe thresholds") {
    Trajectory tr;
    for (int i = 0; i <= 10; ++i) {
        tr.t.push_back(i);
        tr.x.push_back(Eigen::VectorXd::Constant(1, 0.0));
    }
    const ProbeOptions po;
    auto verdict = [&](double tail) {
        tr.x.back()(0) = tail;
        return judge_probe(tr, 0, 0.0, 1.0, po).verdict;
    };
    CHECK(verdict(0.05) == ProbeVerdict::decays);
    CHECK(verdict(1.0) == ProbeVerdict::sustained);
    CHECK(verdict(20.0) == ProbeVerdict::diverges);
    tr.truncated = true;
    CHECK(judge_probe(tr, 0, 0.0, 1.0, po).verdict == ProbeVerdict::diverges);
}

TEST_CASE("logarithmic amplitude grid") {
    const auto g = log_grid(1e-4, 0.2, 10);
    REQUIRE(g.size() == 10);
    CHECK(g.front() == Approx(1e-4));
    CHECK(g.back() == Approx(0.2));
    for (std::size_t i = 2; i < g.size(); ++i) CHECK(g[i] / g[i - 1] == Approx(g[1] / g[0]));
    CHECK_THROWS_AS(log_grid(0.0, 1.0, 3), InvalidParameter);
    CHECK_THROWS_AS(log_grid(1.0, 0.5, 3), InvalidParameter);
    CHECK_THROWS_AS(log_grid(0.1, 1.0, 1), InvalidParameter);
}
