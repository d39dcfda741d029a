#pragma once

// Fixed-step trapezoidal integration of the DAE with a simultaneous Newton
// solve for (x, y), and amplitude probing around an equilibrium.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "gfmstab/smallsignal.hpp"

namespace gfmstab {

struct IntegrateOptions {
    double tol = 1e-9;            // Newton residual, infinity norm
    int max_iter = 10;            // per attempt with a frozen iteration matrix
    std::size_t record_every = 1; // keep every k-th step (the last one always)
};

inline double default_dt(NetworkMode m) { return m == NetworkMode::emt ? 50e-6 : 1e-3; }

struct Trajectory {
    std::vector<std::string> x_labels, y_labels;
    std::vector<double> t;
    std::vector<Eigen::VectorXd> x, y;
    bool truncated = false;
    bool diverged = false;
    std::string reason;
};

namespace detail {

/// Iteration matrix [I - dt/2 f_x, -dt/2 f_y; g_x, g_y] at (x, y).
inline Eigen::PartialPivLU<Eigen::MatrixXd> trapezoid_matrix(const SystemModel& sys, const Eigen::VectorXd& x,
                                                             const Eigen::VectorXd& y, const Eigen::VectorXd& th,
                                                             double dt) {
    const Linearization L = numeric_jacobians(sys, x, y, th);
    const Eigen::Index nx = x.size(), ny = y.size();
    Eigen::MatrixXd J(nx + ny, nx + ny);
    J.topLeftCorner(nx, nx) = Eigen::MatrixXd::Identity(nx, nx) - 0.5 * dt * L.fx;
    J.topRightCorner(nx, ny) = -0.5 * dt * L.fy;
    J.bottomLeftCorner(ny, nx) = L.gx;
    J.bottomRightCorner(ny, ny) = L.gy;
    return Eigen::PartialPivLU<Eigen::MatrixXd>(J);
}

}  // namespace detail

/// Solves g(x, y) = 0 for y with x fixed (consistent initial values).
inline Eigen::VectorXd consistent_algebraic(const SystemModel& sys, const Eigen::VectorXd& x, Eigen::VectorXd y,
                                            const Eigen::VectorXd& th, double tol = 1e-12) {
    if (y.size() == 0) return y;
    for (int it = 0; it < 30; ++it) {
        const Residual r = residual(sys, x, y, th);
        if (r.g.lpNorm<Eigen::Infinity>() < tol) return y;
        const Linearization L = numeric_jacobians(sys, x, y, th);
        y -= L.gy.partialPivLu().solve(r.g);
        if (!y.allFinite()) break;
    }
    const Residual r = residual(sys, x, y, th);
    if (!(r.g.lpNorm<Eigen::Infinity>() < 1e-8))
        throw NumericalFailure("could not make the algebraic states consistent with the perturbed state");
    return y;
}

/// Trapezoidal integration from op with the listed differential states shifted.
inline Trajectory integrate(const SystemModel& sys, const OperatingPoint& op,
                            const std::map<std::string, double>& perturbation, double t_end, double dt,
                            const IntegrateOptions& opt = {}) {
    if (!(dt > 0.0) || !(t_end >= 0.0)) throw InvalidParameter("integrate needs dt > 0 and t_end >= 0");
    Trajectory tr;
    tr.x_labels = sys.x_labels;
    tr.y_labels = sys.y_labels;
    const Eigen::VectorXd& th = op.theta;

    Eigen::VectorXd x = op.x;
    for (const auto& [label, delta] : perturbation) {
        const int k = sys.x_index(label);
        if (k < 0) throw ContractViolation("unknown differential state label: " + label);
        x(k) += delta;
    }
    Eigen::VectorXd y = consistent_algebraic(sys, x, op.y, th);

    const Eigen::Index nx = x.size(), ny = y.size();
    const std::size_t every = std::max<std::size_t>(1, opt.record_every);
    const auto steps = static_cast<long>(std::llround(t_end / dt));
    auto record = [&](double t) {
        tr.t.push_back(t);
        tr.x.push_back(x);
        tr.y.push_back(y);
    };
    record(0.0);

    Eigen::VectorXd fn;
    try {
        fn = residual(sys, x, y, th).f;
    } catch (const ModelInvalid& e) {
        tr.truncated = tr.diverged = true;
        tr.reason = e.what();
        return tr;
    }
    auto lu = detail::trapezoid_matrix(sys, x, y, th, dt);
    bool refresh = false;

    for (long n = 1; n <= steps; ++n) {
        const double t = static_cast<double>(n) * dt;
        Eigen::VectorXd z(nx + ny);
        bool converged = false;
        std::string why;
        try {
            for (int attempt = 0; attempt < 2 && !converged; ++attempt) {
                if (refresh || attempt == 1) {
                    lu = detail::trapezoid_matrix(sys, x, y, th, dt);
                    refresh = false;
                }
                z << x, y;
                for (int it = 0; it < opt.max_iter; ++it) {
                    const Eigen::VectorXd xn = z.head(nx), yn = z.tail(ny);
                    const Residual r = residual(sys, xn, yn, th);
                    Eigen::VectorXd R(nx + ny);
                    R << xn - x - 0.5 * dt * (fn + r.f), r.g;
                    if (!R.allFinite()) break;
                    if (R.lpNorm<Eigen::Infinity>() < opt.tol) {
                        converged = true;
                        if (it > 4) refresh = true;
                        fn = r.f;
                        break;
                    }
                    z -= lu.solve(R);
                }
            }
        } catch (const ModelInvalid& e) {
            why = e.what();
        } catch (const SingularLoad& e) {
            why = e.what();
        }
        if (!converged) {
            tr.truncated = tr.diverged = true;
            tr.reason = why.empty() ? "Newton corrector did not converge" : why;
            if (tr.t.back() != t - dt) record(t - dt);
            return tr;
        }
        x = z.head(nx);
        y = z.tail(ny);
        if (n % static_cast<long>(every) == 0 || n == steps) record(t);
    }
    return tr;
}

// ---------------------------------------------------------------------------
// Limit-cycle probing
// ---------------------------------------------------------------------------

enum class ProbeVerdict { decays, diverges, sustained };

inline const char* to_string(ProbeVerdict v) {
    switch (v) {
        case ProbeVerdict::decays: return "decays";
        case ProbeVerdict::diverges: return "diverges";
        case ProbeVerdict::sustained: return "sustained";
    }
    return "?";
}

struct ProbeResult {
    double amplitude = 0.0;
    ProbeVerdict verdict = ProbeVerdict::sustained;
    double terminal_envelope = 0.0;  // max |deviation| of the probed state in the final window
    bool truncated = false;
    std::string reason;
    Trajectory trajectory;  // filled only when requested
};

struct ProbeOptions {
    double dt = 0.0;              // 0: default for the network mode
    double window = 0.1;          // final fraction of t_end used for the envelope
    double decay_ratio = 0.1;
    double growth_ratio = 10.0;
    unsigned threads = 1;
    bool keep_trajectories = false;
    IntegrateOptions integrate;
};

/// Verdict from the deviation of one state over a trajectory.
inline ProbeResult judge_probe(const Trajectory& tr, int k, double x_eq, double amplitude, const ProbeOptions& opt) {
    ProbeResult r;
    r.amplitude = amplitude;
    r.truncated = tr.truncated;
    r.reason = tr.reason;
    if (tr.truncated) {
        r.verdict = ProbeVerdict::diverges;
        r.terminal_envelope = std::numeric_limits<double>::infinity();
        return r;
    }
    const double t_end = tr.t.back();
    const double t0 = t_end * (1.0 - opt.window);
    double env = 0.0;
    for (std::size_t i = 0; i < tr.t.size(); ++i)
        if (tr.t[i] >= t0) env = std::max(env, std::abs(tr.x[i](k) - x_eq));
    r.terminal_envelope = env;
    const double a = std::abs(amplitude);
    if (env <= opt.decay_ratio * a)
        r.verdict = ProbeVerdict::decays;
    else if (env > opt.growth_ratio * a)
        r.verdict = ProbeVerdict::diverges;
    else
        r.verdict = ProbeVerdict::sustained;
    return r;
}

/// One trajectory per amplitude (independent, optionally in parallel).
inline std::vector<ProbeResult> probe_limit_cycle(const SystemModel& sys, const OperatingPoint& op,
                                                  const std::string& state, const std::vector<double>& amplitudes,
                                                  double t_end, const ProbeOptions& opt = {}) {
    const int k = sys.x_index(state);
    if (k < 0) throw ContractViolation("unknown differential state label: " + state);
    if (!std::is_sorted(amplitudes.begin(), amplitudes.end()))
        throw InvalidParameter("probe amplitudes must be sorted ascending");
    const double dt = opt.dt > 0.0 ? opt.dt : default_dt(sys.mode);
    std::vector<ProbeResult> out(amplitudes.size());
    auto one = [&](std::size_t i) {
        const double a = amplitudes[i];
        if (a == 0.0) {
            out[i].amplitude = 0.0;
            out[i].verdict = ProbeVerdict::decays;
            return;
        }
        IntegrateOptions io = opt.integrate;
        io.record_every = std::max<std::size_t>(io.record_every, 1);
        Trajectory tr;
        try {
            tr = integrate(sys, op, {{state, a}}, t_end, dt, io);
        } catch (const Error& e) {
            tr.truncated = true;
            tr.reason = e.what();
        }
        out[i] = judge_probe(tr, k, op.x(k), a, opt);
        if (opt.keep_trajectories) out[i].trajectory = std::move(tr);
    };
    const unsigned nt = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(amplitudes.size())));
    if (nt == 1) {
        for (std::size_t i = 0; i < amplitudes.size(); ++i) one(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < nt; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < amplitudes.size(); i += nt) one(i);
            });
        for (auto& th : pool) th.join();
    }
    return out;
}

/// Logarithmic grid lo..hi with n points.
inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
    if (!(lo > 0.0 && hi > lo && n >= 2)) throw InvalidParameter("log grid needs 0 < lo < hi and n >= 2");
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1));
    return g;
}

}  // namespace gfmstab
