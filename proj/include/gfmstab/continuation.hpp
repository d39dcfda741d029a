#pragma once

// Load-level sweeps along the upper P-V branch, bisection of the critical
// level, bifurcation classification and the eta root locus of the ZIP case.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gfmstab/smallsignal.hpp"

namespace gfmstab {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One load level of a sweep.
struct SweepStep {
    double level = 0.0;
    bool ok = false;  // equilibrium found and linearized
    std::string failure;
    double v_load = kNaN;
    Eigen::VectorXcd eigenvalues;
    Eigen::MatrixXd participation;
    std::vector<std::vector<std::size_t>> dominant;
    int rotational = -1;
    double max_real = kNaN;
    double det_gy = kNaN;
    bool singular = false;
    bool stable = false;
    OperatingPoint op;

    bool stable_point() const { return ok && !singular && stable; }
};

struct SweepResult {
    std::string parameter = "P";
    std::vector<std::string> labels;
    std::vector<SweepStep> steps;
    bool truncated = false;  // last step is an equilibrium failure
};

struct SweepOptions {
    StabilityOptions stability;
    bool warm_start = true;
    unsigned threads = 1;  // used only without warm starting
};

inline SweepStep evaluate_step(const SystemModel& sys, double level, const OperatingPoint* warm,
                               const StabilityOptions& opt = {}) {
    SweepStep s;
    s.level = level;
    try {
        s.op = initialize(sys, level, warm);
    } catch (const NoEquilibrium& e) {
        s.failure = e.what();
        return s;
    } catch (const InvalidSplit& e) {
        s.failure = e.what();
        return s;
    } catch (const SingularLoad& e) {
        s.failure = e.what();
        return s;
    } catch (const ModelInvalid& e) {
        s.failure = e.what();
        return s;
    }
    s.v_load = s.op.v_load.mag();
    EigenReport rep;
    try {
        rep = analyze(sys, s.op, opt);
    } catch (const NumericalFailure& e) {
        s.failure = e.what();
        return s;
    }
    s.ok = true;
    s.det_gy = rep.det_gy;
    s.singular = rep.singular;
    s.stable = rep.stable;
    s.max_real = rep.max_real;
    s.rotational = rep.rotational;
    s.eigenvalues = rep.modes.eigenvalues;
    s.participation = rep.modes.participation;
    s.dominant = rep.modes.dominant;
    return s;
}

/// from, from + step, ... up to and including to (with a small tolerance).
inline std::vector<double> sweep_levels(double from, double to, double step) {
    if (!(step > 0.0) || !(from < to) || !std::isfinite(from) || !std::isfinite(to))
        throw InvalidParameter("sweep needs from < to and step > 0");
    const auto n = static_cast<long>(std::floor((to - from) / step + 1e-9));
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(n + 1));
    for (long k = 0; k <= n; ++k) out.push_back(from + static_cast<double>(k) * step);
    return out;
}

inline SweepResult pv_sweep(const SystemModel& sys, double from, double to, double step,
                            const SweepOptions& opt = {}) {
    const std::vector<double> levels = sweep_levels(from, to, step);
    SweepResult r;
    r.parameter = sys.parameter_name;
    r.labels = sys.x_labels;
    if (opt.warm_start) {
        r.steps.reserve(levels.size());  // warm points into this vector
        const OperatingPoint* warm = nullptr;
        for (double l : levels) {
            r.steps.push_back(evaluate_step(sys, l, warm, opt.stability));
            const SweepStep& s = r.steps.back();
            if (!s.ok && !s.failure.empty() && s.op.x.size() == 0) {
                r.truncated = true;
                break;
            }
            warm = &r.steps.back().op;
        }
        return r;
    }

    std::vector<SweepStep> all(levels.size());
    const unsigned nt = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(levels.size())));
    auto work = [&](unsigned t) {
        for (std::size_t k = t; k < levels.size(); k += nt) all[k] = evaluate_step(sys, levels[k], nullptr, opt.stability);
    };
    if (nt == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < nt; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
    }
    for (auto& s : all) {
        const bool failed = !s.ok && s.op.x.size() == 0;
        r.steps.push_back(std::move(s));
        if (failed) {
            r.truncated = true;
            break;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

enum class BifurcationKind { none, hopf, transcritical, singularity_induced, fold };

inline const char* to_string(BifurcationKind k) {
    switch (k) {
        case BifurcationKind::none: return "none";
        case BifurcationKind::hopf: return "hopf";
        case BifurcationKind::transcritical: return "transcritical";
        case BifurcationKind::singularity_induced: return "singularity_induced";
        case BifurcationKind::fold: return "fold";
    }
    return "?";
}

struct ClassifyOptions {
    double sib_magnitude = 1e4;
    double hopf_imag_floor = 1e-6;
    double match_rel = 0.5;  // distance cap: match_rel * max(|a|, |b|) + match_abs
    double match_abs = 1.0;
};

struct BifurcationReport {
    BifurcationKind kind = BifurcationKind::none;
    double p_star = kNaN;
    double lo = kNaN, hi = kNaN;  // bracket of the change
    std::vector<Complex> critical;
    std::vector<std::pair<std::string, double>> dominant;  // label, participation at the last stable step
    bool det_sign_change = false;
    double det_before = kNaN, det_after = kNaN;
    double magnitude_before = kNaN, magnitude_after = kNaN;
    bool ambiguous = false;
    std::string note;
};

/// Greedy nearest-neighbour pairing. Entry j of the result is the index in a
/// matched to b(j), or -1.
inline std::vector<int> match_eigenvalues(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b,
                                          const ClassifyOptions& opt = {}) {
    struct Cand {
        double d;
        int i, j;
    };
    std::vector<Cand> cands;
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            const double d = std::abs(a(i) - b(j));
            const double cap = opt.match_rel * std::max(std::abs(a(i)), std::abs(b(j))) + opt.match_abs;
            if (d <= cap) cands.push_back({d, static_cast<int>(i), static_cast<int>(j)});
        }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.d < y.d; });
    std::vector<int> out(static_cast<std::size_t>(b.size()), -1);
    std::vector<char> used(static_cast<std::size_t>(a.size()), 0);
    for (const auto& c : cands) {
        if (used[static_cast<std::size_t>(c.i)] || out[static_cast<std::size_t>(c.j)] >= 0) continue;
        used[static_cast<std::size_t>(c.i)] = 1;
        out[static_cast<std::size_t>(c.j)] = c.i;
    }
    return out;
}

namespace detail {

inline int critical_index(const SweepStep& s) {
    int best = -1;
    double mr = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
        if (i == s.rotational) continue;
        const Complex l = s.eigenvalues(i);
        // prefer the upper member of a conjugate pair
        if (l.real() > mr || (l.real() == mr && l.imag() > 0.0)) {
            mr = l.real();
            best = static_cast<int>(i);
        }
    }
    return best;
}

inline int largest_magnitude(const SweepStep& s) {
    int best = -1;
    double m = -1.0;
    for (Eigen::Index i = 0; i < s.eigenvalues.size(); ++i) {
        if (i == s.rotational) continue;
        if (std::abs(s.eigenvalues(i)) > m) {
            m = std::abs(s.eigenvalues(i));
            best = static_cast<int>(i);
        }
    }
    return best;
}

inline std::vector<std::pair<std::string, double>> dominant_of(const SweepStep& s, int mode,
                                                               const std::vector<std::string>& labels) {
    std::vector<std::pair<std::string, double>> out;
    if (mode < 0 || static_cast<std::size_t>(mode) >= s.dominant.size()) return out;
    for (std::size_t k : s.dominant[static_cast<std::size_t>(mode)])
        out.emplace_back(k < labels.size() ? labels[k] : std::to_string(k),
                         s.participation(static_cast<Eigen::Index>(k), mode));
    return out;
}

}  // namespace detail

/// Classifies the first loss of stability in a sweep.
inline BifurcationReport classify_bifurcation(const SweepResult& sw, const ClassifyOptions& opt = {}) {
    BifurcationReport rep;
    const auto& st = sw.steps;
    std::size_t i = 1;
    for (; i < st.size(); ++i)
        if (st[i - 1].stable_point() && st[i].ok && !st[i].stable_point()) break;

    if (i >= st.size()) {
        if (st.empty()) {
            rep.note = "empty sweep";
            return rep;
        }
        if (!st.front().ok || !st.front().stable_point()) {
            std::size_t k = 0;
            while (k < st.size() && st[k].ok && !st[k].stable_point()) ++k;
            rep.note = k == st.size() || !st.front().ok ? "no stable step" : "unstable from the first step";
            return rep;
        }
        // stable up to the last valid step
        std::size_t last = 0;
        while (last + 1 < st.size() && st[last + 1].ok) ++last;
        if (sw.truncated && last + 1 < st.size() && st[last].stable_point()) {
            rep.kind = BifurcationKind::fold;
            rep.lo = st[last].level;
            rep.hi = st[last + 1].level;
            rep.p_star = 0.5 * (rep.lo + rep.hi);
            const int m = detail::critical_index(st[last]);
            if (m >= 0) rep.critical.push_back(st[last].eigenvalues(m));
            rep.dominant = detail::dominant_of(st[last], m, sw.labels);
            rep.note = "equilibrium lost without an eigenvalue crossing";
        } else {
            rep.note = "stable across the sweep";
        }
        return rep;
    }

    const SweepStep& prev = st[i - 1];
    const SweepStep* after = &st[i];
    if (after->singular && i + 1 < st.size() && st[i + 1].ok && !st[i + 1].singular) after = &st[i + 1];
    rep.lo = prev.level;
    rep.hi = after->level;
    rep.det_before = prev.det_gy;
    rep.det_after = after->det_gy;
    rep.det_sign_change = st[i].singular || (prev.det_gy * after->det_gy < 0.0);

    if (after->singular) {
        rep.kind = BifurcationKind::singularity_induced;
        rep.p_star = st[i].level;
        const int mb = detail::largest_magnitude(prev);
        rep.magnitude_before = mb >= 0 ? std::abs(prev.eigenvalues(mb)) : kNaN;
        rep.dominant = detail::dominant_of(prev, mb, sw.labels);
        rep.note = "g_y singular at the first unstable step";
        return rep;
    }

    const int c = detail::critical_index(*after);
    const Complex lam = after->eigenvalues(c);
    const std::vector<int> match = match_eigenvalues(prev.eigenvalues, after->eigenvalues, opt);
    const int from = match[static_cast<std::size_t>(c)];
    const int big = detail::largest_magnitude(prev);
    rep.magnitude_after = std::abs(lam);
    rep.magnitude_before = big >= 0 ? std::abs(prev.eigenvalues(big)) : kNaN;

    // other eigenvalues that also crossed between the two steps
    int crossings = 0;
    for (Eigen::Index j = 0; j < after->eigenvalues.size(); ++j) {
        if (j == after->rotational) continue;
        const Complex l = after->eigenvalues(j);
        if (l.real() < 0.0 || l.imag() < -opt.hopf_imag_floor) continue;
        const int m = match[static_cast<std::size_t>(j)];
        if (m < 0 || prev.eigenvalues(m).real() < 0.0) ++crossings;
    }
    rep.ambiguous = crossings > 1;

    if (rep.det_sign_change && rep.magnitude_after > opt.sib_magnitude && rep.magnitude_before > opt.sib_magnitude) {
        rep.kind = BifurcationKind::singularity_induced;
        rep.critical = {lam};
        rep.dominant = detail::dominant_of(prev, from >= 0 ? from : big, sw.labels);
        const double t = prev.det_gy / (prev.det_gy - after->det_gy);
        rep.p_star = prev.level + t * (after->level - prev.level);
        return rep;
    }

    if (std::abs(lam.imag()) > opt.hopf_imag_floor) {
        rep.kind = BifurcationKind::hopf;
        rep.critical = {lam, std::conj(lam)};
    } else {
        rep.kind = BifurcationKind::transcritical;
        rep.critical = {Complex{lam.real(), 0.0}};
    }
    if (from >= 0) {
        const double a = prev.eigenvalues(from).real(), b = lam.real();
        const double t = b != a ? -a / (b - a) : 0.5;
        rep.p_star = prev.level + std::clamp(t, 0.0, 1.0) * (after->level - prev.level);
        rep.dominant = detail::dominant_of(prev, from, sw.labels);
    } else {
        rep.p_star = 0.5 * (prev.level + after->level);
        rep.dominant = detail::dominant_of(*after, c, sw.labels);
        rep.note = "critical eigenvalue has no match at the last stable step";
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

struct Refinement {
    double p_star = kNaN;
    SweepStep lo, hi;  // final bracket, lo on the side of the lower parameter value
};

/// Bisection on the stability verdict until the bracket is narrower than tol.
/// A level without equilibrium counts as not stable.
inline Refinement refine_crossing(const SystemModel& sys, double lo, double hi, const StabilityOptions& opt = {},
                                  const OperatingPoint* warm = nullptr, double tol = 1e-4) {
    if (!(lo < hi)) throw InvalidBracket("bracket must satisfy lo < hi");
    Refinement r;
    r.lo = evaluate_step(sys, lo, warm, opt);
    r.hi = evaluate_step(sys, hi, r.lo.ok ? &r.lo.op : warm, opt);
    const bool vlo = r.lo.stable_point(), vhi = r.hi.stable_point();
    if (vlo == vhi) throw InvalidBracket("stability verdict is the same at both ends of the bracket");
    while (r.hi.level - r.lo.level > tol) {
        const double mid = 0.5 * (r.lo.level + r.hi.level);
        const OperatingPoint* w = r.lo.ok ? &r.lo.op : (r.hi.ok ? &r.hi.op : warm);
        SweepStep m = evaluate_step(sys, mid, w, opt);
        if (m.stable_point() == vlo)
            r.lo = std::move(m);
        else
            r.hi = std::move(m);
    }
    r.p_star = 0.5 * (r.lo.level + r.hi.level);
    return r;
}

inline double refine_pstar(const SystemModel& sys, double lo, double hi, const StabilityOptions& opt = {},
                           const OperatingPoint* warm = nullptr, double tol = 1e-4) {
    return refine_crossing(sys, lo, hi, opt, warm, tol).p_star;
}

/// Classification of a sweep with the crossing bracket sharpened by bisection.
inline BifurcationReport analyze_sweep(const SystemModel& sys, const SweepResult& sw, const ClassifyOptions& copt = {},
                                       const StabilityOptions& sopt = {}, double tol = 1e-4) {
    BifurcationReport raw = classify_bifurcation(sw, copt);
    if (raw.kind == BifurcationKind::none) return raw;

    const OperatingPoint* warm = nullptr;
    for (const auto& s : sw.steps)
        if (s.ok && s.level <= raw.lo) warm = &s.op;

    if (raw.kind == BifurcationKind::fold) {
        // bisection on existence of the equilibrium
        double lo = raw.lo, hi = raw.hi;
        OperatingPoint w = warm ? *warm : OperatingPoint{};
        bool have = warm != nullptr;
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            try {
                w = initialize(sys, mid, have ? &w : nullptr);
                have = true;
                lo = mid;
            } catch (const Error&) {
                hi = mid;
            }
        }
        raw.lo = lo;
        raw.hi = hi;
        raw.p_star = 0.5 * (lo + hi);
        return raw;
    }

    Refinement ref;
    try {
        ref = refine_crossing(sys, raw.lo, raw.hi, sopt, warm, tol);
    } catch (const InvalidBracket&) {
        raw.note = "refinement skipped: bracket verdicts agree";
        return raw;
    }
    SweepResult pair;
    pair.parameter = sw.parameter;
    pair.labels = sw.labels;
    pair.steps.push_back(ref.lo);
    pair.steps.push_back(ref.hi);
    BifurcationReport fine = classify_bifurcation(pair, copt);
    if (fine.kind == BifurcationKind::none) {
        raw.note = "refined bracket did not reproduce the crossing";
        return raw;
    }
    fine.p_star = ref.p_star;
    fine.ambiguous = fine.ambiguous || raw.ambiguous;
    return fine;
}

// ---------------------------------------------------------------------------
// eta root locus
// ---------------------------------------------------------------------------

struct RootLocusPoint {
    double eta = 0.0;
    bool ok = false;
    bool singular = false;
    std::string failure;
    Complex lambda1{kNaN, kNaN};  // larger magnitude
    Complex lambda2{kNaN, kNaN};
    double det_gy = kNaN;
    double v_load = kNaN;
};

/// Eigenvalues of the two line-current states of the eta-parameterized ZIP
/// system. Points closer than guard to eta = 0.5 are recorded as singular.
inline std::vector<RootLocusPoint> eta_rootlocus(const SystemModel& sys, const std::vector<double>& grid,
                                                 double guard = 1e-4, const StabilityOptions& opt = {}) {
    if (sys.parameter_name != "eta") throw ContractViolation("eta_rootlocus needs an eta-parameterized model");
    if (sys.n_x() != 2) throw ContractViolation("eta_rootlocus expects exactly two differential states");
    std::vector<RootLocusPoint> out;
    out.reserve(grid.size());
    for (double eta : grid) {
        RootLocusPoint p;
        p.eta = eta;
        if (!(eta > 0.0 && eta < 1.0)) throw InvalidParameter("eta grid must lie in (0, 1)");
        if (std::abs(eta - 0.5) < guard) {
            p.singular = true;
            p.failure = "inside the guard band around the singular point";
            out.push_back(p);
            continue;
        }
        try {
            const OperatingPoint op = initialize(sys, eta);
            p.v_load = op.v_load.mag();
            const Linearization L = numeric_jacobians(sys, op);
            p.det_gy = L.det_gy;
            if (is_singular(L, opt.singular)) {
                p.singular = true;
                p.failure = "g_y singular";
            } else {
                const Eigen::VectorXcd ev = modal_analysis(reduce(L, opt.singular)).eigenvalues;
                const bool swap = std::abs(ev(1)) > std::abs(ev(0));
                p.lambda1 = ev(swap ? 1 : 0);
                p.lambda2 = ev(swap ? 0 : 1);
                p.ok = true;
            }
        } catch (const Error& e) {
            p.failure = e.what();
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace gfmstab
