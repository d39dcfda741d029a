#pragma once

// CSV and JSON artifacts. Floats in CSV use 17 significant digits; every
// artifact starts with the toolkit version and the config hash.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfmstab/continuation.hpp"
#include "gfmstab/timedomain.hpp"

namespace gfmstab {

inline constexpr const char* toolkit_version = "0.1.0";
inline constexpr int schema_version = 1;

struct ArtifactMeta {
    std::string command;
    std::string config_hash;
    std::string scenario;
};

inline std::string fmt17(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void csv_header(std::ostream& os, const ArtifactMeta& m) {
    os << "# gfmstab " << toolkit_version << " schema " << schema_version << "\n";
    os << "# command " << m.command << "\n";
    os << "# scenario " << m.scenario << "\n";
    os << "# config_hash fnv1a64:" << m.config_hash << "\n";
}

inline nlohmann::json meta_json(const ArtifactMeta& m) {
    return {{"toolkit", "gfmstab"},
            {"version", toolkit_version},
            {"schema", schema_version},
            {"command", m.command},
            {"scenario", m.scenario},
            {"config_hash", "fnv1a64:" + m.config_hash}};
}

/// NaN and infinities have no JSON literal; they become null.
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline nlohmann::json complex_json(Complex c) { return nlohmann::json::array({num(c.real()), num(c.imag())}); }

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SystemModel& sys, const OperatingPoint& op) {
    const Residual r = residual(sys, op);
    nlohmann::json x = nlohmann::json::object(), y = nlohmann::json::object(), th = nlohmann::json::object();
    for (std::size_t k = 0; k < sys.n_x(); ++k) x[sys.x_labels[k]] = num(op.x(static_cast<Eigen::Index>(k)));
    for (std::size_t k = 0; k < sys.n_y(); ++k) y[sys.y_labels[k]] = num(op.y(static_cast<Eigen::Index>(k)));
    for (std::size_t k = 0; k < sys.theta_labels.size(); ++k)
        th[sys.theta_labels[k]] = num(op.theta(static_cast<Eigen::Index>(k)));
    return {{"parameter", sys.parameter_name},
            {"level", num(op.level)},
            {"v_load", {{"d", num(op.v_load.d)}, {"q", num(op.v_load.q)}, {"mag", num(op.v_load.mag())}}},
            {"s_source", complex_json(op.s_source)},
            {"s_load", complex_json(op.s_load)},
            {"omega", num(op.omega)},
            {"x", x},
            {"y", y},
            {"theta", th},
            {"residual_inf", {{"f", num(r.f.size() ? r.f.lpNorm<Eigen::Infinity>() : 0.0)},
                              {"g", num(r.g.size() ? r.g.lpNorm<Eigen::Infinity>() : 0.0)}}}};
}

inline nlohmann::json to_json(const EigenReport& rep) {
    nlohmann::json ev = nlohmann::json::array(), part = nlohmann::json::array(), dom = nlohmann::json::array();
    for (Eigen::Index i = 0; i < rep.modes.eigenvalues.size(); ++i) ev.push_back(complex_json(rep.modes.eigenvalues(i)));
    for (Eigen::Index k = 0; k < rep.modes.participation.rows(); ++k) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index i = 0; i < rep.modes.participation.cols(); ++i) row.push_back(num(rep.modes.participation(k, i)));
        part.push_back(row);
    }
    for (const auto& d : rep.modes.dominant) {
        nlohmann::json names = nlohmann::json::array();
        for (std::size_t k : d) names.push_back(rep.labels[k]);
        dom.push_back(names);
    }
    return {{"level", num(rep.level)},
            {"labels", rep.labels},
            {"eigenvalues", ev},
            {"participation", part},
            {"dominant_states", dom},
            {"rotational_mode", rep.rotational},
            {"det_gy", num(rep.det_gy)},
            {"singular", rep.singular},
            {"max_real", num(rep.max_real)},
            {"stable", rep.stable}};
}

inline nlohmann::json to_json(const BifurcationReport& b) {
    nlohmann::json crit = nlohmann::json::array(), dom = nlohmann::json::array();
    for (const auto& c : b.critical) crit.push_back(complex_json(c));
    for (const auto& [label, p] : b.dominant) dom.push_back({{"state", label}, {"participation", num(p)}});
    return {{"kind", to_string(b.kind)},
            {"p_star", num(b.p_star)},
            {"bracket", {num(b.lo), num(b.hi)}},
            {"critical_eigenvalues", crit},
            {"dominant_states", dom},
            {"evidence",
             {{"det_gy_sign_change", b.det_sign_change},
              {"det_gy_before", num(b.det_before)},
              {"det_gy_after", num(b.det_after)},
              {"magnitude_before", num(b.magnitude_before)},
              {"magnitude_after", num(b.magnitude_after)}}},
            {"ambiguous", b.ambiguous},
            {"note", b.note}};
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Columns: <parameter>, v_load, max_re, det_gy, stable. Only equilibria are rows;
/// a truncating failure is reported as a trailing comment.
inline void write_sweep_csv(std::ostream& os, const SweepResult& sw, const ArtifactMeta& m) {
    csv_header(os, m);
    os << sw.parameter << ",v_load,max_re,det_gy,stable\n";
    for (const auto& s : sw.steps) {
        if (!s.ok) continue;
        os << fmt17(s.level) << ',' << fmt17(s.v_load) << ',' << fmt17(s.max_real) << ',' << fmt17(s.det_gy) << ','
           << (s.stable_point() ? 1 : 0) << '\n';
    }
    if (sw.truncated && !sw.steps.empty())
        os << "# truncated at " << fmt17(sw.steps.back().level) << ": " << sw.steps.back().failure << "\n";
}

/// Columns: eta, re_l1, im_l1, re_l2, im_l2, det_gy. Guard-band points are comments.
inline void write_rootlocus_csv(std::ostream& os, const std::vector<RootLocusPoint>& pts, const ArtifactMeta& m) {
    csv_header(os, m);
    os << "eta,re_l1,im_l1,re_l2,im_l2,det_gy\n";
    for (const auto& p : pts) {
        if (!p.ok) {
            os << "# eta " << fmt17(p.eta) << " skipped: " << p.failure << "\n";
            continue;
        }
        os << fmt17(p.eta) << ',' << fmt17(p.lambda1.real()) << ',' << fmt17(p.lambda1.imag()) << ','
           << fmt17(p.lambda2.real()) << ',' << fmt17(p.lambda2.imag()) << ',' << fmt17(p.det_gy) << '\n';
    }
}

/// Columns: t, then differential labels, then algebraic labels. A non-empty
/// column list restricts the output to those differential states.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, const ArtifactMeta& m,
                                 const std::vector<std::string>& columns = {}) {
    std::vector<Eigen::Index> xs;
    if (columns.empty()) {
        for (std::size_t k = 0; k < tr.x_labels.size(); ++k) xs.push_back(static_cast<Eigen::Index>(k));
    } else {
        for (const auto& c : columns) {
            const auto it = std::find(tr.x_labels.begin(), tr.x_labels.end(), c);
            if (it == tr.x_labels.end()) throw ContractViolation("unknown differential state label: " + c);
            xs.push_back(static_cast<Eigen::Index>(it - tr.x_labels.begin()));
        }
    }
    const bool with_y = columns.empty();
    csv_header(os, m);
    if (tr.truncated) os << "# truncated: " << tr.reason << "\n";
    os << 't';
    for (auto k : xs) os << ',' << tr.x_labels[static_cast<std::size_t>(k)];
    if (with_y)
        for (const auto& l : tr.y_labels) os << ',' << l;
    os << '\n';
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
        os << fmt17(tr.t[i]);
        for (auto k : xs) os << ',' << fmt17(tr.x[i](k));
        if (with_y)
            for (Eigen::Index k = 0; k < tr.y[i].size(); ++k) os << ',' << fmt17(tr.y[i](k));
        os << '\n';
    }
}

/// Two-column phase portrait of a pair of differential states.
inline void write_phase_csv(std::ostream& os, const Trajectory& tr, const std::string& a, const std::string& b,
                            const ArtifactMeta& m) {
    auto idx = [&](const std::string& l) {
        for (std::size_t k = 0; k < tr.x_labels.size(); ++k)
            if (tr.x_labels[k] == l) return static_cast<Eigen::Index>(k);
        throw ContractViolation("unknown differential state label: " + l);
    };
    const Eigen::Index ia = idx(a), ib = idx(b);
    csv_header(os, m);
    os << a << ',' << b << '\n';
    for (std::size_t i = 0; i < tr.t.size(); ++i) os << fmt17(tr.x[i](ia)) << ',' << fmt17(tr.x[i](ib)) << '\n';
}

/// Columns: amplitude, verdict, terminal_envelope, truncated.
inline void write_probe_csv(std::ostream& os, const std::vector<ProbeResult>& res, const ArtifactMeta& m) {
    csv_header(os, m);
    os << "amplitude,verdict,terminal_envelope,truncated\n";
    for (const auto& r : res)
        os << fmt17(r.amplitude) << ',' << to_string(r.verdict) << ',' << fmt17(r.terminal_envelope) << ','
           << (r.truncated ? 1 : 0) << '\n';
}

}  // namespace gfmstab
