#pragma once

// Scenario files: strict JSON, unknown keys rejected. Physical parameters
// come from a named preset per block, optionally overridden key by key.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfmstab/continuation.hpp"
#include "gfmstab/timedomain.hpp"

namespace gfmstab {

using json = nlohmann::json;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* d = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = d[v & 0xF];
    return s;
}

struct RangeSpec {
    double from = 0.0, to = 4.5, step = 0.01;
};

struct ProbeSpec {
    std::string state = "active.v_dc";
    std::vector<double> amplitudes = log_grid(1e-4, 0.2, 10);
    double t_end = 20.0;
    double dt = 0.0;                   // 0: mode default
    std::optional<double> below_pstar; // probe at (1 - below_pstar) P* instead of study.at
    std::size_t record_every = 20;
};

struct SimulateSpec {
    double t_end = 1.0;
    double dt = 0.0;
    std::size_t record_every = 1;
    std::map<std::string, double> perturbation;
    std::vector<std::string> phase;  // optional pair of labels
};

struct StudySpec {
    double at = 1.0;  // parameter value for powerflow / eigs / simulate / probe-cycle
    RangeSpec sweep;
    std::vector<double> eta_grid;
    double guard = 1e-4;
    bool warm_start = true;
    StabilityOptions stability;
    ClassifyOptions classify;
    double refine_tol = 1e-4;
    double newton_tol = 1e-9;
    SimulateSpec simulate;
    ProbeSpec probe;
};

struct Scenario {
    ScenarioSpec spec;
    StudySpec study;
    std::string hash;  // FNV-1a of the canonical JSON text
};

namespace cfg {

/// Object view that remembers which keys were read.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const char* k) const { return j_.contains(k); }

    double num(const char* k) {
        if (!j_.contains(k)) throw ConfigError(where(k) + " is required");
        return as_num(k);
    }
    double num(const char* k, double def) { return j_.contains(k) ? as_num(k) : def; }
    void num_into(const char* k, double& v) {
        if (j_.contains(k)) v = as_num(k);
    }
    std::string str(const char* k) {
        if (!j_.contains(k)) throw ConfigError(where(k) + " is required");
        return as_str(k);
    }
    std::string str(const char* k, const std::string& def) { return j_.contains(k) ? as_str(k) : def; }
    bool boolean(const char* k, bool def) {
        if (!j_.contains(k)) return def;
        seen_.insert(k);
        if (!j_.at(k).is_boolean()) throw ConfigError(where(k) + " must be a boolean");
        return j_.at(k).get<bool>();
    }
    const json* sub(const char* k) {
        if (!j_.contains(k)) return nullptr;
        seen_.insert(k);
        return &j_.at(k);
    }
    std::string path(const char* k) const { return path_ + "." + k; }

    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key " + path_ + "." + it.key());
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;

    std::string where(const char* k = nullptr) const { return k ? path_ + "." + k : path_; }
    double as_num(const char* k) {
        seen_.insert(k);
        const json& v = j_.at(k);
        if (!v.is_number()) throw ConfigError(where(k) + " must be a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw ConfigError(where(k) + " must be finite");
        return d;
    }
    std::string as_str(const char* k) {
        seen_.insert(k);
        const json& v = j_.at(k);
        if (!v.is_string()) throw ConfigError(where(k) + " must be a string");
        return v.get<std::string>();
    }
};

template <class E>
E pick(const std::string& v, const std::vector<std::pair<const char*, E>>& options, const std::string& what) {
    for (const auto& [name, e] : options)
        if (v == name) return e;
    std::string all;
    for (const auto& o : options) all += std::string(all.empty() ? "" : ", ") + o.first;
    throw ConfigError(what + ": unknown value '" + v + "' (expected " + all + ")");
}

inline void check_preset(Fields& f, const char* block) {
    const std::string p = f.str("preset");
    if (p != "default") throw ConfigError(std::string(block) + ".preset: unknown preset '" + p + "'");
}

inline void read_filter(const json& j, const std::string& path, FilterParams& p) {
    Fields f(j, path);
    f.num_into("r_f", p.r_f);
    f.num_into("l_f", p.l_f);
    f.num_into("c_f", p.c_f);
    f.num_into("r_g", p.r_g);
    f.num_into("l_g", p.l_g);
    f.done();
}

inline void read_source(const json& j, SourceSpec& s) {
    Fields f(j, "source");
    s.kind = pick<SourceKind>(f.str("kind"),
                              {{"stiff", SourceKind::stiff},
                               {"droop", SourceKind::droop},
                               {"vsm", SourceKind::vsm},
                               {"dvoc", SourceKind::dvoc},
                               {"genrou", SourceKind::genrou},
                               {"marconato", SourceKind::marconato}},
                              "source.kind");
    check_preset(f, "source");
    f.num_into("v_set", s.v_set);
    s.references = pick<ReferenceMode>(f.str("references", "redispatch"),
                                       {{"redispatch", ReferenceMode::redispatch}, {"fixed", ReferenceMode::fixed}},
                                       "source.references");
    if (const json* d = f.sub("droop")) {
        Fields g(*d, "source.droop");
        g.num_into("m_p", s.gfm.gains.m_p);
        g.num_into("m_q", s.gfm.gains.m_q);
        g.num_into("omega_f", s.gfm.gains.omega_f);
        g.num_into("e0", s.gfm.gains.e0);
        g.done();
    }
    if (const json* d = f.sub("inner")) {
        Fields g(*d, "source.inner");
        auto& k = s.gfm.inner;
        g.num_into("kpv", k.kpv);
        g.num_into("kiv", k.kiv);
        g.num_into("kffv", k.kffv);
        g.num_into("kpc", k.kpc);
        g.num_into("kic", k.kic);
        g.num_into("kffi", k.kffi);
        g.done();
    }
    if (const json* d = f.sub("filter")) read_filter(*d, "source.filter", s.gfm.filter);
    f.num_into("h_vsm", s.gfm.h_vsm);
    if (const json* d = f.sub("machine")) {
        Fields g(*d, "source.machine");
        auto& m = s.machine;
        g.num_into("r_a", m.r_a);
        g.num_into("x_d", m.x_d);
        g.num_into("x_q", m.x_q);
        g.num_into("x_dp", m.x_dp);
        g.num_into("x_qp", m.x_qp);
        g.num_into("x_dpp", m.x_dpp);
        g.num_into("x_qpp", m.x_qpp);
        g.num_into("x_l", m.x_l);
        g.num_into("t_d0p", m.t_d0p);
        g.num_into("t_q0p", m.t_q0p);
        g.num_into("t_d0pp", m.t_d0pp);
        g.num_into("t_q0pp", m.t_q0pp);
        g.num_into("h", m.h);
        g.num_into("d", m.d);
        g.done();
    }
    if (const json* d = f.sub("avr")) {
        Fields g(*d, "source.avr");
        g.num_into("k", s.avr.k);
        g.num_into("t_e", s.avr.t_e);
        g.done();
    }
    if (const json* d = f.sub("fixed")) {
        Fields g(*d, "source.fixed");
        s.fixed.p_ref = g.num("p_ref");
        s.fixed.q_ref = g.num("q_ref");
        s.fixed.v_ref = g.num("v_ref");
        s.fixed.omega_ref = g.num("omega_ref", 1.0);
        g.done();
    }
    f.done();
}

inline void read_network(const json& j, NetworkSpec& n) {
    Fields f(j, "network");
    n.mode = pick<NetworkMode>(f.str("mode"), {{"qsp", NetworkMode::qsp}, {"emt", NetworkMode::emt}}, "network.mode");
    check_preset(f, "network");
    if (const json* d = f.sub("line")) {
        Fields g(*d, "network.line");
        g.num_into("r", n.line.r);
        g.num_into("x", n.line.x);
        g.done();
    }
    f.num_into("c_source", n.c_source);
    f.num_into("c_load", n.c_load);
    f.done();
}

inline void read_load(const json& j, LoadSpec& l) {
    Fields f(j, "load");
    l.kind = pick<LoadKind>(f.str("kind"),
                            {{"cpl", LoadKind::cpl},
                             {"ccl", LoadKind::ccl},
                             {"cil", LoadKind::cil},
                             {"zip", LoadKind::zip},
                             {"im", LoadKind::im},
                             {"active", LoadKind::active}},
                            "load.kind");
    check_preset(f, "load");
    f.num_into("q_ratio", l.q_ratio);
    f.num_into("eta", l.eta);
    f.num_into("p_cpl", l.p_cpl);
    f.num_into("ccl_share", l.ccl_share);
    if (const json* d = f.sub("im")) {
        Fields g(*d, "load.im");
        auto& m = l.im;
        g.num_into("r_s", m.r_s);
        g.num_into("x_ls", m.x_ls);
        g.num_into("r_r", m.r_r);
        g.num_into("x_lr", m.x_lr);
        g.num_into("x_m", m.x_m);
        g.num_into("h", m.h);
        l.im_scaling = pick<ImScaling>(g.str("scaling", "base"), {{"base", ImScaling::base}, {"torque", ImScaling::torque}},
                                       "load.im.scaling");
        g.num_into("rating", l.im_rating);
        g.num_into("load_factor", l.im_load_factor);
        g.done();
    }
    if (const json* d = f.sub("active")) {
        Fields g(*d, "load.active");
        auto& a = l.active;
        if (const json* fl = g.sub("filter")) read_filter(*fl, "load.active.filter", a.filter);
        g.num_into("kp_pll", a.kp_pll);
        g.num_into("ki_pll", a.ki_pll);
        g.num_into("kp_dc", a.kp_dc);
        g.num_into("ki_dc", a.ki_dc);
        g.num_into("kp_c", a.kp_c);
        g.num_into("ki_c", a.ki_c);
        g.num_into("c_dc", a.c_dc);
        g.num_into("v_dc_ref", a.v_dc_ref);
        g.done();
    }
    f.done();
}

inline std::vector<double> read_grid(const json& j, const std::string& path) {
    std::vector<double> out;
    if (j.is_array()) {
        for (const auto& v : j) {
            if (!v.is_number() || !std::isfinite(v.get<double>())) throw ConfigError(path + " entries must be numbers");
            out.push_back(v.get<double>());
        }
        return out;
    }
    Fields f(j, path);
    if (f.has("n")) {
        const double lo = f.num("lo"), hi = f.num("hi"), n = f.num("n");
        f.done();
        if (!(n >= 2 && n == std::floor(n))) throw ConfigError(path + ".n must be an integer >= 2");
        try {
            return log_grid(lo, hi, static_cast<std::size_t>(n));
        } catch (const InvalidParameter& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }
    const double from = f.num("from"), to = f.num("to"), step = f.num("step");
    f.done();
    try {
        return sweep_levels(from, to, step);
    } catch (const InvalidParameter& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline void read_study(const json& j, StudySpec& s, ScenarioSpec& spec) {
    Fields f(j, "study");
    spec.parameter = pick<StudyParameter>(f.str("parameter", "P"), {{"P", StudyParameter::load}, {"eta", StudyParameter::eta}},
                                          "study.parameter");
    f.num_into("level", spec.level);
    s.at = f.num("at", spec.parameter == StudyParameter::eta ? spec.load.eta : 1.0);
    if (const json* d = f.sub("sweep")) {
        Fields g(*d, "study.sweep");
        s.sweep.from = g.num("from");
        s.sweep.to = g.num("to");
        s.sweep.step = g.num("step");
        g.done();
        if (!(s.sweep.step > 0.0 && s.sweep.from < s.sweep.to)) throw ConfigError("study.sweep needs from < to, step > 0");
    }
    if (const json* d = f.sub("eta_grid")) s.eta_grid = read_grid(*d, "study.eta_grid");
    f.num_into("guard", s.guard);
    s.warm_start = f.boolean("warm_start", true);
    if (const json* d = f.sub("tolerances")) {
        Fields g(*d, "study.tolerances");
        g.num_into("det_threshold", s.stability.singular.det_threshold);
        g.num_into("pivot_ratio", s.stability.singular.pivot_ratio_threshold);
        g.num_into("zero_tol", s.stability.zero_tol);
        g.num_into("margin", s.stability.margin);
        g.num_into("sib_magnitude", s.classify.sib_magnitude);
        g.num_into("hopf_imag_floor", s.classify.hopf_imag_floor);
        g.num_into("refine_tol", s.refine_tol);
        g.num_into("newton_tol", s.newton_tol);
        g.done();
    }
    if (const json* d = f.sub("simulate")) {
        Fields g(*d, "study.simulate");
        g.num_into("t_end", s.simulate.t_end);
        g.num_into("dt", s.simulate.dt);
        const double re = g.num("record_every", 1.0);
        if (!(re >= 1 && re == std::floor(re))) throw ConfigError("study.simulate.record_every must be an integer >= 1");
        s.simulate.record_every = static_cast<std::size_t>(re);
        if (const json* p = g.sub("perturbation")) {
            if (!p->is_object()) throw ConfigError("study.simulate.perturbation must map state labels to deltas");
            for (auto it = p->begin(); it != p->end(); ++it) {
                if (!it.value().is_number()) throw ConfigError("study.simulate.perturbation values must be numbers");
                s.simulate.perturbation[it.key()] = it.value().get<double>();
            }
        }
        if (const json* p = g.sub("phase")) {
            if (!p->is_array() || p->size() != 2 || !(*p)[0].is_string() || !(*p)[1].is_string())
                throw ConfigError("study.simulate.phase must be a pair of state labels");
            s.simulate.phase = {(*p)[0].get<std::string>(), (*p)[1].get<std::string>()};
        }
        g.done();
        if (!(s.simulate.t_end > 0.0) || s.simulate.dt < 0.0) throw ConfigError("study.simulate needs t_end > 0, dt >= 0");
    }
    if (const json* d = f.sub("probe")) {
        Fields g(*d, "study.probe");
        s.probe.state = g.str("state", s.probe.state);
        if (const json* a = g.sub("amplitudes")) s.probe.amplitudes = read_grid(*a, "study.probe.amplitudes");
        g.num_into("t_end", s.probe.t_end);
        g.num_into("dt", s.probe.dt);
        if (g.has("below_pstar")) s.probe.below_pstar = g.num("below_pstar");
        const double re = g.num("record_every", static_cast<double>(s.probe.record_every));
        if (!(re >= 1 && re == std::floor(re))) throw ConfigError("study.probe.record_every must be an integer >= 1");
        s.probe.record_every = static_cast<std::size_t>(re);
        g.done();
        if (!std::is_sorted(s.probe.amplitudes.begin(), s.probe.amplitudes.end()))
            throw ConfigError("study.probe.amplitudes must be ascending");
        if (!(s.probe.t_end > 0.0)) throw ConfigError("study.probe.t_end must be > 0");
    }
    f.done();
}

}  // namespace cfg

/// Parses a scenario document. Throws ConfigError on any schema violation.
inline Scenario parse_scenario(const json& j) {
    Scenario sc;
    cfg::Fields f(j, "config");
    sc.spec.name = f.str("name", "scenario");
    const json* src = f.sub("source");
    const json* net = f.sub("network");
    const json* load = f.sub("load");
    if (!src || !net || !load) throw ConfigError("config needs source, network and load blocks");
    cfg::read_source(*src, sc.spec.source);
    cfg::read_network(*net, sc.spec.network);
    cfg::read_load(*load, sc.spec.load);
    if (const json* st = f.sub("study")) cfg::read_study(*st, sc.study, sc.spec);
    f.done();
    sc.hash = hex64(fnv1a(j.dump()));
    return sc;
}

inline Scenario parse_scenario_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return parse_scenario(j);
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_text(ss.str());
}

}  // namespace gfmstab
