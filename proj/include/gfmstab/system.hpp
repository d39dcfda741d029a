#pragma once

// Two-bus DAE assembly: one source (stiff, GFM inverter or synchronous
// machine) feeding one load through a series RL line, in QSP or EMT mode.
//
// Variable ordering is deterministic: source block, network block, load block,
// for both the differential vector x and the algebraic vector y. Labels are
// "<block>.<state>", e.g. "gfm.xi_d", "line.i_d", "im.psi_dr".

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfmstab/core.hpp"
#include "gfmstab/loads.hpp"
#include "gfmstab/network.hpp"
#include "gfmstab/sources.hpp"

namespace gfmstab {

enum class NetworkMode { qsp, emt };
enum class SourceKind { stiff, droop, vsm, dvoc, genrou, marconato };
enum class LoadKind { cpl, ccl, cil, zip, im, active };
enum class ReferenceMode { redispatch, fixed };
enum class StudyParameter { load, eta };
enum class ImScaling { torque, base };

/// How a variable transforms under a rotation of every phasor by a common angle.
enum class Rotation { none, angle, d, q };

inline const char* to_string(NetworkMode m) { return m == NetworkMode::qsp ? "QSP" : "EMT"; }

inline const char* to_string(SourceKind k) {
    switch (k) {
        case SourceKind::stiff: return "stiff";
        case SourceKind::droop: return "droop";
        case SourceKind::vsm: return "vsm";
        case SourceKind::dvoc: return "dvoc";
        case SourceKind::genrou: return "genrou";
        case SourceKind::marconato: return "marconato";
    }
    return "?";
}

inline const char* to_string(LoadKind k) {
    switch (k) {
        case LoadKind::cpl: return "cpl";
        case LoadKind::ccl: return "ccl";
        case LoadKind::cil: return "cil";
        case LoadKind::zip: return "zip";
        case LoadKind::im: return "im";
        case LoadKind::active: return "active";
    }
    return "?";
}

inline bool is_gfm(SourceKind k) { return k == SourceKind::droop || k == SourceKind::vsm || k == SourceKind::dvoc; }
inline bool is_machine(SourceKind k) { return k == SourceKind::genrou || k == SourceKind::marconato; }

inline GfmKind gfm_kind(SourceKind k) {
    switch (k) {
        case SourceKind::droop: return GfmKind::droop;
        case SourceKind::vsm: return GfmKind::vsm;
        case SourceKind::dvoc: return GfmKind::dvoc;
        default: throw ContractViolation("not a grid-forming source");
    }
}

inline SmKind sm_kind(SourceKind k) {
    if (k == SourceKind::genrou) return SmKind::genrou;
    if (k == SourceKind::marconato) return SmKind::marconato;
    throw ContractViolation("not a machine source");
}

struct SourceSpec {
    SourceKind kind = SourceKind::stiff;
    double v_set = 1.0;  // regulated bus-1 magnitude used by the power flow
    GfmParams gfm;
    MachineParams machine;
    AvrParams avr;
    ReferenceMode references = ReferenceMode::redispatch;
    GfmSetpoints fixed;  // used when references == fixed
};

struct NetworkSpec {
    NetworkMode mode = NetworkMode::qsp;
    LineParams line;
    double c_source = 0.0;  // shunt capacitance at bus 1
    double c_load = 0.0;    // shunt capacitance at the load bus (sized automatically for IM)
};

struct LoadSpec {
    LoadKind kind = LoadKind::cpl;
    double q_ratio = 0.0;    // Q/P of the constant-power part
    double eta = 1.0;        // ZIP: CPL share
    double p_cpl = 1.0;      // ZIP: CPL power per unit of load at eta = 1
    double ccl_share = 0.0;  // ZIP: constant-current share
    ImParams im;
    ImScaling im_scaling = ImScaling::base;
    double im_rating = 1.0;       // torque scaling: machine rating on the system base
    double im_load_factor = 0.8;  // base scaling: P / rating
    ActiveLoadParams active;
};

struct ScenarioSpec {
    std::string name = "scenario";
    PerUnitBase base;
    SourceSpec source;
    NetworkSpec network;
    LoadSpec load;
    StudyParameter parameter = StudyParameter::load;
    double level = 1.0;  // total load when the study parameter is eta
};

/// Equilibrium of the assembled DAE at one value of the continuation parameter.
struct OperatingPoint {
    double level = 0.0;
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    Eigen::VectorXd theta;
    Phasor v_load;
    Complex s_source{0.0, 0.0};
    Complex s_load{0.0, 0.0};
    double omega = 1.0;  // steady-state frequency in p.u.
};

/// Index-1 DAE  dx/dt = f(x, y, theta),  0 = g(x, y, theta).
struct SystemModel {
    using Eval = std::function<void(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                                    Eigen::VectorXd& f, Eigen::VectorXd& g)>;
    using Init = std::function<OperatingPoint(double level, const OperatingPoint* warm)>;

    std::string name;
    std::string parameter_name = "P";
    NetworkMode mode = NetworkMode::qsp;
    PerUnitBase base;
    std::vector<std::string> x_labels;
    std::vector<std::string> y_labels;
    std::vector<std::string> theta_labels;
    std::vector<Rotation> x_rotation;
    std::vector<Rotation> y_rotation;
    bool rotational_symmetry = false;
    int frame_speed_index = -1;  // theta entry holding the frame speed offset
    Eval eval;
    Init init;

    std::size_t n_x() const { return x_labels.size(); }
    std::size_t n_y() const { return y_labels.size(); }

    int x_index(const std::string& label) const {
        const auto it = std::find(x_labels.begin(), x_labels.end(), label);
        return it == x_labels.end() ? -1 : static_cast<int>(it - x_labels.begin());
    }
};

/// Infinitesimal generator of a common rotation, restricted to the variables tagged in rot.
inline Eigen::VectorXd rotation_generator(const std::vector<Rotation>& rot, const Eigen::VectorXd& v) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(v.size());
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        switch (rot[k]) {
            case Rotation::none: break;
            case Rotation::angle: r(k) = 1.0; break;
            case Rotation::d: r(k) = -v(k + 1); break;
            case Rotation::q: r(k) = v(k - 1); break;
        }
    }
    return r;
}

struct Residual {
    Eigen::VectorXd f;
    Eigen::VectorXd g;
};

/// f and g at (x, y, theta). When theta carries a frame speed offset the
/// differential part is expressed in a frame co-rotating with the equilibrium.
inline Residual residual(const SystemModel& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& theta) {
    if (static_cast<std::size_t>(x.size()) != sys.n_x() || static_cast<std::size_t>(y.size()) != sys.n_y())
        throw ContractViolation("residual: state dimensions do not match the model");
    Residual r{Eigen::VectorXd::Zero(x.size()), Eigen::VectorXd::Zero(y.size())};
    sys.eval(x, y, theta, r.f, r.g);
    if (sys.frame_speed_index >= 0) {
        const double dw = theta(sys.frame_speed_index);
        if (dw != 0.0) r.f -= sys.base.omega_b * dw * rotation_generator(sys.x_rotation, x);
    }
    return r;
}

inline Residual residual(const SystemModel& sys, const OperatingPoint& op) {
    return residual(sys, op.x, op.y, op.theta);
}

inline OperatingPoint initialize(const SystemModel& sys, double level, const OperatingPoint* warm = nullptr) {
    return sys.init(level, warm);
}

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

/// Load-bus voltage for a bus-1 voltage v1 feeding demand S(vL) through z.
/// Solves vL - v1 + z conj(S(vL)/vL) = 0 by damped Newton and rejects the
/// lower branch of the P-V curve. Throws NoEquilibrium past the nose.
inline Phasor two_bus_power_flow(const Phasor& v1, Complex z, const std::function<Complex(const Phasor&)>& demand,
                                 std::optional<Phasor> warm = std::nullopt) {
    auto F = [&](const Phasor& vl, std::optional<Complex> s_fixed = std::nullopt) {
        if (vl.mag() < 1e-6) throw NoEquilibrium("power flow: load voltage collapsed", 1.0);
        const Complex s = s_fixed ? *s_fixed : demand(vl);
        const Complex i = std::conj(s / vl.complex());
        return Phasor::from(vl.complex() - v1.complex() + z * i);
    };
    auto jac = [&](const Phasor& vl, std::optional<Complex> s_fixed) {
        Eigen::Matrix2d J;
        const double h = 1e-7;
        for (int k = 0; k < 2; ++k) {
            Phasor a = vl, b = vl;
            (k == 0 ? a.d : a.q) += h;
            (k == 0 ? b.d : b.q) -= h;
            const Phasor fa = F(a, s_fixed), fb = F(b, s_fixed);
            J(0, k) = (fa.d - fb.d) / (2 * h);
            J(1, k) = (fa.q - fb.q) / (2 * h);
        }
        return J;
    };
    Phasor v = warm ? *warm : v1;
    Phasor r = F(v);
    double nr = r.mag();
    for (int it = 0; it < 60 && nr > 1e-16; ++it) {
        const Eigen::Matrix2d J = jac(v, std::nullopt);
        if (std::abs(J.determinant()) < 1e-14) throw NoEquilibrium("power flow: singular Jacobian", nr);
        const Eigen::Vector2d dv = J.partialPivLu().solve(Eigen::Vector2d(-r.d, -r.q));
        double t = 1.0;
        bool accepted = false;
        for (int half = 0; half < 30; ++half, t *= 0.5) {
            const Phasor cand{v.d + t * dv(0), v.q + t * dv(1)};
            try {
                const Phasor rc = F(cand);
                if (rc.mag() < nr) {
                    v = cand;
                    r = rc;
                    nr = rc.mag();
                    accepted = true;
                    break;
                }
            } catch (const NoEquilibrium&) {
            }
        }
        if (!accepted) break;
    }
    if (!(nr <= 1e-10)) throw NoEquilibrium("power flow did not converge (beyond the P-V nose?)", nr);
    // upper branch: the constant-power Jacobian keeps its no-load sign
    if (jac(v, demand(v)).determinant() <= 0.0) throw NoEquilibrium("power flow converged to the lower branch", nr);
    return v;
}

// ---------------------------------------------------------------------------
// Two-bus model
// ---------------------------------------------------------------------------

namespace detail {

/// Parameter vector layout shared by every two-bus configuration.
enum Theta : int {
    th_p_ref,
    th_q_ref,
    th_v_ref,
    th_omega_ref,
    th_tau_m,
    th_sm_v_ref,
    th_v_set,
    th_c_load,
    th_cpl_p,
    th_cpl_q,
    th_cil_g,
    th_ccl_i,
    th_im_tau_l,
    th_im_s_m,
    th_act_g_l,
    th_act_i_q_ref,
    th_frame_dw,
    th_count
};

inline std::vector<std::string> theta_labels() {
    return {"gfm.p_ref", "gfm.q_ref", "gfm.v_ref", "gfm.omega_ref", "sm.tau_m", "sm.v_ref",
            "bus1.v_set", "bus2.c",   "cpl.p",     "cpl.q",        "cil.g",    "ccl.i",
            "im.tau_l",  "im.s_m",   "active.g_l", "active.i_q_ref", "frame.domega"};
}

/// Location of a complex quantity inside x or y.
struct Slot {
    enum class In { none, x, y } in = In::none;
    int at = -1;

    Phasor get(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
        const auto& v = in == In::x ? x : y;
        return {v(at), v(at + 1)};
    }
    void set(Eigen::VectorXd& x, Eigen::VectorXd& y, const Phasor& p) const {
        auto& v = in == In::x ? x : y;
        v(at) = p.d;
        v(at + 1) = p.q;
    }
};

class TwoBus {
public:
    explicit TwoBus(ScenarioSpec s) : s_(std::move(s)) {
        if (is_gfm(s_.source.kind)) s_.source.gfm.kind = gfm_kind(s_.source.kind);
        validate();
        layout();
    }

    const ScenarioSpec& spec() const { return s_; }

    void fill(SystemModel& m) const {
        m.name = s_.name;
        m.parameter_name = s_.parameter == StudyParameter::eta ? "eta" : "P";
        m.mode = s_.network.mode;
        m.base = s_.base;
        m.x_labels = x_labels_;
        m.y_labels = y_labels_;
        m.theta_labels = theta_labels();
        m.x_rotation = x_rot_;
        m.y_rotation = y_rot_;
        m.rotational_symmetry = s_.source.kind != SourceKind::stiff;
        m.frame_speed_index = th_frame_dw;
    }

    void eval(const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& th, Eigen::VectorXd& f,
              Eigen::VectorXd& g) const {
        const auto& base = s_.base;
        const auto& net = s_.network;
        const Phasor i_line = line_.get(x, y);
        const Phasor v_l = vl_.get(x, y);

        // source
        Phasor v_src;
        Phasor i_src_bus;  // current the source block injects at its node
        const SourceKind sk = s_.source.kind;
        if (sk == SourceKind::stiff) {
            v_src = {th(th_v_set), 0.0};
        } else if (is_gfm(sk)) {
            const GfmKind k = gfm_kind(sk);
            const GfmState st = unpack_gfm(k, x.data());
            const GfmSetpoints sp{th(th_p_ref), th(th_q_ref), th(th_v_ref), th(th_omega_ref)};
            const Phasor icv = icv_.get(x, y);
            const Phasor vf = vf_.get(x, y);
            const GfmOutput o = gfm_residual(st, vf, i_line, icv, s_.source.gfm, sp, base);
            pack(k, o.dx, f.data());
            const auto& fl = s_.source.gfm.filter;
            if (net.mode == NetworkMode::emt) {
                const Phasor dicv = rl_branch_derivative(icv, o.v_mod, vf, fl.r_f, fl.l_f, base);
                const Phasor dvf = shunt_cap_residual(vf, icv - i_line, {fl.c_f}, base);
                put_f(f, icv_, dicv);
                put_f(f, vf_, dvf);
            } else {
                put_g(g, row_filter_, o.v_mod - vf - icv * Complex{fl.r_f, fl.l_f});
                put_g(g, row_filter_ + 2, icv - i_line - jmul(vf) * fl.c_f);
            }
            v_src = vf;
        } else {
            const SmKind k = sm_kind(sk);
            const SmState st = unpack_sm(k, x.data());
            const Phasor v1 = v1_.get(x, y);
            const SmSetpoints sp{th(th_tau_m), th(th_sm_v_ref)};
            const Phasor is_in = k == SmKind::genrou ? is_.get(x, y) : Phasor{};
            const SmOutput o = sm_residual(k, st, v1, is_in, s_.source.machine, s_.source.avr, sp, base);
            pack(k, o.dx, f.data());
            if (k == SmKind::genrou) put_g(g, row_stator_, o.stator_residual);
            i_src_bus = o.i_stator;
            if (v1_.in == Slot::In::x) {
                put_f(f, v1_, shunt_cap_residual(v1, i_src_bus - i_line, {net.c_source}, base));
            } else {
                put_g(g, row_bus1_, i_src_bus - i_line - jmul(v1) * net.c_source);
            }
            v_src = v1;
        }

        // line
        if (line_.in == Slot::In::x) {
            put_f(f, line_, rl_branch_derivative(i_line, v_src, v_l, r_tot_, l_tot_, base));
        } else {
            put_g(g, row_line_, v_src - v_l - i_line * Complex{r_tot_, l_tot_});
        }

        // load
        Phasor i_load;
        const LoadKind lk = s_.load.kind;
        if (lk == LoadKind::im) {
            ImState st{x(load_x_), x(load_x_ + 1), x(load_x_ + 2), x(load_x_ + 3), x(load_x_ + 4)};
            const ImOutput o = im_residual(st, v_l, s_.load.im, {th(th_im_tau_l), th(th_im_s_m)}, base);
            f(load_x_) = o.dx.psi_ds;
            f(load_x_ + 1) = o.dx.psi_qs;
            f(load_x_ + 2) = o.dx.psi_dr;
            f(load_x_ + 3) = o.dx.psi_qr;
            f(load_x_ + 4) = o.dx.omega_r;
            i_load = o.i_s;
        } else if (lk == LoadKind::active) {
            const ActiveLoadState st = unpack_active(x.data() + load_x_);
            const ActiveLoadOutput o =
                active_load_residual(st, v_l, s_.load.active, {th(th_act_g_l), th(th_act_i_q_ref)}, base);
            pack(o.dx, f.data() + load_x_);
            i_load = o.i_grid;
        } else {
            const ZipParams zp = zip_params(th);
            std::vector<Phasor> br;
            for (std::size_t k = 0; k < zp.branch_count(); ++k) br.push_back({y(load_y_ + 2 * k), y(load_y_ + 2 * k + 1)});
            const Phasor i_in = i_line - jmul(v_l) * th(th_c_load);
            const Eigen::VectorXd zr = zip_residual(v_l, i_in, br, zp);
            const Eigen::Index nb = static_cast<Eigen::Index>(2 * br.size());
            g.segment(row_branch_, nb) = zr.tail(nb);
            for (const auto& b : br) i_load += b;
        }
        if (vl_.in == Slot::In::x) {
            put_f(f, vl_, shunt_cap_residual(v_l, i_line - i_load, {th(th_c_load)}, base));
        } else {
            put_g(g, row_kcl2_, i_line - jmul(v_l) * th(th_c_load) - i_load);
        }
    }

    OperatingPoint init(double level, const OperatingPoint* warm) const {
        const auto& ls = s_.load;
        const auto& net = s_.network;
        const double P = s_.parameter == StudyParameter::load ? level : s_.level;
        const double eta = s_.parameter == StudyParameter::eta ? level : ls.eta;
        if (!std::isfinite(P) || P < 0.0) throw InvalidParameter("load level must be finite and >= 0");

        Eigen::VectorXd th = Eigen::VectorXd::Zero(th_count);
        th(th_v_set) = s_.source.v_set;
        th(th_c_load) = net.c_load;

        // algebraic load split
        double p_cpl = 0, p_cil = 0, p_ccl = 0;
        switch (ls.kind) {
            case LoadKind::cpl: p_cpl = P; break;
            case LoadKind::cil: p_cil = P; break;
            case LoadKind::ccl: p_ccl = P; break;
            case LoadKind::zip:
                p_cpl = eta * ls.p_cpl * P;
                p_ccl = ls.ccl_share * P;
                p_cil = P - p_cpl - p_ccl;
                if (!(eta >= 0.0) || !(p_cil > 0.0 || P == 0.0))
                    throw InvalidSplit("ZIP split leaves no resistive share");
                break;
            default: break;
        }
        const double q_cpl = ls.q_ratio * p_cpl;

        std::optional<ActiveLoadInit> act;
        std::function<Complex(const Phasor&)> demand;
        if (ls.kind == LoadKind::active) {
            demand = [&](const Phasor& v) {
                auto a = active_load_initialize(v, P, ls.active);
                if (!a) throw NoEquilibrium("active load cannot draw the requested power", 1.0);
                return a->s_in - Complex{0.0, net.c_load * v.mag2()};
            };
        } else if (ls.kind == LoadKind::im) {
            demand = [&](const Phasor&) { return Complex{P, 0.0}; };
        } else {
            demand = [&](const Phasor& v) { return Complex{P, q_cpl - net.c_load * v.mag2()}; };
        }

        const Phasor v1{s_.source.v_set, 0.0};
        std::optional<Phasor> start;
        if (warm) start = warm->v_load;
        const Phasor v_l = two_bus_power_flow(v1, net.line.z(), demand, start);
        const Phasor i_line = (v1 - v_l) / net.line.z();

        Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(x_labels_.size()));
        Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(y_labels_.size()));
        OperatingPoint op;
        op.level = level;
        op.v_load = v_l;

        // source
        const SourceKind sk = s_.source.kind;
        if (sk == SourceKind::stiff) {
            op.s_source = power(v1, i_line);
        } else if (is_gfm(sk)) {
            const GfmKind k = gfm_kind(sk);
            const auto& gp = s_.source.gfm;
            const auto& fl = gp.filter;
            const Phasor vf = v1 + i_line * Complex{fl.r_g, fl.l_g};
            const Phasor icv = i_line + jmul(vf) * fl.c_f;
            const Phasor vm = vf + icv * Complex{fl.r_f, fl.l_f};
            const Complex s = power(vf, i_line);
            GfmState st;
            GfmSetpoints sp{s.real(), s.imag(), vf.mag(), 1.0};
            st.delta = vf.angle();
            st.p_f = s.real();
            st.q_f = s.imag();
            st.omega_v = 1.0;
            st.e_d = vf.d;
            st.e_q = vf.q;
            if (k == GfmKind::dvoc) {
                const double e0sq = gp.gains.e0 * gp.gains.e0;
                const double alpha = 1.0 / (2.0 * gp.gains.m_q);
                sp.p_ref = s.real() * e0sq / vf.mag2();
                sp.q_ref = e0sq * s.imag() / vf.mag2() - alpha * (e0sq - vf.mag2());
            }
            const double ang = vf.angle();
            const Phasor vf_d = to_device(vf, ang), ig_d = to_device(i_line, ang), icv_d = to_device(icv, ang);
            const Phasor vm_d = to_device(vm, ang);
            const auto& kk = gp.inner;
            const Phasor xi = (icv_d - jmul(vf_d) * fl.c_f - ig_d * kk.kffi) / kk.kiv;
            const Phasor gamma = (vm_d - jmul(icv_d) * fl.l_f - vf_d * kk.kffv) / kk.kic;
            st.xi_d = xi.d;
            st.xi_q = xi.q;
            st.gamma_d = gamma.d;
            st.gamma_q = gamma.q;
            pack(k, st, x.data());
            icv_.set(x, y, icv);
            vf_.set(x, y, vf);
            th(th_p_ref) = sp.p_ref;
            th(th_q_ref) = sp.q_ref;
            th(th_v_ref) = sp.v_ref;
            th(th_omega_ref) = 1.0;
            op.s_source = s;
        } else {
            const SmKind k = sm_kind(sk);
            const Phasor is = i_line + jmul(v1) * net.c_source;
            const SmInit si = sm_initialize(k, v1, is, s_.source.machine, s_.source.avr);
            pack(k, si.x, x.data());
            if (k == SmKind::genrou) is_.set(x, y, is);
            v1_.set(x, y, v1);
            th(th_tau_m) = si.sp.tau_m;
            th(th_sm_v_ref) = si.sp.v_ref;
            op.s_source = power(v1, is);
        }
        line_.set(x, y, i_line);
        vl_.set(x, y, v_l);

        // load
        Phasor i_load;
        if (ls.kind == LoadKind::im) {
            const double s_m = ls.im_scaling == ImScaling::torque ? ls.im_rating
                                                                   : std::max(P, 1e-3) / ls.im_load_factor;
            const auto im = im_initialize(v_l, P, ls.im, s_m);
            if (!im) throw NoEquilibrium("induction machine cannot absorb the requested power", 1.0);
            const double xs[] = {im->x.psi_ds, im->x.psi_qs, im->x.psi_dr, im->x.psi_qr, im->x.omega_r};
            std::copy(std::begin(xs), std::end(xs), x.data() + load_x_);
            th(th_im_tau_l) = im->sp.tau_l;
            th(th_im_s_m) = s_m;
            th(th_c_load) = im->s_in.imag() / v_l.mag2();
            op.s_load = im->s_in;
        } else if (ls.kind == LoadKind::active) {
            const auto a = active_load_initialize(v_l, P, ls.active);
            if (!a) throw NoEquilibrium("active load cannot draw the requested power", 1.0);
            pack(a->x, x.data() + load_x_);
            th(th_act_g_l) = a->sp.g_l;
            th(th_act_i_q_ref) = a->sp.i_q_ref;
            op.s_load = a->s_in;
        } else {
            th(th_cpl_p) = p_cpl;
            th(th_cpl_q) = q_cpl;
            th(th_cil_g) = p_cil / v_l.mag2();
            th(th_ccl_i) = p_ccl / v_l.mag();
            const ZipParams zp = zip_params(th);
            std::size_t k = 0;
            auto put = [&](const Phasor& b) {
                y(load_y_ + 2 * k) = b.d;
                y(load_y_ + 2 * k + 1) = b.q;
                ++k;
            };
            if (zp.has_cpl) put(Phasor::from(std::conj(Complex{p_cpl, q_cpl} / v_l.complex())));
            if (zp.has_cil) put(v_l * th(th_cil_g));
            if (zp.has_ccl) put(v_l * (th(th_ccl_i) / v_l.mag()));
            op.s_load = {P, q_cpl};
        }

        op.x = std::move(x);
        op.y = std::move(y);
        op.theta = std::move(th);
        if (s_.source.references == ReferenceMode::fixed) solve_fixed_references(op);
        return op;
    }

private:
    ScenarioSpec s_;
    std::vector<std::string> x_labels_, y_labels_;
    std::vector<Rotation> x_rot_, y_rot_;
    Slot icv_, vf_, is_, v1_, line_, vl_;
    int load_x_ = -1, load_y_ = -1;
    int row_stator_ = -1, row_bus1_ = -1, row_filter_ = -1, row_line_ = -1, row_kcl2_ = -1, row_branch_ = -1;
    double r_tot_ = 0.0, l_tot_ = 0.0;

    static void put_f(Eigen::VectorXd& f, const Slot& s, const Phasor& p) {
        f(s.at) = p.d;
        f(s.at + 1) = p.q;
    }
    static void put_g(Eigen::VectorXd& g, int row, const Phasor& p) {
        g(row) = p.d;
        g(row + 1) = p.q;
    }

    ZipParams zip_params(const Eigen::VectorXd& th) const {
        ZipParams z;
        const auto k = s_.load.kind;
        z.has_cpl = k == LoadKind::cpl || k == LoadKind::zip;
        z.has_cil = k == LoadKind::cil || k == LoadKind::zip;
        z.has_ccl = k == LoadKind::ccl || (k == LoadKind::zip && s_.load.ccl_share > 0.0);
        z.p = th(th_cpl_p);
        z.q = th(th_cpl_q);
        z.g_l = th(th_cil_g);
        z.i_mag = th(th_ccl_i);
        return z;
    }

    void validate() const {
        s_.base.validate();
        s_.network.line.validate();
        ShuntCapParams{s_.network.c_source}.validate();
        ShuntCapParams{s_.network.c_load}.validate();
        const auto sk = s_.source.kind;
        const auto lk = s_.load.kind;
        const bool emt = s_.network.mode == NetworkMode::emt;
        if (!(s_.source.v_set > 0.0)) throw InvalidParameter("source voltage set-point must be > 0");
        if (is_gfm(sk)) s_.source.gfm.validate();
        if (is_machine(sk)) {
            s_.source.machine.validate(sm_kind(sk));
            s_.source.avr.validate();
        }
        if (sk == SourceKind::marconato && !(emt && s_.network.c_source > 0.0))
            throw ConfigError("marconato machine needs EMT mode and a bus-1 shunt capacitance");
        if ((lk == LoadKind::im || lk == LoadKind::active) && !emt)
            throw ConfigError(std::string(to_string(lk)) + " load is only supported in EMT mode");
        if (lk == LoadKind::active && !(s_.network.c_load > 0.0))
            throw ConfigError("active load needs a load-bus shunt capacitance");
        if (lk == LoadKind::im) s_.load.im.validate();
        if (lk == LoadKind::active) s_.load.active.validate();
        if (s_.load.kind == LoadKind::zip) {
            if (!(s_.load.p_cpl >= 0.0 && s_.load.ccl_share >= 0.0 && s_.load.ccl_share < 1.0))
                throw InvalidParameter("ZIP shares must be non-negative");
        }
        if (s_.parameter == StudyParameter::eta && lk != LoadKind::zip)
            throw ConfigError("eta studies need a ZIP load");
        if (s_.source.references == ReferenceMode::fixed && !is_gfm(sk))
            throw ConfigError("fixed references are only defined for grid-forming sources");
        if (lk == LoadKind::im && s_.load.im_scaling == ImScaling::torque && !(s_.load.im_rating > 0.0))
            throw InvalidParameter("machine rating must be > 0");
        if (lk == LoadKind::im && s_.load.im_scaling == ImScaling::base && !(s_.load.im_load_factor > 0.0))
            throw InvalidParameter("machine load factor must be > 0");
    }

    void add_x(const std::string& label, Rotation r = Rotation::none) {
        x_labels_.push_back(label);
        x_rot_.push_back(r);
    }
    void add_y(const std::string& label, Rotation r = Rotation::none) {
        y_labels_.push_back(label);
        y_rot_.push_back(r);
    }
    Slot add_pair(bool differential, const std::string& prefix) {
        Slot s;
        if (differential) {
            s = {Slot::In::x, static_cast<int>(x_labels_.size())};
            add_x(prefix + "_d", Rotation::d);
            add_x(prefix + "_q", Rotation::q);
        } else {
            s = {Slot::In::y, static_cast<int>(y_labels_.size())};
            add_y(prefix + "_d", Rotation::d);
            add_y(prefix + "_q", Rotation::q);
        }
        return s;
    }

    void layout() {
        const bool emt = s_.network.mode == NetworkMode::emt;
        const auto sk = s_.source.kind;
        const auto lk = s_.load.kind;
        const auto& net = s_.network;
        int row = 0;

        // source block
        if (is_gfm(sk)) {
            const GfmKind k = gfm_kind(sk);
            for (const auto& n : gfm_state_names(k)) {
                Rotation r = Rotation::none;
                if (n == "delta") r = Rotation::angle;
                if (n == "e_d") r = Rotation::d;
                if (n == "e_q") r = Rotation::q;
                add_x("gfm." + n, r);
            }
        } else if (is_machine(sk)) {
            const SmKind k = sm_kind(sk);
            for (const auto& n : sm_state_names(k)) {
                Rotation r = n == "delta" ? Rotation::angle : Rotation::none;
                add_x("sm." + n, r);
            }
            if (k == SmKind::genrou) {
                is_ = add_pair(false, "sm.i_s");
                row_stator_ = row;
                row += 2;
            }
        }

        // network block
        r_tot_ = net.line.r;
        l_tot_ = net.line.ell();
        if (is_gfm(sk)) {
            const auto& fl = s_.source.gfm.filter;
            icv_ = add_pair(emt, "filter.i_cv");
            vf_ = add_pair(emt, "filter.v_f");
            if (!emt) {
                row_filter_ = row;
                row += 4;
            }
            r_tot_ += fl.r_g;
            l_tot_ += fl.l_g;
        } else if (is_machine(sk)) {
            v1_ = add_pair(emt && net.c_source > 0.0, "bus1.v");
            if (v1_.in == Slot::In::y) {
                row_bus1_ = row;
                row += 2;
            }
        }
        line_ = add_pair(emt, "line.i");
        if (!emt) {
            row_line_ = row;
            row += 2;
        }

        // load block
        const bool vl_dynamic = emt && (lk == LoadKind::im || lk == LoadKind::active || net.c_load > 0.0);
        vl_ = add_pair(vl_dynamic, "bus2.v");
        if (!vl_dynamic) {
            row_kcl2_ = row;
            row += 2;
        }
        if (lk == LoadKind::im) {
            load_x_ = static_cast<int>(x_labels_.size());
            for (const auto& n : im_state_names()) {
                Rotation r = Rotation::none;
                if (n == "psi_ds" || n == "psi_dr") r = Rotation::d;
                if (n == "psi_qs" || n == "psi_qr") r = Rotation::q;
                add_x("im." + n, r);
            }
        } else if (lk == LoadKind::active) {
            load_x_ = static_cast<int>(x_labels_.size());
            for (const auto& n : active_load_state_names()) {
                Rotation r = Rotation::none;
                if (n == "theta_pll") r = Rotation::angle;
                if (n.size() > 2 && n.compare(n.size() - 2, 2, "_d") == 0 && n.rfind("sigma", 0) != 0) r = Rotation::d;
                if (n.size() > 2 && n.compare(n.size() - 2, 2, "_q") == 0 && n.rfind("sigma", 0) != 0) r = Rotation::q;
                add_x("active." + n, r);
            }
        } else {
            load_y_ = static_cast<int>(y_labels_.size());
            row_branch_ = row;
            ZipParams z;
            Eigen::VectorXd th = Eigen::VectorXd::Zero(th_count);
            z = zip_params(th);
            if (z.has_cpl) add_pair(false, "zip.i_cpl");
            if (z.has_cil) add_pair(false, "zip.i_cil");
            if (z.has_ccl) add_pair(false, "zip.i_ccl");
            row += static_cast<int>(2 * z.branch_count());
        }
        if (row != static_cast<int>(y_labels_.size()))
            throw ContractViolation("two-bus layout: algebraic rows and unknowns differ");
    }

    /// Replaces the redispatched references by the configured ones and solves
    /// for the rotating equilibrium (unknown frame speed, one angle pinned).
    void solve_fixed_references(OperatingPoint& op) const {
        const auto& fx = s_.source.fixed;
        op.theta(th_p_ref) = fx.p_ref;
        op.theta(th_q_ref) = fx.q_ref;
        op.theta(th_v_ref) = fx.v_ref;
        op.theta(th_omega_ref) = fx.omega_ref;

        SystemModel sys;
        fill(sys);
        sys.eval = [this](const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& th,
                          Eigen::VectorXd& f, Eigen::VectorXd& g) { eval(x, y, th, f, g); };
        const Eigen::Index nx = op.x.size(), ny = op.y.size();
        const Eigen::VectorXd gen = rotation_generator(x_rot_, op.x);
        Eigen::Index pin = 0;
        gen.cwiseAbs().maxCoeff(&pin);

        // unknown vector: x without the pinned entry, y, frame speed
        const Eigen::Index n = nx + ny;
        auto unpack = [&](const Eigen::VectorXd& z, Eigen::VectorXd& x, Eigen::VectorXd& y, Eigen::VectorXd& th) {
            for (Eigen::Index k = 0, j = 0; k < nx; ++k) {
                if (k == pin) continue;
                x(k) = z(j++);
            }
            y = z.segment(nx - 1, ny);
            th(th_frame_dw) = z(n - 1);
        };
        auto F = [&](const Eigen::VectorXd& z) {
            Eigen::VectorXd x = op.x, y = op.y, th = op.theta;
            unpack(z, x, y, th);
            const Residual r = residual(sys, x, y, th);
            Eigen::VectorXd out(n);
            out << r.f, r.g;
            return out;
        };
        Eigen::VectorXd z(n);
        for (Eigen::Index k = 0, j = 0; k < nx; ++k)
            if (k != pin) z(j++) = op.x(k);
        z.segment(nx - 1, ny) = op.y;
        z(n - 1) = 0.0;

        Eigen::VectorXd r = F(z);
        double nr = r.lpNorm<Eigen::Infinity>();
        for (int it = 0; it < 60 && nr > 1e-10; ++it) {
            Eigen::MatrixXd J(n, n);
            for (Eigen::Index k = 0; k < n; ++k) {
                const double h = 1e-6 * std::max(1.0, std::abs(z(k)));
                Eigen::VectorXd a = z, b = z;
                a(k) += h;
                b(k) -= h;
                J.col(k) = (F(a) - F(b)) / (2 * h);
            }
            const Eigen::VectorXd dz = J.partialPivLu().solve(-r);
            if (!dz.allFinite()) throw NoEquilibrium("fixed-reference equilibrium: singular Jacobian", nr);
            double t = 1.0;
            bool ok = false;
            for (int half = 0; half < 30; ++half, t *= 0.5) {
                try {
                    const Eigen::VectorXd zc = z + t * dz;
                    const Eigen::VectorXd rc = F(zc);
                    const double nc = rc.lpNorm<Eigen::Infinity>();
                    if (std::isfinite(nc) && nc < nr) {
                        z = zc;
                        r = rc;
                        nr = nc;
                        ok = true;
                        break;
                    }
                } catch (const ModelInvalid&) {
                }
            }
            if (!ok) break;
        }
        if (!(nr <= 1e-8)) throw NoEquilibrium("fixed-reference equilibrium did not converge", nr);
        unpack(z, op.x, op.y, op.theta);
        op.omega = 1.0 + op.theta(th_frame_dw);
        op.v_load = vl_.get(op.x, op.y);
        const Phasor i_line = line_.get(op.x, op.y);
        op.s_source = power(vf_.get(op.x, op.y), i_line);
    }
};

}  // namespace detail

/// Builds the DAE for a scenario. Throws ConfigError for unsupported
/// source/load/mode combinations and InvalidParameter for bad values.
inline SystemModel assemble(const ScenarioSpec& spec) {
    auto tb = std::make_shared<const detail::TwoBus>(spec);
    SystemModel m;
    tb->fill(m);
    m.eval = [tb](const Eigen::VectorXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& th, Eigen::VectorXd& f,
                  Eigen::VectorXd& g) { tb->eval(x, y, th, f, g); };
    m.init = [tb](double level, const OperatingPoint* warm) { return tb->init(level, warm); };
    return m;
}

}  // namespace gfmstab
