#pragma once

// Load device models: algebraic ZIP composition (CPL / CIL / CCL branches),
// a 5th-order induction machine in dynamic phasors, and a 12-state active
// rectifier load regulating a DC-link voltage into a resistor.

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfmstab/core.hpp"
#include "gfmstab/network.hpp"

namespace gfmstab {

// ---------------------------------------------------------------------------
// ZIP
// ---------------------------------------------------------------------------

/// Branch parameters of a ZIP load. A branch takes part in the residual only
/// when its flag is set; the resistor is stored as a conductance so that an
/// open branch (r_L = inf) is representable.
struct ZipParams {
    bool has_cpl = true;
    bool has_cil = false;
    bool has_ccl = false;
    double p = 0.0;      // CPL active power
    double q = 0.0;      // CPL reactive power
    double g_l = 0.0;    // 1 / r_L
    double i_mag = 0.0;  // CCL current magnitude

    std::size_t branch_count() const { return std::size_t(has_cpl) + has_cil + has_ccl; }
};

/// Residual of the algebraic load equations at the load bus.
///
/// Rows: KCL i_in = sum of branches (2), then for every active branch in the
/// order CPL, CIL, CCL:  vL conj(i1) - (P + jQ),  i2 - vL / r_L,
/// i3 - I_mag vL / |vL|.
inline Eigen::VectorXd zip_residual(const Phasor& v_l, const Phasor& i_in, std::span<const Phasor> branch_currents,
                                    const ZipParams& p) {
    if (branch_currents.size() != p.branch_count())
        throw ContractViolation("zip_residual: one current per active branch required");
    Eigen::VectorXd g(2 + 2 * branch_currents.size());
    Phasor kcl = i_in;
    for (const auto& b : branch_currents) kcl -= b;
    g(0) = kcl.d;
    g(1) = kcl.q;
    std::size_t k = 0;
    Eigen::Index row = 2;
    if (p.has_cpl) {
        if (v_l.mag2() == 0.0 && (p.p != 0.0 || p.q != 0.0))
            throw SingularLoad("constant-power branch at zero voltage");
        const Complex s = power(v_l, branch_currents[k++]);
        g(row++) = s.real() - p.p;
        g(row++) = s.imag() - p.q;
    }
    if (p.has_cil) {
        const Phasor r = branch_currents[k++] - v_l * p.g_l;
        g(row++) = r.d;
        g(row++) = r.q;
    }
    if (p.has_ccl) {
        const double vm = v_l.mag();
        if (vm == 0.0) throw SingularLoad("constant-current branch at zero voltage");
        const Phasor r = branch_currents[k++] - v_l * (p.i_mag / vm);
        g(row++) = r.d;
        g(row++) = r.q;
    }
    return g;
}

/// Resistance that keeps a ZIP load at total power p_total when the CPL
/// branch takes eta * p_cpl: r_L = |vL|^2 / (p_total - eta p_cpl).
inline double zip_eta_split(double eta, double p_cpl, const Phasor& v_l, double p_total = 1.0) {
    const double share = eta * p_cpl;
    if (!(eta >= 0.0) || !(share >= 0.0)) throw InvalidSplit("eta * P_cpl must be non-negative");
    if (!(share < p_total)) throw InvalidSplit("eta * P_cpl must stay below the total load");
    return v_l.mag2() / (p_total - share);
}

// ---------------------------------------------------------------------------
// Induction machine
// ---------------------------------------------------------------------------

/// Single-cage machine, motor convention, impedances on the machine base.
struct ImParams {
    double r_s = 0.031;
    double x_ls = 0.1;
    double r_r = 0.018;
    double x_lr = 0.18;
    double x_m = 3.2;
    double h = 0.5;

    double x_ss() const { return x_ls + x_m; }
    double x_rr() const { return x_lr + x_m; }

    void validate() const {
        if (!(r_s > 0.0 && r_r > 0.0 && x_ls > 0.0 && x_lr > 0.0 && x_m > 0.0 && h > 0.0))
            throw InvalidParameter("induction machine parameters must be positive");
        if (!(x_m > x_ls && x_m > x_lr))
            throw InvalidParameter("magnetizing reactance must exceed the leakage reactances");
    }
};

struct ImState {
    double psi_ds = 0.0;
    double psi_qs = 0.0;
    double psi_dr = 0.0;
    double psi_qr = 0.0;
    double omega_r = 1.0;
};

inline constexpr std::size_t im_state_count = 5;

inline std::vector<std::string> im_state_names() { return {"psi_ds", "psi_qs", "psi_dr", "psi_qr", "omega_r"}; }

/// Mechanical load torque and the machine rating relative to the system base.
struct ImSetpoints {
    double tau_l = 0.0;
    double s_m = 1.0;
};

struct ImOutput {
    ImState dx;
    Phasor i_s;  // stator current drawn from the bus, system base
    double tau_e = 0.0;
};

inline std::pair<Phasor, Phasor> im_currents(const ImState& x, const ImParams& p) {
    const double det = p.x_ss() * p.x_rr() - p.x_m * p.x_m;
    const Phasor ps{x.psi_ds, x.psi_qs};
    const Phasor pr{x.psi_dr, x.psi_qr};
    return {(ps * p.x_rr() - pr * p.x_m) / det, (pr * p.x_ss() - ps * p.x_m) / det};
}

inline ImOutput im_residual(const ImState& x, const Phasor& v_term, const ImParams& p, const ImSetpoints& sp,
                            const PerUnitBase& base) {
    if (v_term.frame != Frame::network) throw ContractViolation("im_residual: v_term must be in the network frame");
    const auto [is, ir] = im_currents(x, p);
    const Phasor ps{x.psi_ds, x.psi_qs};
    const Phasor pr{x.psi_dr, x.psi_qr};
    const Phasor dps = (v_term - is * p.r_s - jmul(ps) * PerUnitBase::omega_s) * base.omega_b;
    const Phasor dpr = (-(ir * p.r_r) - jmul(pr) * (PerUnitBase::omega_s - x.omega_r)) * base.omega_b;
    ImOutput out;
    out.tau_e = x.psi_ds * is.q - x.psi_qs * is.d;
    out.dx = {dps.d, dps.q, dpr.d, dpr.q, (out.tau_e - sp.tau_l) / (2.0 * p.h)};
    out.i_s = is * sp.s_m;
    return out;
}

/// Steady-state stator current (machine base) at slip s from the equivalent circuit.
inline Complex im_steady_current(double slip, Complex v, const ImParams& p) {
    const Complex zm{0.0, p.x_m};
    const Complex zr{p.r_r / slip, p.x_lr};
    const Complex z = Complex{p.r_s, p.x_ls} + zm * zr / (zm + zr);
    return v / z;
}

inline double im_input_power(double slip, double vmag, const ImParams& p) {
    if (slip == 0.0) {
        const Complex z{p.r_s, p.x_ls + p.x_m};
        return std::norm(vmag / z) * p.r_s;
    }
    const Complex i = im_steady_current(slip, {vmag, 0.0}, p);
    return (Complex{vmag, 0.0} * std::conj(i)).real();
}

struct ImInit {
    ImState x;
    ImSetpoints sp;
    double slip = 0.0;
    Complex s_in;  // complex power drawn at the terminal, system base
};

/// Places the machine in steady state drawing active power p_target (system
/// base) at terminal voltage v. Picks the low-slip root. Returns nullopt when
/// the machine cannot absorb p_target at this voltage.
inline std::optional<ImInit> im_initialize(const Phasor& v, double p_target, const ImParams& p, double s_m) {
    p.validate();
    if (!(s_m > 0.0)) throw InvalidParameter("machine rating must be > 0");
    const double vm = v.mag();
    const double target = p_target / s_m;
    // slip of maximum input power, golden-section search on (0, 1]
    double a = 1e-9, b = 1.0;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 200; ++it) {
        const double c = b - gr * (b - a);
        const double d = a + gr * (b - a);
        if (im_input_power(c, vm, p) > im_input_power(d, vm, p))
            b = d;
        else
            a = c;
    }
    const double s_peak = 0.5 * (a + b);
    double lo = 0.0, hi = s_peak;
    if (target > im_input_power(hi, vm, p)) return std::nullopt;
    if (target < im_input_power(lo, vm, p)) return std::nullopt;  // below no-load copper losses
    for (int it = 0; it < 200 && hi - lo > 1e-16; ++it) {
        const double mid = 0.5 * (lo + hi);
        (im_input_power(mid, vm, p) < target ? lo : hi) = mid;
    }
    const double s = 0.5 * (lo + hi);

    ImInit out;
    out.slip = s;
    const Complex vc = v.complex();
    Complex is, ir;
    if (s == 0.0) {
        is = vc / Complex{p.r_s, p.x_ls + p.x_m};
        ir = 0.0;
    } else {
        is = im_steady_current(s, vc, p);
        ir = -Complex{0.0, p.x_m} * is / Complex{p.r_r / s, p.x_lr + p.x_m};
    }
    const Complex ps = p.x_ss() * is + p.x_m * ir;
    const Complex pr = p.x_rr() * ir + p.x_m * is;
    out.x = {ps.real(), ps.imag(), pr.real(), pr.imag(), 1.0 - s};
    out.sp.s_m = s_m;
    out.sp.tau_l = ps.real() * is.imag() - ps.imag() * is.real();
    out.s_in = vc * std::conj(is) * s_m;
    return out;
}

// ---------------------------------------------------------------------------
// Active load
// ---------------------------------------------------------------------------

struct ActiveLoadParams {
    FilterParams filter{0.01, 0.08, 0.074, 0.01, 0.2};
    double kp_pll = 0.4;
    double ki_pll = 4.69;
    double kp_dc = 0.3;
    double ki_dc = 800.0;
    double kp_c = 3.0;
    double ki_c = 20.0;
    double c_dc = 2.0;
    double v_dc_ref = 1.0;

    void validate() const {
        filter.validate();
        if (!(filter.l_g > 0.0)) throw InvalidParameter("active load needs a grid-side inductance");
        if (!(c_dc > 0.0)) throw InvalidParameter("DC-link capacitance must be > 0");
        if (!(v_dc_ref > 0.0)) throw InvalidParameter("DC voltage reference must be > 0");
        if (!(ki_pll > 0.0 && ki_dc > 0.0 && ki_c > 0.0)) throw InvalidParameter("integral gains must be > 0");
    }
};

struct ActiveLoadState {
    double i_cv_d = 0.0;
    double i_cv_q = 0.0;
    double v_c_d = 1.0;
    double v_c_q = 0.0;
    double i_g_d = 0.0;
    double i_g_q = 0.0;
    double theta_pll = 0.0;
    double eps_pll = 0.0;
    double v_dc = 1.0;
    double zeta = 0.0;
    double sigma_d = 0.0;
    double sigma_q = 0.0;
};

inline constexpr std::size_t active_load_state_count = 12;

inline std::vector<std::string> active_load_state_names() {
    return {"i_cv_d", "i_cv_q", "v_c_d", "v_c_q", "i_g_d", "i_g_q",
            "theta_pll", "eps_pll", "v_dc", "zeta", "sigma_d", "sigma_q"};
}

inline void pack(const ActiveLoadState& s, double* out) {
    const double v[] = {s.i_cv_d, s.i_cv_q, s.v_c_d, s.v_c_q, s.i_g_d, s.i_g_q,
                        s.theta_pll, s.eps_pll, s.v_dc, s.zeta, s.sigma_d, s.sigma_q};
    std::copy(std::begin(v), std::end(v), out);
}

inline ActiveLoadState unpack_active(const double* in) {
    return {in[0], in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8], in[9], in[10], in[11]};
}

/// DC load conductance 1/r_L and the reactive current reference in the PLL frame.
struct ActiveLoadSetpoints {
    double g_l = 0.0;
    double i_q_ref = 0.0;
};

struct ActiveLoadOutput {
    ActiveLoadState dx;
    Phasor i_grid;  // current drawn from the load bus
    Phasor v_mod;
    double p_dc = 0.0;
};

/// Rectifier with LCL filter, SRF-PLL, DC-voltage PI generating the d-axis
/// current reference, and current PI loops in the PLL frame. Currents flow
/// from the grid into the converter.
inline ActiveLoadOutput active_load_residual(const ActiveLoadState& x, const Phasor& v_term,
                                             const ActiveLoadParams& p, const ActiveLoadSetpoints& sp,
                                             const PerUnitBase& base) {
    if (v_term.frame != Frame::network)
        throw ContractViolation("active_load_residual: v_term must be in the network frame");
    if (!(x.v_dc > 0.0)) throw ModelInvalid("active load: v_DC <= 0");
    const auto& f = p.filter;
    const Phasor icv{x.i_cv_d, x.i_cv_q};
    const Phasor vc{x.v_c_d, x.v_c_q};
    const Phasor ig{x.i_g_d, x.i_g_q};

    const Phasor vc_p = to_device(vc, x.theta_pll);
    const Phasor icv_p = to_device(icv, x.theta_pll);
    const double omega_pll = 1.0 + p.kp_pll * vc_p.q + p.ki_pll * x.eps_pll;

    const double verr = p.v_dc_ref - x.v_dc;
    const Phasor iref{p.kp_dc * verr + p.ki_dc * x.zeta, sp.i_q_ref, Frame::device};
    const Phasor ierr = iref - icv_p;
    const Phasor sigma{x.sigma_d, x.sigma_q, Frame::device};
    const Phasor vm_p = vc_p - ierr * p.kp_c - sigma * p.ki_c - jmul(icv_p) * (omega_pll * f.l_f);
    const Phasor vm = to_network(vm_p, x.theta_pll);

    const Phasor dicv = rl_branch_derivative(icv, vc, vm, f.r_f, f.l_f, base);
    const Phasor dvc = (ig - icv) * (base.omega_b / f.c_f) - jmul(vc) * base.omega_b;
    const Phasor dig = rl_branch_derivative(ig, v_term, vc, f.r_g, f.l_g, base);

    ActiveLoadOutput out;
    out.p_dc = power(vm, icv).real();
    out.dx.i_cv_d = dicv.d;
    out.dx.i_cv_q = dicv.q;
    out.dx.v_c_d = dvc.d;
    out.dx.v_c_q = dvc.q;
    out.dx.i_g_d = dig.d;
    out.dx.i_g_q = dig.q;
    out.dx.theta_pll = base.omega_b * (omega_pll - 1.0);
    out.dx.eps_pll = vc_p.q;
    out.dx.v_dc = base.omega_b * (out.p_dc - sp.g_l * x.v_dc * x.v_dc) / (p.c_dc * x.v_dc);
    out.dx.zeta = verr;
    out.dx.sigma_d = ierr.d;
    out.dx.sigma_q = ierr.q;
    out.i_grid = ig;
    out.v_mod = vm;
    return out;
}

struct ActiveLoadInit {
    ActiveLoadState x;
    ActiveLoadSetpoints sp;
    Complex s_in;  // power drawn at the terminal
};

/// Steady state for a given grid current drawn at terminal voltage v.
inline ActiveLoadInit active_load_from_current(const Phasor& v, const Phasor& ig, const ActiveLoadParams& p) {
    const auto& f = p.filter;
    const Phasor vc = v - ig * Complex{f.r_g, f.l_g};
    const Phasor icv = ig - jmul(vc) * f.c_f;
    const Phasor vm = vc - icv * Complex{f.r_f, f.l_f};
    ActiveLoadInit out;
    auto& x = out.x;
    x.i_cv_d = icv.d;
    x.i_cv_q = icv.q;
    x.v_c_d = vc.d;
    x.v_c_q = vc.q;
    x.i_g_d = ig.d;
    x.i_g_q = ig.q;
    x.theta_pll = vc.angle();
    x.eps_pll = 0.0;
    x.v_dc = p.v_dc_ref;
    const Phasor vc_p = to_device(vc, x.theta_pll);
    const Phasor icv_p = to_device(icv, x.theta_pll);
    const Phasor vm_p = to_device(vm, x.theta_pll);
    x.zeta = icv_p.d / p.ki_dc;
    out.sp.i_q_ref = icv_p.q;
    const Phasor sigma = (vc_p - jmul(icv_p) * f.l_f - vm_p) / p.ki_c;
    x.sigma_d = sigma.d;
    x.sigma_q = sigma.q;
    const double p_dc = power(vm, icv).real();
    out.sp.g_l = p_dc / (p.v_dc_ref * p.v_dc_ref);
    out.s_in = power(v, ig);
    return out;
}

/// Steady state drawing DC power p_dc = v_DC^2 / r_L with zero reactive
/// power at the terminal. Returns nullopt if p_dc is not reachable.
inline std::optional<ActiveLoadInit> active_load_initialize(const Phasor& v, double p_dc, const ActiveLoadParams& p) {
    p.validate();
    const double vm = v.mag();
    if (!(vm > 0.0)) throw SingularLoad("active load at zero voltage");
    const Phasor u = v / vm;
    auto dc_power = [&](double a) {
        const Phasor ig = u * a;
        const auto& f = p.filter;
        const Phasor vc = v - ig * Complex{f.r_g, f.l_g};
        const Phasor icv = ig - jmul(vc) * f.c_f;
        const Phasor vm_ = vc - icv * Complex{f.r_f, f.l_f};
        return power(vm_, icv).real();
    };
    // dc_power(a) is concave in the in-phase current a; find its maximiser
    double lo = 0.0, hi = 1.0;
    while (dc_power(hi) > dc_power(0.5 * hi) && hi < 1e6) hi *= 2.0;
    double a = lo, b = hi;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int it = 0; it < 200; ++it) {
        const double c = b - gr * (b - a);
        const double d = a + gr * (b - a);
        (dc_power(c) > dc_power(d) ? b : a) = (dc_power(c) > dc_power(d) ? d : c);
    }
    const double a_peak = 0.5 * (a + b);
    double l = -1.0, h = a_peak;
    while (dc_power(l) > p_dc && l > -1e6) l *= 2.0;
    if (dc_power(h) < p_dc) return std::nullopt;
    for (int it = 0; it < 200 && h - l > 1e-16; ++it) {
        const double mid = 0.5 * (l + h);
        (dc_power(mid) < p_dc ? l : h) = mid;
    }
    return active_load_from_current(v, u * (0.5 * (l + h)), p);
}

}  // namespace gfmstab
