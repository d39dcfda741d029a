#pragma once

// Generation device models: grid-forming inverter controls (droop, VSM, dVOC)
// with cascaded voltage/current PI inner loops, and two synchronous machine
// models (GENROU for QSP studies, Marconato with stator fluxes for EMT) fed by
// a first-order exciter.
//
// Every model is a pure function of (state, terminal quantities, parameters,
// setpoints). Terminal phasors are in the network frame; controllers work in
// their own device frame, obtained with to_device().

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "gfmstab/core.hpp"
#include "gfmstab/network.hpp"

namespace gfmstab {

// ---------------------------------------------------------------------------
// Grid-forming inverter
// ---------------------------------------------------------------------------

enum class GfmKind { droop, vsm, dvoc };

inline const char* to_string(GfmKind k) {
    switch (k) {
        case GfmKind::droop: return "droop";
        case GfmKind::vsm: return "vsm";
        case GfmKind::dvoc: return "dvoc";
    }
    return "?";
}

struct DroopGains {
    double m_p = 0.02;                            // P-omega droop, p.u./p.u.
    double m_q = 0.05;                            // Q-v droop, p.u./p.u.
    double omega_f = 2.0 * std::numbers::pi * 5;  // power measurement filter, rad/s
    double e0 = 1.0;                              // dVOC nominal amplitude

    void validate() const {
        if (!(m_p > 0.0 && m_q > 0.0 && omega_f > 0.0 && e0 > 0.0))
            throw InvalidParameter("droop gains must be positive");
    }
};

/// Cascaded voltage (xi) and current (gamma) PI loops.
struct InnerLoopGains {
    double kpv = 0.59;
    double kiv = 736.0;
    double kffv = 0.0;
    double kpc = 1.27;
    double kic = 14.3;
    double kffi = 0.0;

    void validate() const {
        if (!(kpv >= 0.0 && kiv > 0.0 && kpc >= 0.0 && kic > 0.0))
            throw InvalidParameter("inner loop gains: kp >= 0 and ki > 0 required");
    }
};

struct GfmParams {
    GfmKind kind = GfmKind::droop;
    DroopGains gains;
    InnerLoopGains inner;
    FilterParams filter;
    double h_vsm = 2.0;  // virtual inertia, s (damping is fixed to 1/m_p)

    void validate() const {
        gains.validate();
        inner.validate();
        filter.validate();
        if (kind == GfmKind::vsm && !(h_vsm > 0.0)) throw InvalidParameter("VSM inertia must be > 0");
    }
};

/// References the outer loop regulates to. Redispatched at each load level
/// unless the scenario asks for fixed references.
struct GfmSetpoints {
    double p_ref = 0.0;
    double q_ref = 0.0;
    double v_ref = 1.0;
    double omega_ref = 1.0;
};

struct GfmState {
    double delta = 0.0;
    double p_f = 0.0;
    double q_f = 0.0;
    double omega_v = 1.0;
    double e_d = 1.0;
    double e_q = 0.0;
    double xi_d = 0.0;
    double xi_q = 0.0;
    double gamma_d = 0.0;
    double gamma_q = 0.0;
};

inline std::size_t outer_state_count(GfmKind k) {
    switch (k) {
        case GfmKind::droop: return 3;
        case GfmKind::vsm: return 4;
        case GfmKind::dvoc: return 2;
    }
    throw InvalidParameter("unknown GFM kind");
}

inline constexpr std::size_t inner_state_count = 4;

inline std::size_t gfm_state_count(GfmKind k) { return outer_state_count(k) + inner_state_count; }

inline std::vector<std::string> gfm_state_names(GfmKind k) {
    std::vector<std::string> n;
    switch (k) {
        case GfmKind::droop: n = {"delta", "p_f", "q_f"}; break;
        case GfmKind::vsm: n = {"delta", "omega_v", "p_f", "q_f"}; break;
        case GfmKind::dvoc: n = {"e_d", "e_q"}; break;
    }
    for (const char* s : {"xi_d", "xi_q", "gamma_d", "gamma_q"}) n.emplace_back(s);
    return n;
}

inline void pack(GfmKind k, const GfmState& s, double* out) {
    std::size_t i = 0;
    switch (k) {
        case GfmKind::droop:
            out[i++] = s.delta;
            out[i++] = s.p_f;
            out[i++] = s.q_f;
            break;
        case GfmKind::vsm:
            out[i++] = s.delta;
            out[i++] = s.omega_v;
            out[i++] = s.p_f;
            out[i++] = s.q_f;
            break;
        case GfmKind::dvoc:
            out[i++] = s.e_d;
            out[i++] = s.e_q;
            break;
    }
    out[i++] = s.xi_d;
    out[i++] = s.xi_q;
    out[i++] = s.gamma_d;
    out[i++] = s.gamma_q;
}

inline GfmState unpack_gfm(GfmKind k, const double* in) {
    GfmState s;
    std::size_t i = 0;
    switch (k) {
        case GfmKind::droop:
            s.delta = in[i++];
            s.p_f = in[i++];
            s.q_f = in[i++];
            break;
        case GfmKind::vsm:
            s.delta = in[i++];
            s.omega_v = in[i++];
            s.p_f = in[i++];
            s.q_f = in[i++];
            break;
        case GfmKind::dvoc:
            s.e_d = in[i++];
            s.e_q = in[i++];
            break;
    }
    s.xi_d = in[i++];
    s.xi_q = in[i++];
    s.gamma_d = in[i++];
    s.gamma_q = in[i++];
    return s;
}

struct GfmOutput {
    GfmState dx;      // time derivatives, 1/s
    Phasor v_mod;     // modulation voltage feeding the filter, network frame
    double omega;     // device frequency, p.u.
    double angle;     // device frame angle, rad
    double v_olref;   // outer-loop voltage magnitude command
};

/// Outer-loop frequency and voltage command implied by the current state.
struct OuterCommand {
    double angle;
    double omega;
    double v_olref;
};

/// dVOC derivative in the network frame.
inline Phasor dvoc_derivative(const Phasor& e, const Phasor& i_g, const GfmParams& p, const GfmSetpoints& sp,
                              const PerUnitBase& base) {
    const double eta = p.gains.m_p;
    const double alpha = 1.0 / (2.0 * p.gains.m_q);
    const double e0sq = p.gains.e0 * p.gains.e0;
    const Complex s_ref{sp.p_ref, -sp.q_ref};
    const Phasor sync = jmul(e * (s_ref / e0sq) - i_g);
    const Phasor amp = e * (alpha * (e0sq - e.mag2()) / e0sq);
    const Phasor rot = jmul(e) * (sp.omega_ref - PerUnitBase::omega_s);
    return (rot + (sync + amp) * eta) * base.omega_b;
}

/// Grid-forming inverter controller.
///
/// v_f is the filter-capacitor voltage, i_g the grid-side current and i_cv the
/// converter-side current, all in the network frame. Power is measured at the
/// capacitor node: p + jq = v_f conj(i_g).
inline GfmOutput gfm_residual(const GfmState& x, const Phasor& v_f, const Phasor& i_g, const Phasor& i_cv,
                              const GfmParams& p, const GfmSetpoints& sp, const PerUnitBase& base) {
    if (v_f.frame != Frame::network || i_g.frame != Frame::network || i_cv.frame != Frame::network)
        throw ContractViolation("gfm_residual: terminal quantities must be in the network frame");
    const auto& g = p.gains;
    const Complex s_meas = power(v_f, i_g);
    GfmOutput out{};
    GfmState& dx = out.dx;
    dx.omega_v = 0.0;
    dx.e_d = 0.0;

    switch (p.kind) {
        case GfmKind::droop: {
            const double omega = sp.omega_ref + g.m_p * (sp.p_ref - x.p_f);
            out.omega = omega;
            out.angle = x.delta;
            out.v_olref = sp.v_ref + g.m_q * (sp.q_ref - x.q_f);
            dx.delta = base.omega_b * (omega - PerUnitBase::omega_s);
            dx.p_f = g.omega_f * (s_meas.real() - x.p_f);
            dx.q_f = g.omega_f * (s_meas.imag() - x.q_f);
            break;
        }
        case GfmKind::vsm: {
            const double damping = 1.0 / g.m_p;
            out.omega = x.omega_v;
            out.angle = x.delta;
            out.v_olref = sp.v_ref + g.m_q * (sp.q_ref - x.q_f);
            dx.delta = base.omega_b * (x.omega_v - PerUnitBase::omega_s);
            dx.omega_v = (sp.p_ref - x.p_f - damping * (x.omega_v - sp.omega_ref)) / (2.0 * p.h_vsm);
            dx.p_f = g.omega_f * (s_meas.real() - x.p_f);
            dx.q_f = g.omega_f * (s_meas.imag() - x.q_f);
            break;
        }
        case GfmKind::dvoc: {
            const Phasor e{x.e_d, x.e_q};
            const double emag2 = e.mag2();
            if (!(emag2 > 0.0)) throw ModelInvalid("dVOC oscillator amplitude collapsed to zero");
            const Phasor de = dvoc_derivative(e, i_g, p, sp, base);
            dx.e_d = de.d;
            dx.e_q = de.q;
            out.angle = e.angle();
            out.v_olref = std::sqrt(emag2);
            // d(angle e)/dt = Im(de/e)
            out.omega = PerUnitBase::omega_s + (e.d * de.q - e.q * de.d) / emag2 / base.omega_b;
            break;
        }
    }

    // Inner loops in the device frame aligned with the outer-loop angle.
    const double w = out.omega;
    const Phasor vf = to_device(v_f, out.angle);
    const Phasor ig = to_device(i_g, out.angle);
    const Phasor icv = to_device(i_cv, out.angle);
    const Phasor vref{out.v_olref, 0.0, Frame::device};
    const Phasor xi{x.xi_d, x.xi_q, Frame::device};
    const Phasor gamma{x.gamma_d, x.gamma_q, Frame::device};
    const auto& k = p.inner;

    const Phasor verr = vref - vf;
    dx.xi_d = verr.d;
    dx.xi_q = verr.q;
    const Phasor iref = verr * k.kpv + xi * k.kiv + jmul(vf) * (w * p.filter.c_f) + ig * k.kffi;
    const Phasor ierr = iref - icv;
    dx.gamma_d = ierr.d;
    dx.gamma_q = ierr.q;
    const Phasor vm = ierr * k.kpc + gamma * k.kic + jmul(icv) * (w * p.filter.l_f) + vf * k.kffv;
    out.v_mod = to_network(vm, out.angle);
    return out;
}

// ---------------------------------------------------------------------------
// Synchronous machines
// ---------------------------------------------------------------------------

enum class SmKind { genrou, marconato };

inline const char* to_string(SmKind k) { return k == SmKind::genrou ? "genrou" : "marconato"; }

struct MachineParams {
    double r_a = 0.0025;
    double x_d = 1.0;
    double x_q = 0.95;
    double x_dp = 0.2;
    double x_qp = 0.55;
    double x_dpp = 0.15;
    double x_qpp = 0.15;
    double x_l = 0.1;
    double t_d0p = 30.0;
    double t_q0p = 0.4;
    double t_d0pp = 0.03;
    double t_q0pp = 0.05;
    double h = 3.5;
    double d = 10.0;

    void validate(SmKind kind) const {
        if (!(x_d >= x_dp && x_dp >= x_dpp && x_dpp > 0.0))
            throw InvalidParameter("machine reactances must satisfy x_d >= x_d' >= x_d'' > 0");
        if (!(x_q >= x_qp && x_qp >= x_qpp && x_qpp > 0.0))
            throw InvalidParameter("machine reactances must satisfy x_q >= x_q' >= x_q'' > 0");
        if (!(t_d0p > 0.0 && t_q0p > 0.0 && t_d0pp > 0.0 && t_q0pp > 0.0 && h > 0.0 && r_a >= 0.0 && d >= 0.0))
            throw InvalidParameter("machine time constants and inertia must be positive");
        if (kind == SmKind::genrou) {
            if (!(x_l < x_dpp && x_l < x_qpp && x_l >= 0.0))
                throw InvalidParameter("GENROU requires 0 <= x_l < x''");
            if (std::abs(x_dpp - x_qpp) > 1e-12) throw InvalidParameter("GENROU requires x_d'' == x_q''");
        }
    }
};

struct AvrParams {
    double k = 200.0;
    double t_e = 0.1;

    void validate() const {
        if (!(t_e > 0.0)) throw InvalidParameter("exciter time constant must be > 0");
        if (!(k > 0.0)) throw InvalidParameter("exciter gain must be > 0");
    }
};

/// First-order exciter: dE_fd/dt = (K (v_ref - v_meas) - E_fd) / T_E.
inline double avr_residual(double e_fd, double v_meas, double v_ref, double k, double t_e) {
    if (!(t_e > 0.0)) throw InvalidParameter("exciter time constant must be > 0");
    if (!(k > 0.0)) throw InvalidParameter("exciter gain must be > 0");
    return (k * (v_ref - v_meas) - e_fd) / t_e;
}

struct SmSetpoints {
    double tau_m = 0.0;
    double v_ref = 1.0;
};

/// Union of GENROU and Marconato states; unused fields stay zero.
struct SmState {
    double delta = 0.0;
    double omega = 1.0;
    double eqp = 0.0;
    double edp = 0.0;
    double psi_kd = 0.0;  // GENROU damper fluxes
    double psi_kq = 0.0;
    double psi_d = 0.0;  // Marconato stator fluxes
    double psi_q = 0.0;
    double eqpp = 0.0;  // Marconato subtransient EMFs
    double edpp = 0.0;
    double efd = 0.0;
};

inline std::size_t sm_state_count(SmKind k) { return k == SmKind::genrou ? 7 : 9; }

inline std::vector<std::string> sm_state_names(SmKind k) {
    if (k == SmKind::genrou) return {"delta", "omega", "eq_p", "ed_p", "psi_kd", "psi_kq", "E_fd"};
    return {"delta", "omega", "psi_d", "psi_q", "eq_p", "ed_p", "eq_pp", "ed_pp", "E_fd"};
}

inline void pack(SmKind k, const SmState& s, double* out) {
    if (k == SmKind::genrou) {
        const double v[] = {s.delta, s.omega, s.eqp, s.edp, s.psi_kd, s.psi_kq, s.efd};
        std::copy(std::begin(v), std::end(v), out);
    } else {
        const double v[] = {s.delta, s.omega, s.psi_d, s.psi_q, s.eqp, s.edp, s.eqpp, s.edpp, s.efd};
        std::copy(std::begin(v), std::end(v), out);
    }
}

inline SmState unpack_sm(SmKind k, const double* in) {
    SmState s;
    if (k == SmKind::genrou) {
        s.delta = in[0];
        s.omega = in[1];
        s.eqp = in[2];
        s.edp = in[3];
        s.psi_kd = in[4];
        s.psi_kq = in[5];
        s.efd = in[6];
    } else {
        s.delta = in[0];
        s.omega = in[1];
        s.psi_d = in[2];
        s.psi_q = in[3];
        s.eqp = in[4];
        s.edp = in[5];
        s.eqpp = in[6];
        s.edpp = in[7];
        s.efd = in[8];
    }
    return s;
}

/// Machine dq frame: d axis lags the rotor angle delta by 90 degrees.
inline double machine_frame_angle(double delta) { return delta - std::numbers::pi / 2.0; }

struct SmOutput {
    SmState dx;
    /// GENROU: algebraic stator residual E'' - (r_a + j x'') i - v (network frame).
    Phasor stator_residual;
    /// Marconato: stator current computed from the flux states (network frame).
    Phasor i_stator;
    double tau_e = 0.0;
};

/// Synchronous machine with a first-order exciter.
///
/// GENROU: stator is algebraic, i_stator is an algebraic unknown supplied by
/// the caller. Marconato: stator fluxes are states, i_stator is ignored and the
/// stator current is returned instead.
inline SmOutput sm_residual(SmKind kind, const SmState& x, const Phasor& v_term, const Phasor& i_stator,
                            const MachineParams& m, const AvrParams& avr, const SmSetpoints& sp,
                            const PerUnitBase& base) {
    if (v_term.frame != Frame::network) throw ContractViolation("sm_residual: v_term must be in the network frame");
    SmOutput out{};
    SmState& dx = out.dx;
    dx.omega = 0.0;
    const double theta = machine_frame_angle(x.delta);
    const Phasor v = to_device(v_term, theta);

    dx.delta = base.omega_b * (x.omega - PerUnitBase::omega_s);
    dx.efd = avr_residual(x.efd, v_term.mag(), sp.v_ref, avr.k, avr.t_e);

    if (kind == SmKind::genrou) {
        const Phasor i = to_device(i_stator, theta);
        const double gd1 = (m.x_dpp - m.x_l) / (m.x_dp - m.x_l);
        const double gq1 = (m.x_qpp - m.x_l) / (m.x_qp - m.x_l);
        const double gd2 = (m.x_dp - m.x_dpp) / ((m.x_dp - m.x_l) * (m.x_dp - m.x_l));
        const double gq2 = (m.x_qp - m.x_qpp) / ((m.x_qp - m.x_l) * (m.x_qp - m.x_l));
        dx.eqp = (x.efd - x.eqp - (m.x_d - m.x_dp) * (i.d - gd2 * (x.psi_kd + (m.x_dp - m.x_l) * i.d - x.eqp))) /
                 m.t_d0p;
        dx.psi_kd = (-x.psi_kd + x.eqp - (m.x_dp - m.x_l) * i.d) / m.t_d0pp;
        dx.edp = (-x.edp + (m.x_q - m.x_qp) * (i.q - gq2 * (x.psi_kq + (m.x_qp - m.x_l) * i.q + x.edp))) / m.t_q0p;
        dx.psi_kq = (-x.psi_kq - x.edp - (m.x_qp - m.x_l) * i.q) / m.t_q0pp;
        const double psi_dpp = gd1 * x.eqp + (1.0 - gd1) * x.psi_kd;
        const double psi_qpp = -gq1 * x.edp + (1.0 - gq1) * x.psi_kq;
        const Phasor e_pp{-psi_qpp, psi_dpp, Frame::device};
        const Phasor res = e_pp - i * m.r_a - jmul(i) * m.x_dpp - v;
        out.stator_residual = to_network(res, theta);
        out.i_stator = i_stator;
        out.tau_e = psi_dpp * i.q - psi_qpp * i.d;
    } else {
        const double gam_d = m.t_d0pp * m.x_dpp * (m.x_d - m.x_dp) / (m.t_d0p * m.x_dp);
        const double gam_q = m.t_q0pp * m.x_qpp * (m.x_q - m.x_qp) / (m.t_q0p * m.x_qp);
        const Phasor i{(x.eqpp - x.psi_d) / m.x_dpp, -(x.edpp + x.psi_q) / m.x_qpp, Frame::device};
        dx.eqp = (-x.eqp - (m.x_d - m.x_dp - gam_d) * i.d + x.efd) / m.t_d0p;
        dx.edp = (-x.edp + (m.x_q - m.x_qp - gam_q) * i.q) / m.t_q0p;
        dx.eqpp = (-x.eqpp + x.eqp - (m.x_dp - m.x_dpp + gam_d) * i.d) / m.t_d0pp;
        dx.edpp = (-x.edpp + x.edp + (m.x_qp - m.x_qpp + gam_q) * i.q) / m.t_q0pp;
        // (1/Omega_b) dpsi/dt = v + r_a i - j omega psi
        const Phasor psi{x.psi_d, x.psi_q, Frame::device};
        const Phasor dpsi = (v + i * m.r_a - jmul(psi) * x.omega) * base.omega_b;
        dx.psi_d = dpsi.d;
        dx.psi_q = dpsi.q;
        out.i_stator = to_network(i, theta);
        out.tau_e = x.psi_d * i.q - x.psi_q * i.d;
    }
    dx.omega = (sp.tau_m - out.tau_e - m.d * (x.omega - PerUnitBase::omega_s)) / (2.0 * m.h);
    return out;
}

/// Machine states and setpoints that put the machine in steady state with
/// terminal voltage v and stator current i (both network frame, omega = 1).
struct SmInit {
    SmState x;
    SmSetpoints sp;
};

inline SmInit sm_initialize(SmKind kind, const Phasor& v_term, const Phasor& i_term, const MachineParams& m,
                            const AvrParams& avr) {
    m.validate(kind);
    avr.validate();
    const Phasor eq = v_term + i_term * Complex{m.r_a, m.x_q};
    SmInit out;
    SmState& x = out.x;
    x.delta = eq.angle();
    x.omega = 1.0;
    const double theta = machine_frame_angle(x.delta);
    const Phasor v = to_device(v_term, theta);
    const Phasor i = to_device(i_term, theta);
    x.efd = v.q + m.r_a * i.q + m.x_d * i.d;
    if (kind == SmKind::genrou) {
        x.eqp = v.q + m.r_a * i.q + m.x_dp * i.d;
        x.psi_kd = x.eqp - (m.x_dp - m.x_l) * i.d;
        x.edp = (m.x_q - m.x_qp) * i.q;
        x.psi_kq = -x.edp - (m.x_qp - m.x_l) * i.q;
    } else {
        const double gam_d = m.t_d0pp * m.x_dpp * (m.x_d - m.x_dp) / (m.t_d0p * m.x_dp);
        const double gam_q = m.t_q0pp * m.x_qpp * (m.x_q - m.x_qp) / (m.t_q0p * m.x_qp);
        x.eqpp = v.q + m.r_a * i.q + m.x_dpp * i.d;
        x.eqp = x.eqpp + (m.x_dp - m.x_dpp + gam_d) * i.d;
        x.edp = (m.x_q - m.x_qp - gam_q) * i.q;
        x.edpp = (m.x_q - m.x_qpp) * i.q;
        x.psi_d = x.eqpp - m.x_dpp * i.d;
        x.psi_q = -x.edpp - m.x_qpp * i.q;
    }
    // air-gap torque equals electrical power at the internal EMF
    const Complex s = power(v_term, i_term);
    out.sp.tau_m = s.real() + m.r_a * i_term.mag2();
    out.sp.v_ref = v_term.mag() + x.efd / avr.k;
    return out;
}

}  // namespace gfmstab
