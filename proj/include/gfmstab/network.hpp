#pragma once

// Series RL branches and shunt capacitors as QSP (algebraic) or EMT
// dynamic-phasor (differential) elements in the network DQ frame.

#include <span>
#include <string>

#include <Eigen/Dense>

#include "gfmstab/core.hpp"

namespace gfmstab {

struct LineParams {
    double r = 0.01;
    double x = 0.1;

    double ell() const { return x / PerUnitBase::omega_s; }
    Complex z() const { return {r, x}; }

    void validate() const {
        if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidParameter("line resistance must be >= 0");
        if (!(x > 0.0) || !std::isfinite(x)) throw InvalidParameter("line reactance must be > 0");
    }
};

struct ShuntCapParams {
    double c = 0.0;

    void validate() const {
        if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidParameter("shunt capacitance must be >= 0");
    }
};

/// LCL output filter of a converter: series RL on the converter side,
/// shunt C, series RL on the grid side.
struct FilterParams {
    double r_f = 0.003;
    double l_f = 0.08;
    double c_f = 0.074;
    double r_g = 0.01;
    double l_g = 0.2;

    void validate() const {
        if (!(r_f >= 0.0 && r_g >= 0.0)) throw InvalidParameter("filter resistances must be >= 0");
        if (!(l_f > 0.0 && c_f > 0.0 && l_g >= 0.0))
            throw InvalidParameter("filter needs l_f > 0, c_f > 0, l_g >= 0");
    }
};

/// g = Y v - i, two real rows (d, q) per node.
inline Eigen::VectorXd qsp_network_residual(std::span<const Phasor> v_nodes,
                                            std::span<const Phasor> i_injections,
                                            const Eigen::MatrixXcd& Y) {
    const auto n = static_cast<Eigen::Index>(v_nodes.size());
    if (Y.rows() != Y.cols() || Y.rows() != n || static_cast<Eigen::Index>(i_injections.size()) != n)
        throw ContractViolation("qsp_network_residual: Y must be square with one row per node and injection");
    Eigen::VectorXd g(2 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
        if (v_nodes[k].frame != Frame::network || i_injections[k].frame != Frame::network)
            throw ContractViolation("qsp_network_residual: phasors must be in the network frame");
        Complex acc{0.0, 0.0};
        for (Eigen::Index m = 0; m < n; ++m) acc += Y(k, m) * v_nodes[m].complex();
        acc -= i_injections[k].complex();
        g(2 * k) = acc.real();
        g(2 * k + 1) = acc.imag();
    }
    return g;
}

/// Admittance matrix of two buses joined by one series impedance.
inline Eigen::Matrix2cd two_bus_admittance(Complex z) {
    const Complex y = 1.0 / z;
    Eigen::Matrix2cd Y;
    Y << y, -y, -y, y;
    return Y;
}

/// d/dt of a series RL branch current: (Omega_b / l) (v_from - v_to - (r + j omega_s l) i).
inline Phasor rl_branch_derivative(const Phasor& i, const Phasor& v_from, const Phasor& v_to, double r,
                                   double l, const PerUnitBase& base) {
    if (!(l > 0.0)) throw InvalidParameter("RL branch inductance must be > 0");
    const Phasor drop = v_from - v_to - i * r - jmul(i) * (PerUnitBase::omega_s * l);
    return drop * (base.omega_b / l);
}

/// Dynamic-phasor line current derivative.
inline Phasor emt_line_residual(const Phasor& i_dq, const Phasor& v1, const Phasor& vL, const LineParams& p,
                                const PerUnitBase& base) {
    if (!(p.ell() > 0.0)) throw InvalidParameter("line inductance must be > 0");
    return rl_branch_derivative(i_dq, v1, vL, p.r, p.ell(), base);
}

/// d/dt of a shunt capacitor voltage fed by net current i_net.
inline Phasor shunt_cap_residual(const Phasor& v_dq, const Phasor& i_net, const ShuntCapParams& p,
                                 const PerUnitBase& base) {
    if (!(p.c > 0.0)) throw InvalidParameter("shunt capacitance must be > 0 for a dynamic node");
    return i_net * (base.omega_b / p.c) - jmul(v_dq) * (base.omega_b * PerUnitBase::omega_s);
}

}  // namespace gfmstab
