#pragma once

// Linearisation of the DAE around an equilibrium, Kron reduction onto the
// differential states, eigenvalues and participation factors.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gfmstab/system.hpp"

namespace gfmstab {

struct Linearization {
    Eigen::MatrixXd fx, fy, gx, gy;
    double det_gy = 1.0;
    double pivot_ratio = 1.0;  // min |u_ii| / max |u_ii| of the LU factors of g_y
};

/// Central-difference Jacobians with h_i = 1e-6 max(1, |z_i|).
inline Linearization numeric_jacobians(const SystemModel& sys, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& theta) {
    const Eigen::Index nx = x.size(), ny = y.size();
    Linearization L;
    L.fx.resize(nx, nx);
    L.gx.resize(ny, nx);
    L.fy.resize(nx, ny);
    L.gy.resize(ny, ny);
    for (Eigen::Index k = 0; k < nx; ++k) {
        const double h = 1e-6 * std::max(1.0, std::abs(x(k)));
        Eigen::VectorXd a = x, b = x;
        a(k) += h;
        b(k) -= h;
        const Residual ra = residual(sys, a, y, theta), rb = residual(sys, b, y, theta);
        L.fx.col(k) = (ra.f - rb.f) / (2 * h);
        L.gx.col(k) = (ra.g - rb.g) / (2 * h);
    }
    for (Eigen::Index k = 0; k < ny; ++k) {
        const double h = 1e-6 * std::max(1.0, std::abs(y(k)));
        Eigen::VectorXd a = y, b = y;
        a(k) += h;
        b(k) -= h;
        const Residual ra = residual(sys, x, a, theta), rb = residual(sys, x, b, theta);
        L.fy.col(k) = (ra.f - rb.f) / (2 * h);
        L.gy.col(k) = (ra.g - rb.g) / (2 * h);
    }
    if (ny > 0) {
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(L.gy);
        L.det_gy = lu.determinant();
        const Eigen::VectorXd piv = lu.matrixLU().diagonal().cwiseAbs();
        L.pivot_ratio = piv.maxCoeff() > 0.0 ? piv.minCoeff() / piv.maxCoeff() : 0.0;
    }
    return L;
}

inline Linearization numeric_jacobians(const SystemModel& sys, const OperatingPoint& op) {
    return numeric_jacobians(sys, op.x, op.y, op.theta);
}

struct SingularityTest {
    double det_threshold = 1e-12;
    double pivot_ratio_threshold = 1e-8;  // above the central-difference noise floor
};

inline bool is_singular(const Linearization& L, const SingularityTest& t = {}) {
    if (L.gy.size() == 0) return false;
    return std::abs(L.det_gy) <= t.det_threshold || L.pivot_ratio <= t.pivot_ratio_threshold;
}

/// A = f_x - f_y g_y^{-1} g_x, by a linear solve. Throws Singularity.
inline Eigen::MatrixXd reduce(const Linearization& L, const SingularityTest& t = {}) {
    if (L.gy.rows() == 0) return L.fx;
    if (is_singular(L, t)) throw Singularity("g_y is singular at this operating point", L.det_gy);
    const Eigen::MatrixXd s = L.gy.partialPivLu().solve(L.gx);
    return L.fx - L.fy * s;
}

struct ModalReport {
    Eigen::VectorXcd eigenvalues;
    Eigen::MatrixXcd right;            // columns are right eigenvectors
    Eigen::MatrixXd participation;     // (state, mode), each column sums to 1
    std::vector<std::vector<std::size_t>> dominant;  // per mode, states with p >= threshold
};

inline constexpr double dominant_threshold = 0.2;

/// Eigenvalues of A with participation factors p_ki = |W_ik V_ki|, W = V^{-1},
/// each mode normalised to unit sum.
inline ModalReport modal_analysis(const Eigen::MatrixXd& A) {
    ModalReport r;
    const Eigen::Index n = A.rows();
    if (n == 0) return r;
    if (!A.allFinite()) throw NumericalFailure("state matrix has non-finite entries");
    Eigen::EigenSolver<Eigen::MatrixXd> es(A, true);
    if (es.info() != Eigen::Success) throw NumericalFailure("eigenvalue iteration did not converge");
    r.eigenvalues = es.eigenvalues();
    r.right = es.eigenvectors();
    const Eigen::MatrixXcd W = r.right.inverse();
    r.participation.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double sum = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double p = std::abs(W(i, k) * r.right(k, i));
            r.participation(k, i) = std::isfinite(p) ? p : 0.0;
            sum += r.participation(k, i);
        }
        if (sum > 0.0) r.participation.col(i) /= sum;
    }
    r.dominant.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<std::size_t> idx;
        for (Eigen::Index k = 0; k < n; ++k)
            if (r.participation(k, i) >= dominant_threshold) idx.push_back(static_cast<std::size_t>(k));
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return r.participation(static_cast<Eigen::Index>(a), i) > r.participation(static_cast<Eigen::Index>(b), i);
        });
        r.dominant[static_cast<std::size_t>(i)] = std::move(idx);
    }
    return r;
}

/// Index of the eigenvalue that carries the rotational symmetry of the
/// model, or -1. It is the mode whose eigenvector lies along the rotation
/// generator, provided its magnitude is below zero_tol.
inline int rotational_mode(const SystemModel& sys, const Eigen::VectorXd& x, const ModalReport& r,
                           double zero_tol = 1e-4) {
    if (!sys.rotational_symmetry || r.eigenvalues.size() == 0) return -1;
    const Eigen::VectorXd gen = rotation_generator(sys.x_rotation, x);
    const double gn = gen.norm();
    if (gn == 0.0) return -1;
    int best = -1;
    double best_cos = 0.0;
    for (Eigen::Index i = 0; i < r.eigenvalues.size(); ++i) {
        if (std::abs(r.eigenvalues(i)) > zero_tol) continue;
        const Eigen::VectorXcd v = r.right.col(i);
        const double c = std::abs(v.dot(gen.cast<Complex>())) / (v.norm() * gn);
        if (c > best_cos) {
            best_cos = c;
            best = static_cast<int>(i);
        }
    }
    return best_cos > 0.9 ? best : -1;
}

struct StabilityOptions {
    SingularityTest singular;
    double zero_tol = 1e-4;   // rotational mode magnitude bound
    double margin = 0.0;      // stable iff max Re < -margin
};

/// Full small-signal result at one operating point.
struct EigenReport {
    double level = 0.0;
    bool singular = false;
    double det_gy = 1.0;
    Eigen::MatrixXd A;
    ModalReport modes;
    int rotational = -1;
    double max_real = -std::numeric_limits<double>::infinity();
    bool stable = true;
    std::vector<std::string> labels;
};

inline EigenReport analyze(const SystemModel& sys, const OperatingPoint& op, const StabilityOptions& opt = {}) {
    EigenReport rep;
    rep.level = op.level;
    rep.labels = sys.x_labels;
    const Linearization L = numeric_jacobians(sys, op);
    rep.det_gy = L.det_gy;
    if (is_singular(L, opt.singular)) {
        rep.singular = true;
        rep.stable = false;
        rep.max_real = std::numeric_limits<double>::quiet_NaN();
        return rep;
    }
    rep.A = reduce(L, opt.singular);
    rep.modes = modal_analysis(rep.A);
    rep.rotational = rotational_mode(sys, op.x, rep.modes, opt.zero_tol);
    for (Eigen::Index i = 0; i < rep.modes.eigenvalues.size(); ++i) {
        if (i == rep.rotational) continue;
        rep.max_real = std::max(rep.max_real, rep.modes.eigenvalues(i).real());
    }
    rep.stable = !(rep.max_real >= -opt.margin);
    return rep;
}

/// Stiff-source constant-power criterion: stable iff |v_s - v_L| > |v_L| (strict).
inline bool allen_condition(const Phasor& v_s, const Phasor& v_l) {
    v_s.same_frame(v_l);
    return (v_s - v_l).mag() > v_l.mag();
}

/// det(g_y) of the CPL + resistor load with y = [vL, i1, i2] and Q = 0: |i1|^2 - |i2|^2.
inline double det_gy_zip(const Phasor& i1, const Phasor& i2) { return i1.mag2() - i2.mag2(); }

}  // namespace gfmstab
