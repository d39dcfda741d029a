#include <catch_amalgamated.hpp>

#include <array>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gfmstab/network.hpp"

using namespace gfmstab;
using Catch::Approx;

namespace {

// |v2|^2 from |v1|^2 V = (V + rP + xQ)^2 + (xP - rQ)^2, upper root.
Phasor two_bus_oracle(Complex v1, Complex z, Complex s) {
    const double r = z.real(), x = z.imag(), P = s.real(), Q = s.imag();
    const double a = r * P + x * Q, c = x * P - r * Q;
    const double b = 2 * a - std::norm(v1);
    const double V = 0.5 * (-b + std::sqrt(b * b - 4 * (a * a + c * c)));
    const Complex v2 = std::conj((V + z * std::conj(s)) / v1);
    return Phasor::from(v2);
}

}  // namespace

TEST_CASE("QSP residual vanishes at the two-bus power flow solution") {
    const Complex z{0.01, 0.1};
    const Phasor v1{1.0, 0.0};
    const Phasor v2 = two_bus_oracle({1.0, 0.0}, z, {1.0, 0.0});
    CHECK(v2.mag() == Approx(0.985).margin(1e-3));
    const Phasor i = (v1 - v2) / z;
    const std::array<Phasor, 2> v{v1, v2};
    const std::array<Phasor, 2> inj{i, -i};
    const Eigen::VectorXd g = qsp_network_residual(v, inj, two_bus_admittance(z));
    CHECK(g.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("QSP residual trivial cases") {
    const std::array<Phasor, 2> zero{};
    CHECK(qsp_network_residual(zero, zero, two_bus_admittance({0.01, 0.1})).norm() == 0.0);

    Eigen::MatrixXcd Y(1, 1);
    Y(0, 0) = 1.0;
    const std::array<Phasor, 1> v{Phasor{1.0, 0.0}};
    const std::array<Phasor, 1> i{Phasor{}};
    const Eigen::VectorXd g = qsp_network_residual(v, i, Y);
    CHECK(g(0) == 1.0);
    CHECK(g(1) == 0.0);

    const std::array<Phasor, 2> bad{};
    CHECK_THROWS_AS(qsp_network_residual(v, bad, Y), ContractViolation);
}

TEST_CASE("EMT line steady state and unenergized line") {
    const LineParams p;
    const PerUnitBase b;
    const Phasor i{0.7, -0.2};
    const Phasor vL{0.98, -0.1};
    const Phasor v1 = vL + i * p.z();
    const Phasor d = emt_line_residual(i, v1, vL, p, b);
    CHECK(d.mag() < 1e-10);
    CHECK(emt_line_residual({}, vL, vL, p, b).mag() == 0.0);
    CHECK(p.ell() == p.x);
}

TEST_CASE("EMT line Jacobian and eigenvalues") {
    const LineParams p{0.01, 0.1};
    const PerUnitBase b;
    // central differences of the residual w.r.t. (i_d, i_q)
    Eigen::Matrix2d J;
    const double h = 1e-6;
    const Phasor v1{1.0, 0.0}, vL{0.97, -0.1}, i0{0.4, 0.3};
    for (int k = 0; k < 2; ++k) {
        Phasor ip = i0, im = i0;
        (k == 0 ? ip.d : ip.q) += h;
        (k == 0 ? im.d : im.q) -= h;
        const Phasor dp = emt_line_residual(ip, v1, vL, p, b), dm = emt_line_residual(im, v1, vL, p, b);
        J(0, k) = (dp.d - dm.d) / (2 * h);
        J(1, k) = (dp.q - dm.q) / (2 * h);
    }
    const double a = -b.omega_b * p.r / p.ell(), w = b.omega_b * PerUnitBase::omega_s;
    Eigen::Matrix2d analytic;
    analytic << a, w, -w, a;
    CHECK((J - analytic).norm() / analytic.norm() < 1e-9);

    const Eigen::Vector2cd ev = Eigen::EigenSolver<Eigen::Matrix2d>(J).eigenvalues();
    for (int k = 0; k < 2; ++k) {
        CHECK(ev(k).real() == Approx(-37.699111843077517).epsilon(1e-9));
        CHECK(std::abs(ev(k).imag()) == Approx(376.99111843077515).epsilon(1e-9));
    }
}

TEST_CASE("shunt capacitor") {
    const PerUnitBase b;
    const ShuntCapParams c{0.05};
    const Phasor v{0.99, -0.05};
    const Phasor in = jmul(v) * (PerUnitBase::omega_s * c.c);
    CHECK(shunt_cap_residual(v, in, c, b).mag() < 1e-12);

    const Phasor d = shunt_cap_residual({}, {1.0, 0.0}, {1.0}, b);
    CHECK(d.d == Approx(b.omega_b));
    CHECK(d.q == 0.0);

    // with i_net fixed the pair is a pure rotation at Omega_b
    Eigen::Matrix2d J;
    J << 0.0, b.omega_b, -b.omega_b, 0.0;
    const Phasor d0 = shunt_cap_residual({0.0, 0.0}, {}, c, b);
    const Phasor dd = shunt_cap_residual({1.0, 0.0}, {}, c, b);
    const Phasor dq = shunt_cap_residual({0.0, 1.0}, {}, c, b);
    Eigen::Matrix2d Jn;
    Jn << dd.d - d0.d, dq.d - d0.d, dd.q - d0.q, dq.q - d0.q;
    CHECK((Jn - J).norm() < 1e-9);
    const Eigen::Vector2cd ev = Eigen::EigenSolver<Eigen::Matrix2d>(Jn).eigenvalues();
    CHECK(std::abs(ev(0).real()) < 1e-9);
    CHECK(std::abs(ev(0).imag()) == Approx(b.omega_b));

    CHECK_THROWS_AS(shunt_cap_residual(v, in, {0.0}, b), InvalidParameter);
}

TEST_CASE("parameter validation") {
    CHECK_THROWS_AS((LineParams{-0.1, 0.1}.validate()), InvalidParameter);
    CHECK_THROWS_AS((LineParams{0.01, 0.0}.validate()), InvalidParameter);
    CHECK_THROWS_AS((ShuntCapParams{-1.0}.validate()), InvalidParameter);
    FilterParams f;
    f.c_f = 0.0;
    CHECK_THROWS_AS(f.validate(), InvalidParameter);
}
