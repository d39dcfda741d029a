#include <catch_amalgamated.hpp>

#include <array>
#include <vector>

#include "gfmstab/loads.hpp"
#include "gfmstab/sources.hpp"

using namespace gfmstab;
using Catch::Approx;

namespace {

double sm_derivative_norm(const SmState& d) {
    const double v[] = {d.delta, d.omega, d.eqp, d.edp, d.psi_kd, d.psi_kq, d.psi_d, d.psi_q, d.eqpp, d.edpp, d.efd};
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
}

double im_derivative_norm(const ImState& d) {
    return std::max({std::abs(d.psi_ds), std::abs(d.psi_qs), std::abs(d.psi_dr), std::abs(d.psi_qr),
                     std::abs(d.omega_r)});
}

}  // namespace

// ---------------------------------------------------------------------------
// grid-forming inverter
// ---------------------------------------------------------------------------

TEST_CASE("GFM state inventory") {
    CHECK(outer_state_count(GfmKind::droop) == 3);
    CHECK(outer_state_count(GfmKind::vsm) == 4);
    CHECK(outer_state_count(GfmKind::dvoc) == 2);
    for (auto k : {GfmKind::droop, GfmKind::vsm, GfmKind::dvoc}) {
        CHECK(gfm_state_count(k) == outer_state_count(k) + 4);
        CHECK(gfm_state_names(k).size() == gfm_state_count(k));
        std::vector<double> buf(gfm_state_count(k));
        GfmState s;
        s.delta = 0.1;
        s.omega_v = 1.01;
        s.e_d = 0.9;
        s.e_q = 0.2;
        s.xi_q = -0.3;
        pack(k, s, buf.data());
        const GfmState u = unpack_gfm(k, buf.data());
        CHECK(u.xi_q == s.xi_q);
    }
}

TEST_CASE("droop at its setpoint runs at nominal frequency") {
    GfmParams p;
    const GfmSetpoints sp{0.6, 0.1, 1.02, 1.0};
    GfmState x;
    x.p_f = sp.p_ref;
    x.q_f = sp.q_ref;
    const Phasor v{1.0, 0.0}, i{0.6, -0.1};
    const GfmOutput o = gfm_residual(x, v, i, i, p, sp, PerUnitBase{});
    CHECK(o.omega == 1.0);
    CHECK(o.v_olref == 1.02);
    CHECK(o.dx.delta == 0.0);
}

TEST_CASE("droop: +1 p.u. power gives -0.02 p.u. frequency") {
    GfmParams p;
    const GfmSetpoints sp{0.5, 0.0, 1.0, 1.0};
    GfmState x;
    x.p_f = sp.p_ref + 1.0;
    x.q_f = 0.0;
    const GfmOutput o = gfm_residual(x, {1.0, 0.0}, {1.5, 0.0}, {1.5, 0.0}, p, sp, PerUnitBase{});
    CHECK(o.omega - 1.0 == Approx(-0.02).epsilon(1e-12));
}

TEST_CASE("dVOC no-load amplitude settles at e0") {
    GfmParams p;
    p.kind = GfmKind::dvoc;
    const GfmSetpoints sp{0.0, 0.0, 1.0, 1.0};
    const PerUnitBase b;
    for (double ang : {0.0, 0.4, -2.0}) CHECK(dvoc_derivative(Phasor::polar(1.0, ang), {}, p, sp, b).mag() < 1e-12);
    // the amplitude dynamics are attracting from either side
    for (double m : {0.8, 1.2}) {
        const Phasor e = Phasor::polar(m, 0.3);
        const Phasor de = dvoc_derivative(e, {}, p, sp, b);
        const double radial = (e.d * de.d + e.q * de.q) / m;
        CHECK(radial * (m - 1.0) < 0.0);
    }
}

// ---------------------------------------------------------------------------
// synchronous machine
// ---------------------------------------------------------------------------

TEST_CASE("machine state inventory") {
    CHECK(sm_state_count(SmKind::genrou) == 7);
    CHECK(sm_state_count(SmKind::marconato) == 9);
    CHECK(sm_state_names(SmKind::marconato)[2] == "psi_d");
}

TEST_CASE("initialized machine is in equilibrium") {
    const MachineParams m;
    const AvrParams avr;
    const PerUnitBase b;
    const Phasor v = Phasor::polar(1.0, 0.1), i = Phasor::polar(0.8, -0.2);
    for (auto k : {SmKind::genrou, SmKind::marconato}) {
        const SmInit in = sm_initialize(k, v, i, m, avr);
        const SmOutput o = sm_residual(k, in.x, v, i, m, avr, in.sp, b);
        CHECK(sm_derivative_norm(o.dx) < 1e-8);
        if (k == SmKind::genrou)
            CHECK(o.stator_residual.mag() < 1e-12);
        else
            CHECK((o.i_stator - i).mag() < 1e-12);
    }
}

TEST_CASE("speed deviation drives the rotor angle") {
    const MachineParams m;
    const AvrParams avr;
    const PerUnitBase b;
    const Phasor v{1.0, 0.0}, i{0.5, -0.1};
    for (auto k : {SmKind::genrou, SmKind::marconato}) {
        SmInit in = sm_initialize(k, v, i, m, avr);
        in.x.omega += 0.01;
        const SmOutput o = sm_residual(k, in.x, v, i, m, avr, in.sp, b);
        CHECK(o.dx.delta == Approx(0.01 * b.omega_b).epsilon(1e-12));
    }
}

TEST_CASE("GENROU: higher field voltage gives a higher e_q'") {
    // With the stator current held, the d-axis equilibrium is
    // e_q' = E_fd - (x_d - x_d') i_d and psi_kd = e_q' - (x_d' - x_l) i_d.
    const MachineParams m;
    const AvrParams avr;
    const PerUnitBase b;
    const Phasor v{1.0, 0.0}, i{0.7, -0.2};
    const SmInit base = sm_initialize(SmKind::genrou, v, i, m, avr);
    for (double step : {0.05, 0.3}) {
        SmState x = base.x;
        x.efd += step;
        x.eqp += step;
        x.psi_kd += step;
        SmSetpoints sp = base.sp;
        sp.v_ref += step / avr.k;
        const SmOutput o = sm_residual(SmKind::genrou, x, v, i, m, avr, sp, b);
        CHECK(std::abs(o.dx.eqp) < 1e-10);
        CHECK(std::abs(o.dx.psi_kd) < 1e-10);
        CHECK(x.eqp > base.x.eqp);
    }
}

TEST_CASE("exciter") {
    CHECK(avr_residual(0.0, 1.0, 1.0, 200, 0.1) == 0.0);
    CHECK(avr_residual(0.0, 1.0, 1.01, 200, 0.1) == Approx(20.0).epsilon(1e-12));
    const double h = 1e-6;
    const double slope = (avr_residual(h, 1.0, 1.0, 200, 0.1) - avr_residual(-h, 1.0, 1.0, 200, 0.1)) / (2 * h);
    CHECK(slope == Approx(-1.0 / 0.1).epsilon(1e-9));
    CHECK_THROWS_AS(avr_residual(0.0, 1.0, 1.0, 200, 0.0), InvalidParameter);
}

// ---------------------------------------------------------------------------
// ZIP
// ---------------------------------------------------------------------------

TEST_CASE("ZIP: pure resistor") {
    ZipParams p;
    p.has_cpl = false;
    p.has_cil = true;
    const Phasor v = Phasor::polar(0.985, -0.1);
    p.g_l = 1.0 / zip_eta_split(0.0, 1.0, v);
    const std::array<Phasor, 1> br{v * p.g_l};
    CHECK(zip_residual(v, br[0], br, p).lpNorm<Eigen::Infinity>() < 1e-15);
}

TEST_CASE("ZIP: equal branch currents at eta = 0.5") {
    const Phasor v = Phasor::polar(0.985, -0.1);
    ZipParams p;
    p.has_cil = true;
    p.p = 0.5;
    p.g_l = 1.0 / zip_eta_split(0.5, 1.0, v);
    const Phasor i1 = Phasor::from(std::conj(Complex{p.p, p.q} / v.complex()));
    const Phasor i2 = v * p.g_l;
    CHECK(i1.mag() == Approx(0.5 / 0.985).epsilon(1e-12));
    CHECK(i2.mag() == Approx(0.5 / 0.985).epsilon(1e-12));
    CHECK(i1.mag() == Approx(0.5076).margin(1e-4));
    const std::array<Phasor, 2> br{i1, i2};
    CHECK(zip_residual(v, i1 + i2, br, p).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("ZIP: constant-power identity") {
    ZipParams p;
    p.p = 0.8;
    p.q = 0.3;
    for (double ang : {0.0, 1.0, -2.5}) {
        const Phasor v = Phasor::polar(0.9, ang);
        const Phasor i1 = Phasor::from(std::conj(Complex{p.p, p.q} / v.complex()));
        const std::array<Phasor, 1> br{i1};
        CHECK(zip_residual(v, i1, br, p).lpNorm<Eigen::Infinity>() < 1e-14);
    }
    const std::array<Phasor, 1> br{Phasor{}};
    CHECK_THROWS_AS(zip_residual({}, {}, br, p), SingularLoad);
    const std::array<Phasor, 2> two{};
    CHECK_THROWS_AS(zip_residual({1.0, 0.0}, {}, two, p), ContractViolation);
}

TEST_CASE("ZIP split resistance") {
    const Phasor v{0.985, 0.0};
    CHECK(zip_eta_split(0.0, 1.0, v) == Approx(0.970225).epsilon(1e-12));
    CHECK(zip_eta_split(0.5, 1.0, v) == Approx(1.94045).epsilon(1e-12));
    CHECK(zip_eta_split(0.999999, 1.0, v) > 1e5);
    CHECK_THROWS_AS(zip_eta_split(1.0, 1.0, v), InvalidSplit);
    CHECK_THROWS_AS(zip_eta_split(-0.1, 1.0, v), InvalidSplit);
}

// ---------------------------------------------------------------------------
// induction machine
// ---------------------------------------------------------------------------

TEST_CASE("IM: synchronous idle produces no torque") {
    const ImParams p;
    const Phasor is{0.3, -0.2};
    ImState x;
    x.psi_ds = p.x_ss() * is.d;
    x.psi_qs = p.x_ss() * is.q;
    x.psi_dr = p.x_m * is.d;
    x.psi_qr = p.x_m * is.q;
    x.omega_r = 1.0;
    const auto [i_s, i_r] = im_currents(x, p);
    CHECK(i_r.mag() < 1e-14);
    const ImOutput o = im_residual(x, {1.0, 0.0}, p, {}, PerUnitBase{});
    CHECK(std::abs(o.tau_e) < 1e-14);
}

TEST_CASE("IM: initialized equilibrium") {
    const ImParams p;
    const PerUnitBase b;
    for (double P : {0.05, 0.5, 1.2}) {
        const Phasor v = Phasor::polar(0.97, -0.15);
        const auto in = im_initialize(v, P, p, P / 0.8);
        REQUIRE(in);
        const ImOutput o = im_residual(in->x, v, p, in->sp, b);
        CHECK(im_derivative_norm(o.dx) < 1e-8);
        CHECK(power(v, o.i_s).real() == Approx(P).epsilon(1e-9));
        CHECK(in->slip > 0.0);
    }
    // below no-load losses there is no motoring equilibrium
    CHECK_FALSE(im_initialize({1.0, 0.0}, 1e-6, p, 1.0));
    CHECK_FALSE(im_initialize({1.0, 0.0}, 10.0, p, 1.0));
}

// ---------------------------------------------------------------------------
// active load
// ---------------------------------------------------------------------------

TEST_CASE("active load equilibrium") {
    const ActiveLoadParams p;
    const PerUnitBase b;
    const Phasor v = Phasor::polar(0.98, -0.2);
    for (double P : {0.1, 0.5, 0.9}) {
        const auto in = active_load_initialize(v, P, p);
        REQUIRE(in);
        const ActiveLoadOutput o = active_load_residual(in->x, v, p, in->sp, b);
        std::array<double, active_load_state_count> d{};
        pack(o.dx, d.data());
        for (double e : d) CHECK(std::abs(e) < 1e-8);
        CHECK(o.p_dc == Approx(in->sp.g_l * in->x.v_dc * in->x.v_dc).epsilon(1e-8));
        CHECK(o.p_dc == Approx(P).epsilon(1e-8));
        CHECK(std::abs(in->s_in.imag()) < 1e-6);
    }
}

TEST_CASE("active load: doubling r_L halves the power") {
    const ActiveLoadParams p;
    const Phasor v{1.0, 0.0};
    const auto a = active_load_initialize(v, 0.6, p);
    const auto c = active_load_initialize(v, 0.3, p);
    REQUIRE(a);
    REQUIRE(c);
    CHECK(1.0 / c->sp.g_l == Approx(2.0 / a->sp.g_l).epsilon(1e-9));
    CHECK(a->x.v_dc == c->x.v_dc);
}

TEST_CASE("active load rejects collapsed DC link") {
    const ActiveLoadParams p;
    ActiveLoadState x;
    x.v_dc = 0.0;
    CHECK_THROWS_AS(active_load_residual(x, {1.0, 0.0}, p, {}, PerUnitBase{}), ModelInvalid);
}
