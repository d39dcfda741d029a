#pragma once

// Per-unit bases and dq/DQ phasor arithmetic shared by every model.
//
// Complex quantities are carried as explicit (d, q) real pairs tagged with the
// frame they live in. The network frame DQ rotates at the fixed synchronous
// speed; device frames dq are offset from it by a device angle. Arithmetic
// never changes the tag, only rotate_frame() does.

#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include "gfmstab/error.hpp"

namespace gfmstab {

using Complex = std::complex<double>;

enum class Frame { network, device };

inline const char* to_string(Frame f) {
    return f == Frame::network ? "network-DQ" : "device-dq";
}

inline Frame flipped(Frame f) {
    return f == Frame::network ? Frame::device : Frame::network;
}

struct PerUnitBase {
    double omega_b = 2.0 * std::numbers::pi * 60.0;  // rad/s
    static constexpr double omega_s = 1.0;            // p.u.
    double s_base = 100e6;                            // VA, informational

    void validate() const {
        if (!(omega_b > 0.0) || !std::isfinite(omega_b))
            throw InvalidParameter("base angular frequency must be positive and finite");
    }
};

class Phasor {
public:
    double d = 0.0;
    double q = 0.0;
    Frame frame = Frame::network;

    constexpr Phasor() = default;
    constexpr Phasor(double d_, double q_, Frame f = Frame::network) : d(d_), q(q_), frame(f) {}
    static Phasor polar(double mag, double angle, Frame f = Frame::network) {
        return {mag * std::cos(angle), mag * std::sin(angle), f};
    }
    static Phasor from(Complex c, Frame f = Frame::network) { return {c.real(), c.imag(), f}; }

    Complex complex() const { return {d, q}; }
    double mag2() const { return d * d + q * q; }
    double mag() const { return std::hypot(d, q); }
    double angle() const { return std::atan2(q, d); }
    Phasor conj() const { return {d, -q, frame}; }

    Phasor& operator+=(const Phasor& o) {
        same_frame(o);
        d += o.d;
        q += o.q;
        return *this;
    }
    Phasor& operator-=(const Phasor& o) {
        same_frame(o);
        d -= o.d;
        q -= o.q;
        return *this;
    }
    Phasor& operator*=(double s) {
        d *= s;
        q *= s;
        return *this;
    }
    Phasor& operator*=(Complex c) {
        const double nd = d * c.real() - q * c.imag();
        q = d * c.imag() + q * c.real();
        d = nd;
        return *this;
    }

    void same_frame(const Phasor& o) const {
        if (frame != o.frame)
            throw ContractViolation(std::string("phasor frame mismatch: ") + to_string(frame) +
                                    " vs " + to_string(o.frame));
    }

    friend Phasor operator+(Phasor a, const Phasor& b) { return a += b; }
    friend Phasor operator-(Phasor a, const Phasor& b) { return a -= b; }
    friend Phasor operator-(Phasor a) { return {-a.d, -a.q, a.frame}; }
    friend Phasor operator*(Phasor a, double s) { return a *= s; }
    friend Phasor operator*(double s, Phasor a) { return a *= s; }
    friend Phasor operator*(Phasor a, Complex c) { return a *= c; }
    friend Phasor operator*(Complex c, Phasor a) { return a *= c; }
    friend Phasor operator/(Phasor a, double s) { return a *= 1.0 / s; }
    friend Phasor operator/(Phasor a, Complex c) { return a *= 1.0 / c; }
};

/// a * conj(b): complex power when a is a voltage and b a current.
inline Complex power(const Phasor& v, const Phasor& i) {
    v.same_frame(i);
    return {v.d * i.d + v.q * i.q, v.q * i.d - v.d * i.q};
}

/// Multiplication by j (quarter-turn), used for reactance terms.
inline Phasor jmul(const Phasor& p) { return {-p.q, p.d, p.frame}; }

/// Returns p * e^{j angle} with the frame tag flipped.
///
/// Convention: device = rotate_frame(network, -delta), network = rotate_frame(device, delta).
inline Phasor rotate_frame(const Phasor& p, double angle) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {p.d * c - p.q * s, p.d * s + p.q * c, flipped(p.frame)};
}

inline Phasor to_device(const Phasor& network, double delta) {
    if (network.frame != Frame::network) throw ContractViolation("to_device expects a network-frame phasor");
    return rotate_frame(network, -delta);
}

inline Phasor to_network(const Phasor& device, double delta) {
    if (device.frame != Frame::device) throw ContractViolation("to_network expects a device-frame phasor");
    return rotate_frame(device, delta);
}

}  // namespace gfmstab
