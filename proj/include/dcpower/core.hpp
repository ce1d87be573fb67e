#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>

namespace dcpower {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using Complex = std::complex<double>;

// Planar per-unit vector. The frame (dq, ri, uv) is implied by the variable
// that holds it; rotate() is the only way to move between frames.
using Vec2 = Eigen::Vector2d;

struct FrameAngle {
    double theta = 0.0;  // rad, stored unwrapped
};

struct PerUnitBase {
    double omega_b = 2.0 * std::numbers::pi * 60.0;  // rad/s
    double omega_s = 1.0;                            // p.u.
    double s_base = 1.0;                             // data-center / network base ratio
};

/// R(theta) = [[cos, sin], [-sin, cos]]; maps ri quantities into a frame at angle theta.
inline Eigen::Matrix2d rotation(FrameAngle a) {
    const double c = std::cos(a.theta);
    const double s = std::sin(a.theta);
    Eigen::Matrix2d r;
    r << c, s, -s, c;
    return r;
}

inline Vec2 rotate(FrameAngle a, const Vec2& v) {
    const double c = std::cos(a.theta);
    const double s = std::sin(a.theta);
    return {c * v.x() + s * v.y(), -s * v.x() + c * v.y()};
}

/// R(theta)^T v, the inverse rotation.
inline Vec2 unrotate(FrameAngle a, const Vec2& v) { return rotate(FrameAngle{-a.theta}, v); }

/// J v with J = [[0, -1], [1, 0]] (multiplication by j).
inline Vec2 jmul(const Vec2& v) { return {-v.y(), v.x()}; }

inline Complex to_complex(const Vec2& v) { return {v.x(), v.y()}; }
inline Vec2 to_vec2(Complex z) { return {z.real(), z.imag()}; }

/// Wraps an angle to (-pi, pi]; reporting only, states stay unwrapped.
inline double wrap_angle(double theta) {
    double w = std::remainder(theta, 2.0 * std::numbers::pi);
    if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
    return w;
}

inline bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }

}  // namespace dcpower
