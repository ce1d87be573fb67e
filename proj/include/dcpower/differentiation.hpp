#pragma once

#include "dcpower/assembly.hpp"
#include "dcpower/core.hpp"

#include <algorithm>
#include <cmath>

namespace dcpower {

/// Central-difference step for a variable of magnitude |v|.
inline double fd_step(double v, double rel = 1e-6) { return std::max(rel, rel * std::abs(v)); }

/// Jacobian of the stacked residual [f; g] with respect to the stacked
/// unknowns [x; y] (and the column for w, returned separately).
struct StackedJacobian {
    Matrix j;   // (n_x + n_y) x (n_x + n_y)
    Vector jw;  // (n_x + n_y)
};

inline Vector stacked_residual(const SystemModel& model, const Vector& z, double w) {
    const auto nx = static_cast<Eigen::Index>(model.n_x());
    const auto ny = static_cast<Eigen::Index>(model.n_y());
    Vector r(nx + ny);
    model.eval(z.head(nx), z.tail(ny), w, r.head(nx), r.tail(ny));
    return r;
}

inline StackedJacobian stacked_jacobian(const SystemModel& model, const Vector& z, double w, double rel = 1e-6) {
    const auto n = z.size();
    StackedJacobian out{Matrix(n, n), Vector(n)};
    Vector zp = z;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = fd_step(z(i), rel);
        zp(i) = z(i) + h;
        const Vector rp = stacked_residual(model, zp, w);
        zp(i) = z(i) - h;
        const Vector rm = stacked_residual(model, zp, w);
        zp(i) = z(i);
        out.j.col(i) = (rp - rm) / (2.0 * h);
    }
    const double hw = fd_step(w, rel);
    out.jw = (stacked_residual(model, z, w + hw) - stacked_residual(model, z, w - hw)) / (2.0 * hw);
    return out;
}

/// Central-difference gradient of a scalar function of the stacked (x, y, w).
template <class F>
Vector fd_gradient(F&& fn, const Vector& z, double rel = 1e-6) {
    Vector g(z.size());
    Vector zp = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const double h = fd_step(z(i), rel);
        zp(i) = z(i) + h;
        const double fp = fn(zp);
        zp(i) = z(i) - h;
        const double fm = fn(zp);
        zp(i) = z(i);
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace dcpower
