#pragma once

#include "dcpower/assembly.hpp"
#include "dcpower/differentiation.hpp"
#include "dcpower/errors.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <string>

namespace dcpower {

struct OperatingPoint {
    Vector x0;
    Vector y0;
    double w0 = 0.0;
    double f_norm = 0.0;  // inf-norm of f at (x0, y0, w0)
    double g_norm = 0.0;
    double tol = 0.0;
    int iterations = 0;
    std::vector<double> history;  // residual inf-norm per iterate
};

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
    double min_damping = 1.0 / 1024.0;
};

namespace detail {

inline Vector solve_linear(const Matrix& j, const Vector& rhs, const SystemModel& model, std::optional<Eigen::Index> pinned) {
    const auto n = j.cols();
    if (!pinned) {
        Eigen::FullPivLU<Matrix> lu(j);
        lu.setThreshold(1e-13);
        if (!lu.isInvertible()) {
            Eigen::JacobiSVD<Matrix> svd(j, Eigen::ComputeFullV);
            Eigen::Index k;
            svd.matrixV().col(n - 1).cwiseAbs().maxCoeff(&k);
            const auto nx = static_cast<Eigen::Index>(model.n_x());
            const std::string name = k < nx ? model.index().state_names()[static_cast<std::size_t>(k)]
                                            : model.index().algebraic_names()[static_cast<std::size_t>(k - nx)];
            throw SolverError("solve_equilibrium", "singular Jacobian; null-space direction dominated by '" + name + "'");
        }
        return lu.solve(rhs);
    }
    // Drop the pinned column and solve the consistent overdetermined system in the least-squares sense.
    Matrix reduced(j.rows(), n - 1);
    const Eigen::Index p = *pinned;
    reduced.leftCols(p) = j.leftCols(p);
    reduced.rightCols(n - 1 - p) = j.rightCols(n - 1 - p);
    Eigen::ColPivHouseholderQR<Matrix> qr(reduced);
    const Vector s = qr.solve(rhs);
    Vector full(n);
    full.head(p) = s.head(p);
    full(p) = 0.0;
    full.tail(n - 1 - p) = s.tail(n - 1 - p);
    return full;
}

}  // namespace detail

/// Newton on the algebraic variables only, x and w held fixed.
inline Vector solve_algebraics(const SystemModel& model, const Vector& x, const Vector& y_guess, double w,
                               double tol = 1e-12, int max_iter = 30) {
    const auto nx = static_cast<Eigen::Index>(model.n_x());
    const auto ny = static_cast<Eigen::Index>(model.n_y());
    Vector y = y_guess;
    Vector f(nx), g(ny);
    for (int it = 0; it < max_iter; ++it) {
        model.eval(x, y, w, f, g);
        if (g.lpNorm<Eigen::Infinity>() <= tol) return y;
        Matrix gy(ny, ny);
        Vector yp = y;
        Vector fp(nx), gp(ny), gm(ny);
        for (Eigen::Index i = 0; i < ny; ++i) {
            const double h = fd_step(y(i));
            yp(i) = y(i) + h;
            model.eval(x, yp, w, fp, gp);
            yp(i) = y(i) - h;
            model.eval(x, yp, w, fp, gm);
            yp(i) = y(i);
            gy.col(i) = (gp - gm) / (2.0 * h);
        }
        y -= gy.partialPivLu().solve(g);
    }
    model.eval(x, y, w, f, g);
    if (g.lpNorm<Eigen::Infinity>() > 1e3 * tol)
        throw SolverError("solve_algebraics", "algebraic constraints did not converge (|g| = " +
                                                  std::to_string(g.lpNorm<Eigen::Infinity>()) + ")");
    return y;
}

/// Damped Newton on the stacked equilibrium equations f = 0, g = 0 over (x, y).
inline OperatingPoint solve_equilibrium(const SystemModel& model, double w0, const Vector& x_guess, const Vector& y_guess,
                                        const NewtonOptions& opt = {}) {
    const auto nx = static_cast<Eigen::Index>(model.n_x());
    const auto ny = static_cast<Eigen::Index>(model.n_y());
    Vector z(nx + ny);
    z << x_guess, y_guess;
    std::optional<Eigen::Index> pinned;
    if (model.angle_reference()) pinned = static_cast<Eigen::Index>(*model.angle_reference());

    OperatingPoint op;
    op.w0 = w0;
    op.tol = opt.tol;
    Vector r = stacked_residual(model, z, w0);
    if (!r.allFinite()) throw SolverError("solve_equilibrium", "residual not finite at the initial guess");
    double norm = r.lpNorm<Eigen::Infinity>();
    op.history.push_back(norm);
    int it = 0;
    while (norm > opt.tol) {
        if (it >= opt.max_iter) {
            std::ostringstream msg;
            msg << "no convergence after " << opt.max_iter << " iterations: |f| = " << r.head(nx).lpNorm<Eigen::Infinity>()
                << ", |g| = " << r.tail(ny).lpNorm<Eigen::Infinity>();
            throw SolverError("solve_equilibrium", msg.str());
        }
        ++it;
        const auto jac = stacked_jacobian(model, z, w0);
        const Vector step = detail::solve_linear(jac.j, r, model, pinned);
        double lambda = 1.0;
        bool accepted = false;
        while (lambda >= opt.min_damping) {
            Vector trial = z - lambda * step;
            Vector rt;
            bool ok = true;
            try {
                rt = stacked_residual(model, trial, w0);
                ok = rt.allFinite();
            } catch (const DomainError&) {
                ok = false;
            }
            // Armijo-style sufficient decrease on the residual inf-norm
            if (ok && rt.lpNorm<Eigen::Infinity>() <= (1.0 - 1e-4 * lambda) * norm) {
                z = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            // Accept the full step once when already near roundoff; otherwise fail.
            Vector trial = z - step;
            Vector rt = stacked_residual(model, trial, w0);
            if (rt.allFinite() && rt.lpNorm<Eigen::Infinity>() < 1e3 * opt.tol) {
                z = trial;
                r = rt;
            } else {
                throw SolverError("solve_equilibrium", "line search failed at iteration " + std::to_string(it) +
                                                           " with |F| = " + std::to_string(norm));
            }
        }
        norm = r.lpNorm<Eigen::Infinity>();
        op.history.push_back(norm);
    }
    op.x0 = z.head(nx);
    op.y0 = z.tail(ny);
    op.f_norm = r.head(nx).lpNorm<Eigen::Infinity>();
    op.g_norm = r.tail(ny).lpNorm<Eigen::Infinity>();
    op.iterations = it;
    return op;
}

/// Closed-form (or power-flow seeded) starting point supplied by the topology builder.
inline std::pair<Vector, Vector> initial_guess(const SystemModel& model, double w0) { return model.initial_guess(w0); }

inline OperatingPoint solve_equilibrium(const SystemModel& model, double w0, const NewtonOptions& opt = {}) {
    auto [x, y] = model.initial_guess(w0);
    return solve_equilibrium(model, w0, x, y, opt);
}

}  // namespace dcpower
