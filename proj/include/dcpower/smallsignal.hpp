#pragma once

// Linearization about an operating point, Kron reduction of the algebraic
// variables, eigen-analysis and the power-oscillation amplification curve.

#include "dcpower/assembly.hpp"
#include "dcpower/differentiation.hpp"
#include "dcpower/equilibrium.hpp"
#include "dcpower/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace dcpower {

struct Jacobians {
    Matrix f_x, f_y, g_x, g_y;
    Vector f_w, g_w;
    Matrix h_x, h_y;  // one row per output channel
    Vector h_w;
};

/// Central differences with step max(rel, rel |v|) around (x0, y0, w0).
inline Jacobians jacobians(const SystemModel& model, const OperatingPoint& op, double rel = 1e-6) {
    const auto nx = static_cast<Eigen::Index>(model.n_x());
    const auto ny = static_cast<Eigen::Index>(model.n_y());
    const auto m = static_cast<Eigen::Index>(model.outputs().size());
    Vector z(nx + ny);
    z << op.x0, op.y0;
    const auto sj = stacked_jacobian(model, z, op.w0, rel);
    Jacobians j;
    j.f_x = sj.j.topLeftCorner(nx, nx);
    j.f_y = sj.j.topRightCorner(nx, ny);
    j.g_x = sj.j.bottomLeftCorner(ny, nx);
    j.g_y = sj.j.bottomRightCorner(ny, ny);
    j.f_w = sj.jw.head(nx);
    j.g_w = sj.jw.tail(ny);

    j.h_x = Matrix::Zero(m, nx);
    j.h_y = Matrix::Zero(m, ny);
    j.h_w = Vector::Zero(m);
    for (Eigen::Index c = 0; c < m; ++c) {
        const auto ch = static_cast<std::size_t>(c);
        auto h = [&](const Vector& zz) { return model.output(ch, zz.head(nx), zz.tail(ny), op.w0); };
        const Vector grad = fd_gradient(h, z, rel);
        j.h_x.row(c) = grad.head(nx).transpose();
        j.h_y.row(c) = grad.tail(ny).transpose();
        const double hw = fd_step(op.w0, rel);
        j.h_w(c) = (model.output(ch, op.x0, op.y0, op.w0 + hw) - model.output(ch, op.x0, op.y0, op.w0 - hw)) / (2.0 * hw);
    }
    return j;
}

struct LinearModel {
    Matrix a;
    Vector b;
    Matrix c;  // channels x n_x
    Vector d;  // per channel
    std::vector<std::string> state_names;
    std::vector<std::string> channel_names;
    double w0 = 0.0;
};

inline constexpr double kMaxAlgebraicCondition = 1e12;

inline LinearModel reduce(const Jacobians& j, std::vector<std::string> state_names = {},
                          std::vector<std::string> channel_names = {}) {
    LinearModel lin;
    const auto nx = j.f_x.rows();
    if (j.g_y.size() == 0) {
        lin.a = j.f_x;
        lin.b = j.f_w;
        lin.c = j.h_x;
        lin.d = j.h_w;
    } else {
        Eigen::JacobiSVD<Matrix> svd(j.g_y);
        const auto& s = svd.singularValues();
        const double cond = s(s.size() - 1) > 0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
        if (!(cond < kMaxAlgebraicCondition))
            throw SolverError("reduce", "algebraic Jacobian is singular (condition " + std::to_string(cond) + ")");
        Eigen::PartialPivLU<Matrix> lu(j.g_y);
        const Matrix gx = lu.solve(j.g_x);
        const Vector gw = lu.solve(j.g_w);
        lin.a = j.f_x - j.f_y * gx;
        lin.b = j.f_w - j.f_y * gw;
        lin.c = j.h_x - j.h_y * gx;
        lin.d = j.h_w - j.h_y * gw;
    }
    if (!lin.a.allFinite() || !lin.d.allFinite()) throw SolverError("reduce", "non-finite state matrix");
    lin.state_names = state_names.empty() ? std::vector<std::string>(static_cast<std::size_t>(nx)) : std::move(state_names);
    lin.channel_names = std::move(channel_names);
    return lin;
}

inline LinearModel linearize(const SystemModel& model, const OperatingPoint& op) {
    std::vector<std::string> channels;
    for (const auto& o : model.outputs()) channels.push_back(o.name);
    auto lin = reduce(jacobians(model, op), model.index().state_names(), channels);
    lin.w0 = op.w0;
    return lin;
}

struct Participant {
    std::size_t state = 0;
    double factor = 0.0;  // Re{l_ki r_ik}
    double share = 0.0;   // |l_ki r_ik| / sum_i |l_ki r_ik|, the form used for ranking
};

struct Mode {
    Complex lambda;
    double frequency_hz = 0.0;
    double damping_ratio = 0.0;
    std::vector<Participant> ranked;  // by share descending
};

struct ModalReport {
    CVector eigenvalues;
    CMatrix right;  // columns r_k, unit 2-norm
    CMatrix left;   // rows l_k^T with l_k^T r_k = 1
    Matrix participation;  // (state i, mode k)
    CMatrix residues;      // (channel, mode k)
    std::vector<Mode> modes;
    std::vector<std::string> state_names;
    double eigenvector_condition = 0.0;
    std::vector<std::string> warnings;
};

inline constexpr double kNearDefectiveCondition = 1e8;

inline double damping_ratio(Complex l) {
    const double mag = std::abs(l);
    return mag > 0 ? -l.real() / mag : 1.0;
}

/// Eigen-decomposition with biorthonormal left vectors, participation and
/// residues. Modes are ordered slowest decay first, positive frequency first within a pair.
inline ModalReport modal_analysis(const LinearModel& lin) {
    const auto n = lin.a.rows();
    Eigen::EigenSolver<Matrix> es(lin.a, true);
    if (es.info() != Eigen::Success) throw SolverError("modal_analysis", "eigen-solver failed");
    CVector lam = es.eigenvalues();
    CMatrix v = es.eigenvectors();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        const Complex la = lam(a), lb = lam(b);
        const double tol = 1e-9 * std::max({1.0, std::abs(la), std::abs(lb)});
        if (std::abs(la.real() - lb.real()) > tol) return la.real() > lb.real();
        if (std::abs(std::abs(la.imag()) - std::abs(lb.imag())) > tol) return std::abs(la.imag()) < std::abs(lb.imag());
        return la.imag() > lb.imag();
    });

    ModalReport rep;
    rep.eigenvalues.resize(n);
    rep.right.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        rep.eigenvalues(k) = lam(order[static_cast<std::size_t>(k)]);
        rep.right.col(k) = v.col(order[static_cast<std::size_t>(k)]).normalized();
    }
    Eigen::PartialPivLU<CMatrix> lu(rep.right);
    rep.left = lu.inverse();
    Eigen::JacobiSVD<CMatrix> svd(rep.right);
    const auto& sv = svd.singularValues();
    rep.eigenvector_condition = sv(n - 1) > 0 ? sv(0) / sv(n - 1) : std::numeric_limits<double>::infinity();
    if (!std::isfinite(rep.eigenvector_condition)) throw SolverError("modal_analysis", "state matrix is defective");
    if (rep.eigenvector_condition > kNearDefectiveCondition)
        rep.warnings.push_back("near-defective eigenvector basis (condition " + std::to_string(rep.eigenvector_condition) + ")");

    rep.participation.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index i = 0; i < n; ++i) rep.participation(i, k) = (rep.left(k, i) * rep.right(i, k)).real();

    const Eigen::Index m = lin.c.rows();
    rep.residues.resize(m, n);
    const CVector lb = rep.left * lin.b.cast<Complex>();
    const CMatrix cr = lin.c.cast<Complex>() * rep.right;
    for (Eigen::Index ch = 0; ch < m; ++ch)
        for (Eigen::Index k = 0; k < n; ++k) rep.residues(ch, k) = cr(ch, k) * lb(k);

    rep.state_names = lin.state_names;
    rep.modes.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
        auto& md = rep.modes[static_cast<std::size_t>(k)];
        md.lambda = rep.eigenvalues(k);
        md.frequency_hz = md.lambda.imag() / (2.0 * std::numbers::pi);
        md.damping_ratio = damping_ratio(md.lambda);
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) total += std::abs(rep.left(k, i) * rep.right(i, k));
        for (Eigen::Index i = 0; i < n; ++i)
            md.ranked.push_back({static_cast<std::size_t>(i), rep.participation(i, k),
                                 std::abs(rep.left(k, i) * rep.right(i, k)) / total});
        std::stable_sort(md.ranked.begin(), md.ranked.end(),
                         [](const Participant& a, const Participant& b) { return a.share > b.share; });
    }
    return rep;
}

/// Max over modes of ||A r_k - lambda_k r_k|| / ||A||.
inline double eigen_residual(const LinearModel& lin, const ModalReport& rep) {
    const CMatrix a = lin.a.cast<Complex>();
    const double na = std::max(lin.a.norm(), std::numeric_limits<double>::min());
    double worst = 0.0;
    for (Eigen::Index k = 0; k < rep.right.cols(); ++k)
        worst = std::max(worst, (a * rep.right.col(k) - rep.eigenvalues(k) * rep.right.col(k)).norm() / na);
    return worst;
}

// ---- frequency response ----------------------------------------------------

/// Logarithmic grid of n points between f_min and f_max (Hz).
inline std::vector<double> log_grid(double f_min = 0.01, double f_max = 1000.0, std::size_t n = 400) {
    if (!(f_min > 0.0) || !(f_max > f_min) || n < 2) throw ParameterError("frequency grid", "need 0 < f_min < f_max and n >= 2");
    std::vector<double> f(n);
    const double a = std::log10(f_min), b = std::log10(f_max);
    for (std::size_t i = 0; i < n; ++i) f[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    return f;
}

/// Complex transfer c (jw I - A)^{-1} b + d for every channel at f_hz.
inline CVector transfer(const LinearModel& lin, double f_hz) {
    const auto n = lin.a.rows();
    const Complex s{0.0, 2.0 * std::numbers::pi * f_hz};
    CMatrix m = -lin.a.cast<Complex>();
    m.diagonal().array() += s;
    Eigen::PartialPivLU<CMatrix> lu(m);
    const CVector x = lu.solve(lin.b.cast<Complex>());
    CVector out = lin.c.cast<Complex>() * x + lin.d.cast<Complex>();
    // undamped resonance exactly on the axis
    const double rcond = lu.rcond();
    if (!(rcond > 1e3 * std::numeric_limits<double>::epsilon()) && n > 0)
        out.setConstant(Complex{std::numeric_limits<double>::infinity(), 0.0});
    return out;
}

struct PoaCurve {
    std::vector<double> f_hz;
    Matrix magnitude;  // (grid point, channel)
    std::vector<std::string> channel_names;
    std::vector<double> peak_hz;  // per channel, refined
    std::vector<double> peak_magnitude;
    bool resonance_flag = false;
};

/// Golden-section search for the maximum of fn on [a, b].
template <class F>
double golden_max(F&& fn, double a, double b, double tol = 1e-9) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = fn(c), fd = fn(d);
    while (std::abs(b - a) > tol * std::max(1.0, std::abs(c) + std::abs(d))) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = fn(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = fn(d);
        }
    }
    return 0.5 * (a + b);
}

inline PoaCurve poa(const LinearModel& lin, const std::vector<double>& grid) {
    if (grid.empty()) throw ParameterError("frequency grid", "empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw ParameterError("frequency grid", "frequencies must be positive");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw ParameterError("frequency grid", "must be strictly increasing");
    }
    const auto m = lin.c.rows();
    PoaCurve pc;
    pc.f_hz = grid;
    pc.channel_names = lin.channel_names;
    pc.magnitude.resize(static_cast<Eigen::Index>(grid.size()), m);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const CVector t = transfer(lin, grid[i]);
        for (Eigen::Index c = 0; c < m; ++c) {
            pc.magnitude(static_cast<Eigen::Index>(i), c) = std::abs(t(c));
            if (std::isinf(std::abs(t(c)))) pc.resonance_flag = true;
        }
    }
    for (Eigen::Index c = 0; c < m; ++c) {
        Eigen::Index k;
        pc.magnitude.col(c).maxCoeff(&k);
        double fpk = grid[static_cast<std::size_t>(k)];
        double mag = pc.magnitude(k, c);
        if (grid.size() > 2 && std::isfinite(mag)) {
            // refine in log-frequency between the neighbours of the grid maximum
            const auto lo = static_cast<std::size_t>(std::max<Eigen::Index>(k - 1, 0));
            const auto hi = static_cast<std::size_t>(std::min<Eigen::Index>(k + 1, static_cast<Eigen::Index>(grid.size()) - 1));
            auto fn = [&](double lf) { return std::abs(transfer(lin, std::pow(10.0, lf))(c)); };
            const double lf = golden_max(fn, std::log10(grid[lo]), std::log10(grid[hi]));
            if (fn(lf) >= mag) {
                fpk = std::pow(10.0, lf);
                mag = fn(lf);
            }
        }
        pc.peak_hz.push_back(fpk);
        pc.peak_magnitude.push_back(mag);
    }
    return pc;
}

inline PoaCurve poa(const LinearModel& lin) { return poa(lin, log_grid()); }

/// Per-mode terms R_k / (jw - lambda_k) for one channel, (grid point, mode), plus their sum with d.
struct ModalDecomposition {
    std::vector<double> f_hz;
    CMatrix terms;
    Vector total_magnitude;
};

inline ModalDecomposition modal_poa_decomposition(const ModalReport& rep, const LinearModel& lin, const std::vector<double>& grid,
                                                  Eigen::Index channel = 0) {
    ModalDecomposition md;
    md.f_hz = grid;
    const auto n = rep.eigenvalues.size();
    md.terms.resize(static_cast<Eigen::Index>(grid.size()), n);
    md.total_magnitude.resize(static_cast<Eigen::Index>(grid.size()));
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Complex s{0.0, 2.0 * std::numbers::pi * grid[i]};
        Complex sum = lin.d(channel);
        for (Eigen::Index k = 0; k < n; ++k) {
            const Complex t = rep.residues(channel, k) / (s - rep.eigenvalues(k));
            md.terms(static_cast<Eigen::Index>(i), k) = t;
            sum += t;
        }
        md.total_magnitude(static_cast<Eigen::Index>(i)) = std::abs(sum);
    }
    return md;
}

// ---- sweeps -----------------------------------------------------------------

struct SweepPoint {
    double value = 0.0;
    OperatingPoint op;
    LinearModel lin;
    ModalReport modes;
    PoaCurve curve;
    std::vector<Eigen::Index> tracked;  // tracked[id] = mode index at this value
};

struct SweepResult {
    std::vector<SweepPoint> points;
    std::vector<Eigen::Index> top;  // mode ids selected at the first value
    std::vector<std::string> warnings;
};

/// Unit-normalized alignment |r_a^H r_b|.
inline double alignment(const CVector& a, const CVector& b) {
    const double na = a.norm(), nb = b.norm();
    return (na > 0 && nb > 0) ? std::abs(a.dot(b)) / (na * nb) : 0.0;
}

using ModelFamily = std::function<SystemModel(double)>;

/// Solves, linearizes and analyses the model at each parameter value and tracks
/// every mode by maximal right-eigenvector alignment with the previous value.
/// `w0` is the load level; `w0_of` may override it per value (load sweeps).
inline SweepResult sweep(const ModelFamily& family, const std::vector<double>& values, std::size_t top_k,
                         const std::function<double(double)>& w0_of, const std::vector<double>& grid = log_grid()) {
    if (values.empty()) throw ParameterError("sweep", "no values");
    SweepResult res;
    for (std::size_t v = 0; v < values.size(); ++v) {
        SweepPoint pt;
        pt.value = values[v];
        const SystemModel model = family(values[v]);
        pt.op = solve_equilibrium(model, w0_of(values[v]));
        pt.lin = linearize(model, pt.op);
        pt.modes = modal_analysis(pt.lin);
        pt.curve = poa(pt.lin, grid);
        const auto n = pt.modes.eigenvalues.size();
        pt.tracked.resize(static_cast<std::size_t>(n));
        if (v == 0) {
            std::iota(pt.tracked.begin(), pt.tracked.end(), 0);
        } else {
            const auto& prev = res.points.back();
            // Greedy assignment: best overall pair first, conjugate pairs disambiguated by sign of Im.
            std::vector<bool> used(static_cast<std::size_t>(n), false);
            Matrix score(n, n);
            for (Eigen::Index a = 0; a < n; ++a) {
                const Eigen::Index pk = prev.tracked[static_cast<std::size_t>(a)];
                for (Eigen::Index b = 0; b < n; ++b) {
                    double s = alignment(prev.modes.right.col(pk), pt.modes.right.col(b));
                    const double ip = prev.modes.eigenvalues(pk).imag(), ib = pt.modes.eigenvalues(b).imag();
                    if (ip * ib < 0) s *= 0.5;  // prefer the same half-plane member of a conjugate pair
                    score(a, b) = s;
                }
            }
            std::vector<bool> done(static_cast<std::size_t>(n), false);
            for (Eigen::Index round = 0; round < n; ++round) {
                double best = -1;
                Eigen::Index ba = 0, bb = 0;
                for (Eigen::Index a = 0; a < n; ++a) {
                    if (done[static_cast<std::size_t>(a)]) continue;
                    for (Eigen::Index b = 0; b < n; ++b) {
                        if (used[static_cast<std::size_t>(b)]) continue;
                        if (score(a, b) > best) {
                            best = score(a, b);
                            ba = a;
                            bb = b;
                        }
                    }
                }
                for (Eigen::Index b = 0; b < n; ++b) {
                    if (b == bb || used[static_cast<std::size_t>(b)]) continue;
                    if (score(ba, b) > 0.98 * best && pt.modes.eigenvalues(b) != std::conj(pt.modes.eigenvalues(bb)))
                        res.warnings.push_back("ambiguous tracking at value " + std::to_string(values[v]) + ": modes " +
                                               std::to_string(bb) + " and " + std::to_string(b));
                }
                done[static_cast<std::size_t>(ba)] = true;
                used[static_cast<std::size_t>(bb)] = true;
                pt.tracked[static_cast<std::size_t>(ba)] = bb;
            }
        }
        res.points.push_back(std::move(pt));
    }
    const auto& first = res.points.front().modes;
    std::vector<Eigen::Index> ids(static_cast<std::size_t>(first.eigenvalues.size()));
    std::iota(ids.begin(), ids.end(), 0);
    std::stable_sort(ids.begin(), ids.end(), [&](Eigen::Index a, Eigen::Index b) {
        return std::abs(first.residues(0, a)) > std::abs(first.residues(0, b));
    });
    ids.resize(std::min(top_k, ids.size()));
    res.top = ids;
    return res;
}

inline SweepResult sweep(const ModelFamily& family, const std::vector<double>& values, std::size_t top_k, double w0,
                         const std::vector<double>& grid = log_grid()) {
    return sweep(family, values, top_k, [w0](double) { return w0; }, grid);
}

/// Multi-port amplification: identical to poa() over all output channels of a multi-output model.
inline PoaCurve multiport_poa(const LinearModel& lin, const std::vector<double>& grid = log_grid()) { return poa(lin, grid); }

}  // namespace dcpower
