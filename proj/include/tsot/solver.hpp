#pragma once

// Tsallis-regularized optimal transport
//
//   OT_{q,eps} = min_{pi in Pi(mu, nu)} <c, pi> + eps * D_q(pi, mu (x) nu)
//
// and its concave dual
//
//   sup_{h1, h2} <h1, mu> + <h2, nu> - eps * sum_ij mu_i nu_j f_q*((h1_i + h2_j - c_ij) / eps).
//
// Three solvers share one report type:
//   solve_dual    - exact blockwise maximization of the dual (h1, then h2),
//                   each coordinate a 1-D monotone root find;
//   solve_primal  - log-barrier Newton method on the primal over the
//                   transport polytope, independent of the dual iteration;
//   sinkhorn_kl   - classical log-domain Sinkhorn for q = 1.
// Each returns a coupling rounded into Pi(mu, nu), the potentials, both
// objective values and the duality gap that certifies them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "tsot/errors.hpp"
#include "tsot/measures.hpp"
#include "tsot/qcalc.hpp"

namespace tsot {

struct SolveConfig {
    double epsilon = 1.0;
    QParam q{2.0};
    int max_iter = 10000;
    double tol_gap = 1e-6;       // relative duality gap target
    double tol_marginal = 1e-9;  // allowed marginal defect of the returned coupling

    void check() const {
        if (!(epsilon > 0.0) || !std::isfinite(epsilon))
            throw UsageError("SolveConfig: epsilon must be positive");
        if (!(tol_gap > 0.0) || !(tol_marginal > 0.0))
            throw UsageError("SolveConfig: tolerances must be positive");
        if (max_iter < 1)
            throw UsageError("SolveConfig: max_iter must be >= 1");
    }
};

struct DualPotentials {
    Vector h1;
    Vector h2;
};

struct SolveReport {
    Coupling coupling;
    DualPotentials potentials;
    double primal_value = 0.0;
    double dual_value = 0.0;
    double gap = 0.0;           // primal_value - dual_value
    double relative_gap = 0.0;  // gap / max(|primal|, |dual|, 1e-3 eps)
    int iterations = 0;
    bool converged = false;
    double marginal_defect = 0.0;
    std::vector<double> dual_trace;  // dual value after every outer iteration
};

inline double relative_gap(double primal, double dual, double epsilon) {
    const double scale = std::max({std::abs(primal), std::abs(dual), 1e-3 * epsilon});
    return (primal - dual) / scale;
}

inline void check_shapes(const CostMatrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    if (c.rows() != mu.size() || c.cols() != nu.size())
        throw UsageError("cost matrix shape does not match the marginals");
}

inline double primal_objective(const Coupling& pi, const CostMatrix& c, const SolveConfig& cfg) {
    if (c.rows() != pi.rows() || c.cols() != pi.cols())
        throw UsageError("primal_objective: cost and coupling shapes differ");
    const double div = coupling_divergence(cfg.q, pi);
    if (std::isinf(div))
        return kInf;
    return transport_cost(pi, c) + cfg.epsilon * div;
}

inline double dual_objective(const DualPotentials& h, const CostMatrix& c, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, const SolveConfig& cfg) {
    check_shapes(c, mu, nu);
    if (h.h1.size() != mu.size() || h.h2.size() != nu.size())
        throw UsageError("dual_objective: potential sizes do not match the marginals");
    const auto& a = mu.weights();
    const auto& b = nu.weights();
    double penalty = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0)
            continue;
        double row = 0.0;
        for (Eigen::Index j = 0; j < b.size(); ++j) {
            if (b[j] == 0.0)
                continue;
            row += b[j] * f_q_star(cfg.q, (h.h1[i] + h.h2[j] - c(i, j)) / cfg.epsilon);
        }
        penalty += a[i] * row;
    }
    return a.dot(h.h1) + b.dot(h.h2) - cfg.epsilon * penalty;
}

// Rounds a nonnegative matrix into Pi(a, b): shrink overfull rows, then
// overfull columns, then spread the remaining deficit as a rank-one term.
inline Matrix round_to_polytope(Matrix p, const Vector& a, const Vector& b) {
    p = p.cwiseMax(0.0);
    const Vector r = p.rowwise().sum();
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        if (r[i] > a[i])
            p.row(i) *= a[i] / r[i];
    const Vector cs = p.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < p.cols(); ++j)
        if (cs[j] > b[j])
            p.col(j) *= b[j] / cs[j];
    const Vector er = (a - p.rowwise().sum()).cwiseMax(0.0);
    const Vector ec = (b - p.colwise().sum().transpose()).cwiseMax(0.0);
    const double s = er.sum();
    if (s > 0.0)
        p.noalias() += er * ec.transpose() / s;
    return p;
}

namespace detail {

// Coupling density pi_ij = mu_i nu_j (f_q*)'((h1_i + h2_j - c_ij) / eps).
inline Matrix recover_coupling(const DualPotentials& h, const CostMatrix& c, const DiscreteMeasure& mu,
                               const DiscreteMeasure& nu, const SolveConfig& cfg) {
    Matrix p(mu.size(), nu.size());
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < p.cols(); ++j)
            p(i, j) = mu.weight(i) * nu.weight(j) *
                      f_q_star_prime(cfg.q, (h.h1[i] + h.h2[j] - c(i, j)) / cfg.epsilon);
    return p;
}

// Fills the value fields of a report from potentials (and an optional
// ready-made coupling density), rounding the coupling into the polytope.
inline void finish_report(SolveReport& rep, const CostMatrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                          const SolveConfig& cfg, const Matrix& density) {
    Matrix rounded = round_to_polytope(density, mu.weights(), nu.weights());
    rep.coupling = Coupling(std::move(rounded), mu, nu);
    rep.primal_value = primal_objective(rep.coupling, c, cfg);
    rep.dual_value = dual_objective(rep.potentials, c, mu, nu, cfg);
    rep.gap = rep.primal_value - rep.dual_value;
    rep.relative_gap = relative_gap(rep.primal_value, rep.dual_value, cfg.epsilon);
    rep.marginal_defect = rep.coupling.marginal_defect();
}

// Solves sum_j w_j (f_q*)'((t + s_j) / eps) = 1 for t. The left side is
// nondecreasing in t and equals <= 1 at min_j (eps - s_j), >= 1 at
// max_j (eps - s_j), which gives the bracket. Newton steps are taken only
// when they stay inside the current bracket; otherwise bisect.
template <class ShiftFn>
double solve_block(Eigen::Index count, ShiftFn shift, const Vector& w, const SolveConfig& cfg, double start) {
    const double eps = cfg.epsilon;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < count; ++j) {
        if (w[j] == 0.0)
            continue;
        const double t = eps - shift(j);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    if (!std::isfinite(lo) || !std::isfinite(hi))
        throw NumericalError("dual block update: no finite bracket");
    if (lo == hi)
        return lo;

    double t = std::clamp(start, lo, hi);
    for (int it = 0; it < 200; ++it) {
        double g = 0.0, dg = 0.0;
        for (Eigen::Index j = 0; j < count; ++j) {
            if (w[j] == 0.0)
                continue;
            const double y = (t + shift(j)) / eps;
            g += w[j] * f_q_star_prime(cfg.q, y);
            dg += w[j] * f_q_star_second(cfg.q, y);
        }
        if (!std::isfinite(g))
            throw NumericalError("dual block update: non-finite first-order condition");
        const double r = g - 1.0;
        if (std::abs(r) <= 1e-15)
            return t;
        if (r > 0.0)
            hi = t;
        else
            lo = t;
        double next = dg > 0.0 ? t - r * eps / dg : 0.5 * (lo + hi);
        if (!(next > lo && next < hi))
            next = 0.5 * (lo + hi);
        if (std::abs(next - t) <= 1e-15 * std::max(1.0, std::abs(t)) || hi - lo <= 1e-15 * std::max(1.0, std::abs(t)))
            return next;
        t = next;
    }
    return t;
}

}  // namespace detail

// Alternating exact maximization over h1 and h2, starting from h = 0 unless
// an initial point is supplied. Stops on the relative duality gap.
inline SolveReport solve_dual(const CostMatrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                              const SolveConfig& cfg, std::optional<DualPotentials> init = std::nullopt) {
    cfg.check();
    check_shapes(c, mu, nu);
    const Eigen::Index m = mu.size(), n = nu.size();
    DualPotentials h{Vector::Zero(m), Vector::Zero(n)};
    if (init) {
        if (init->h1.size() != m || init->h2.size() != n)
            throw UsageError("solve_dual: initial potentials have the wrong size");
        h = std::move(*init);
    }
    const Vector& a = mu.weights();
    const Vector& b = nu.weights();

    SolveReport rep{Coupling::identity(DiscreteMeasure::from_weights(Vector::Ones(1))), {}, 0, 0, 0, 0, 0, false, 0, {}};
    for (int it = 1; it <= cfg.max_iter; ++it) {
        for (Eigen::Index i = 0; i < m; ++i)
            h.h1[i] = detail::solve_block(
                n, [&](Eigen::Index j) { return h.h2[j] - c(i, j); }, b, cfg, h.h1[i]);
        for (Eigen::Index j = 0; j < n; ++j)
            h.h2[j] = detail::solve_block(
                m, [&](Eigen::Index i) { return h.h1[i] - c(i, j); }, a, cfg, h.h2[j]);

        rep.potentials = h;
        detail::finish_report(rep, c, mu, nu, cfg, detail::recover_coupling(h, c, mu, nu, cfg));
        rep.iterations = it;
        rep.dual_trace.push_back(rep.dual_value);
        if (rep.relative_gap <= cfg.tol_gap && rep.marginal_defect <= cfg.tol_marginal) {
            rep.converged = true;
            break;
        }
    }
    return rep;
}

// Classical Sinkhorn in the log domain for the KL-regularized problem. The
// potentials follow the same convention as solve_dual, so
// dual_objective(report.potentials, ...) evaluates the KL dual.
inline SolveReport sinkhorn_kl(const CostMatrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                               const SolveConfig& cfg, std::optional<DualPotentials> init = std::nullopt,
                               int check_every = 10) {
    cfg.check();
    check_shapes(c, mu, nu);
    if (!cfg.q.is_kl())
        throw UsageError("sinkhorn_kl requires q = 1");
    const Eigen::Index m = mu.size(), n = nu.size();
    const double eps = cfg.epsilon;
    DualPotentials h{Vector::Zero(m), Vector::Zero(n)};
    if (init) {
        if (init->h1.size() != m || init->h2.size() != n)
            throw UsageError("sinkhorn_kl: initial potentials have the wrong size");
        h = std::move(*init);
    }
    const Vector& a = mu.weights();
    const Vector& b = nu.weights();
    const Vector la = a.array().log();
    const Vector lb = b.array().log();
    std::vector<double> buf(static_cast<std::size_t>(std::max(m, n)));

    // h_i = eps - eps * log sum_j w_j exp((other_j - c_ij) / eps)
    auto lse_update = [&](Eigen::Index count, auto arg, const Vector& lw) {
        double top = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < count; ++j) {
            const double v = std::isfinite(lw[j]) ? lw[j] + arg(j) / eps : -std::numeric_limits<double>::infinity();
            buf[static_cast<std::size_t>(j)] = v;
            top = std::max(top, v);
        }
        double s = 0.0;
        for (Eigen::Index j = 0; j < count; ++j)
            s += std::exp(buf[static_cast<std::size_t>(j)] - top);
        return eps - eps * (top + std::log(s));
    };

    SolveReport rep{Coupling::identity(DiscreteMeasure::from_weights(Vector::Ones(1))), {}, 0, 0, 0, 0, 0, false, 0, {}};
    check_every = std::max(check_every, 1);
    for (int it = 1; it <= cfg.max_iter; ++it) {
        for (Eigen::Index i = 0; i < m; ++i)
            h.h1[i] = lse_update(n, [&](Eigen::Index j) { return h.h2[j] - c(i, j); }, lb);
        for (Eigen::Index j = 0; j < n; ++j)
            h.h2[j] = lse_update(m, [&](Eigen::Index i) { return h.h1[i] - c(i, j); }, la);
        if (it % check_every != 0 && it != cfg.max_iter)
            continue;
        rep.potentials = h;
        detail::finish_report(rep, c, mu, nu, cfg, detail::recover_coupling(h, c, mu, nu, cfg));
        rep.iterations = it;
        rep.dual_trace.push_back(rep.dual_value);
        if (rep.relative_gap <= cfg.tol_gap && rep.marginal_defect <= cfg.tol_marginal) {
            rep.converged = true;
            break;
        }
    }
    return rep;
}

// Primal log-barrier Newton method. Works with density ratios
// x_ij = pi_ij / (mu_i nu_j) on the support of mu (x) nu and minimizes
//
//   sum_ij w_ij [ c_ij x_ij + eps f_q(x_ij) - tau log x_ij ]
//
// subject to the marginal constraints, driving tau -> 0. Each Newton step
// reduces to an (m + n - 1)-dimensional SPD system because the Hessian is
// diagonal. Dual potentials are read off the constraint multipliers.
inline SolveReport solve_primal(const CostMatrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                const SolveConfig& cfg) {
    cfg.check();
    check_shapes(c, mu, nu);
    std::vector<Eigen::Index> rows, cols;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        if (mu.weight(i) > 0.0)
            rows.push_back(i);
    for (Eigen::Index j = 0; j < nu.size(); ++j)
        if (nu.weight(j) > 0.0)
            cols.push_back(j);
    const auto m = static_cast<Eigen::Index>(rows.size());
    const auto n = static_cast<Eigen::Index>(cols.size());
    Vector a(m), b(n);
    Matrix cc(m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        a[i] = mu.weight(rows[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j)
            cc(i, j) = c(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index j = 0; j < n; ++j)
        b[j] = nu.weight(cols[static_cast<std::size_t>(j)]);
    const double eps = cfg.epsilon;
    const QParam q = cfg.q;

    Matrix x = Matrix::Ones(m, n);
    Vector lam_r = Vector::Zero(m), lam_c = Vector::Zero(n);
    const Eigen::Index k = m + n - 1;  // last column constraint is redundant

    auto barrier_value = [&](const Matrix& z, double tau) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < n; ++j) {
                const double v = z(i, j);
                s += a[i] * b[j] * (cc(i, j) * v + eps * f_q(q, v) - tau * std::log(v));
            }
        return s;
    };

    const double tau_floor = 1e-3 * cfg.tol_gap * std::max(1e-3 * eps, std::abs(cc.cwiseProduct(a * b.transpose()).sum()));
    double tau = eps;
    int newton_steps = 0;
    Matrix g(m, n), dinv(m, n), step(m, n);
    for (;;) {
        for (int inner = 0; inner < 200; ++inner) {
            ++newton_steps;
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double v = x(i, j);
                    g(i, j) = cc(i, j) + eps * f_q_prime(q, v) - tau / v;  // gradient / w
                    dinv(i, j) = 1.0 / (eps * f_q_second(q, v) + tau / (v * v));  // inverse Hessian * w
                }
            // Multipliers enter the gradient as b_j * lr_i + a_i * lc_j, i.e.
            // per unit weight lr_i / a_i + lc_j / b_j; solve in those units.
            Matrix sys = Matrix::Zero(k, k);
            Vector rhs = Vector::Zero(k);
            for (Eigen::Index i = 0; i < m; ++i) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double w = a[i] * b[j];
                    const double d = dinv(i, j) * w;  // weight-scaled inverse Hessian
                    sys(i, i) += d;
                    rhs[i] -= d * g(i, j);
                    if (j < n - 1) {
                        sys(m + j, m + j) += d;
                        sys(i, m + j) += d;
                        sys(m + j, i) += d;
                        rhs[m + j] -= d * g(i, j);
                    }
                }
            }
            Eigen::LDLT<Eigen::MatrixXd> ldlt(sys);
            if (ldlt.info() != Eigen::Success) {
                // Near-singular once some ratios underflow towards zero.
                sys.diagonal().array() += 1e-12 * sys.diagonal().maxCoeff();
                ldlt.compute(sys);
            }
            if (ldlt.info() != Eigen::Success)
                throw NumericalError("solve_primal: Newton system factorization failed");
            const Eigen::VectorXd y = ldlt.solve(rhs);
            double slope = 0.0;
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double mult = y[i] + (j < n - 1 ? y[m + j] : 0.0);
                    step(i, j) = -dinv(i, j) * (g(i, j) + mult);
                    slope += a[i] * b[j] * g(i, j) * step(i, j);
                }
            for (Eigen::Index i = 0; i < m; ++i)
                lam_r[i] = y[i];
            for (Eigen::Index j = 0; j < n; ++j)
                lam_c[j] = j < n - 1 ? y[m + j] : 0.0;
            const double decrement = -slope;
            if (!(decrement > 1e-14 * std::max(tau, 1e-300)) || !std::isfinite(decrement))
                break;
            double alpha = 1.0;
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    if (step(i, j) < 0.0)
                        alpha = std::min(alpha, -0.99 * x(i, j) / step(i, j));
            const double f0 = barrier_value(x, tau);
            Matrix trial = x + alpha * step;
            while (barrier_value(trial, tau) > f0 + 0.25 * alpha * slope && alpha > 1e-12) {
                alpha *= 0.5;
                trial = x + alpha * step;
            }
            x = std::move(trial);
            if (decrement < 1e-13 * std::max(1e-3 * eps, std::abs(f0)))
                break;
        }
        if (tau <= tau_floor)
            break;
        tau = std::max(tau * 0.1, tau_floor);
    }

    // Potentials: c + eps f_q'(x) + lr_i + lc_j = tau / x, so h = -lambda.
    SolveReport rep{Coupling::identity(DiscreteMeasure::from_weights(Vector::Ones(1))), {}, 0, 0, 0, 0, 0, false, 0, {}};
    rep.potentials = {Vector::Zero(mu.size()), Vector::Zero(nu.size())};
    for (Eigen::Index i = 0; i < m; ++i)
        rep.potentials.h1[rows[static_cast<std::size_t>(i)]] = -lam_r[i];
    for (Eigen::Index j = 0; j < n; ++j)
        rep.potentials.h2[cols[static_cast<std::size_t>(j)]] = -lam_c[j];
    Matrix density = Matrix::Zero(mu.size(), nu.size());
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            density(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) = a[i] * b[j] * x(i, j);
    detail::finish_report(rep, c, mu, nu, cfg, density);
    rep.iterations = newton_steps;
    rep.dual_trace.push_back(rep.dual_value);
    rep.converged = rep.relative_gap <= cfg.tol_gap && rep.marginal_defect <= cfg.tol_marginal;
    return rep;
}

}  // namespace tsot
