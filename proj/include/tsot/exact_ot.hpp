#pragma once

// Unregularized Monge-Kantorovich problem on discrete measures, solved by
// the transportation simplex (MODI potentials on a spanning-tree basis).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "tsot/errors.hpp"
#include "tsot/measures.hpp"

namespace tsot {

enum class ExactMethod { lp, permutation_bruteforce };

struct ExactSolution {
    Coupling coupling;
    double value = 0.0;
    ExactMethod method = ExactMethod::lp;
    std::size_t pivots = 0;
};

// Raw output of the transport LP on strictly positive supplies/demands.
struct TransportPlan {
    Matrix flow;
    Vector u;  // row potentials
    Vector v;  // column potentials, u_i + v_j <= c_ij at optimality
    std::size_t pivots = 0;
};

namespace detail {

class TransportSimplex {
public:
    TransportSimplex(const Matrix& cost, const Vector& supply, const Vector& demand)
        : c_(cost), a_(supply), b_(demand), m_(cost.rows()), n_(cost.cols()) {}

    TransportPlan solve() {
        northwest_corner();
        const double cmax = c_.cwiseAbs().maxCoeff();
        const double tol = 1e-12 * std::max(1.0, cmax);
        const std::size_t limit = 50 * static_cast<std::size_t>(m_ * n_) + 10000;
        std::size_t degenerate_streak = 0;
        std::size_t pivots = 0;

        for (;;) {
            rebuild_adjacency();
            compute_potentials();
            // Dantzig pricing; Bland's smallest-index rule while the method
            // is stalling on degenerate pivots, which rules out cycling.
            const bool bland = degenerate_streak > static_cast<std::size_t>(m_ + n_);
            Eigen::Index ei = -1, ej = -1;
            double best = -tol;
            for (Eigen::Index i = 0; i < m_ && !(bland && ei >= 0); ++i) {
                for (Eigen::Index j = 0; j < n_; ++j) {
                    const double rc = c_(i, j) - u_[i] - v_[j];
                    if (rc < best) {
                        best = rc;
                        ei = i;
                        ej = j;
                        if (bland)
                            break;
                    }
                }
            }
            if (ei < 0)
                break;
            if (++pivots > limit)
                throw NumericalError("transport simplex exceeded its pivot limit");
            const bool degenerate = pivot(ei, ej, bland);
            degenerate_streak = degenerate ? degenerate_streak + 1 : 0;
        }

        TransportPlan out;
        out.flow = Matrix::Zero(m_, n_);
        for (const auto& cell : basis_)
            out.flow(cell.i, cell.j) += std::max(cell.flow, 0.0);
        out.u = u_;
        out.v = v_;
        out.pivots = pivots;
        return out;
    }

private:
    struct Cell {
        Eigen::Index i;
        Eigen::Index j;
        double flow;
    };

    void northwest_corner() {
        basis_.clear();
        basis_.reserve(static_cast<std::size_t>(m_ + n_ - 1));
        Eigen::Index i = 0, j = 0;
        double ra = a_[0], rb = b_[0];
        for (;;) {
            const double f = std::min(ra, rb);
            basis_.push_back({i, j, f});
            ra -= f;
            rb -= f;
            if (i == m_ - 1 && j == n_ - 1)
                break;
            if (j == n_ - 1 || (i < m_ - 1 && ra < rb)) {
                ++i;
                ra = a_[i];
            } else {
                ++j;
                rb = b_[j];
            }
        }
    }

    // Nodes 0..m-1 are rows, m..m+n-1 are columns.
    void rebuild_adjacency() {
        adj_.assign(static_cast<std::size_t>(m_ + n_), {});
        for (std::size_t k = 0; k < basis_.size(); ++k) {
            adj_[static_cast<std::size_t>(basis_[k].i)].push_back(k);
            adj_[static_cast<std::size_t>(m_ + basis_[k].j)].push_back(k);
        }
    }

    [[nodiscard]] std::size_t other_end(std::size_t cell, std::size_t node) const {
        const auto& c = basis_[cell];
        const auto row = static_cast<std::size_t>(c.i);
        return node == row ? static_cast<std::size_t>(m_ + c.j) : row;
    }

    void compute_potentials() {
        u_ = Vector::Zero(m_);
        v_ = Vector::Zero(n_);
        std::vector<char> seen(static_cast<std::size_t>(m_ + n_), 0);
        std::vector<std::size_t> stack{0};
        seen[0] = 1;
        while (!stack.empty()) {
            const std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t k : adj_[node]) {
                const std::size_t next = other_end(k, node);
                if (seen[next])
                    continue;
                seen[next] = 1;
                const auto& cell = basis_[k];
                if (next >= static_cast<std::size_t>(m_))
                    v_[cell.j] = c_(cell.i, cell.j) - u_[cell.i];
                else
                    u_[cell.i] = c_(cell.i, cell.j) - v_[cell.j];
                stack.push_back(next);
            }
        }
        for (char s : seen)
            if (!s)
                throw NumericalError("transport simplex basis is not a spanning tree");
    }

    // Returns true when the pivot moved zero flow.
    bool pivot(Eigen::Index ei, Eigen::Index ej, bool bland) {
        // Tree path from column node ej to row node ei, as basis cell indices.
        const std::size_t total = static_cast<std::size_t>(m_ + n_);
        const auto start = static_cast<std::size_t>(ei);
        const auto goal = static_cast<std::size_t>(m_ + ej);
        std::vector<std::size_t> parent_cell(total, std::numeric_limits<std::size_t>::max());
        std::vector<char> seen(total, 0);
        std::vector<std::size_t> stack{start};
        seen[start] = 1;
        while (!stack.empty() && !seen[goal]) {
            const std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t k : adj_[node]) {
                const std::size_t next = other_end(k, node);
                if (seen[next])
                    continue;
                seen[next] = 1;
                parent_cell[next] = k;
                stack.push_back(next);
            }
        }
        std::vector<std::size_t> path;  // from the column end back to the row end
        for (std::size_t node = goal; node != start;) {
            const std::size_t k = parent_cell[node];
            path.push_back(k);
            node = other_end(k, node);
        }
        // Cells at even positions along the path lose flow.
        double theta = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < path.size(); t += 2)
            theta = std::min(theta, basis_[path[t]].flow);
        std::size_t leave = std::numeric_limits<std::size_t>::max();
        for (std::size_t t = 0; t < path.size(); t += 2) {
            const auto& cell = basis_[path[t]];
            if (cell.flow > theta)
                continue;
            if (leave == std::numeric_limits<std::size_t>::max()) {
                leave = path[t];
                if (!bland)
                    break;
            } else {
                const auto& cur = basis_[leave];
                if (cell.i * n_ + cell.j < cur.i * n_ + cur.j)
                    leave = path[t];
            }
        }
        for (std::size_t t = 0; t < path.size(); ++t)
            basis_[path[t]].flow += (t % 2 == 0) ? -theta : theta;
        basis_[leave] = {ei, ej, theta};
        return theta == 0.0;
    }

    const Matrix& c_;
    const Vector& a_;
    const Vector& b_;
    Eigen::Index m_, n_;
    std::vector<Cell> basis_;
    std::vector<std::vector<std::size_t>> adj_;
    Vector u_, v_;
};

}  // namespace detail

// Transport LP for nonnegative supply/demand vectors of equal total mass.
// Zero-mass rows/columns are removed before the simplex runs; their
// potentials are filled so that u_i + v_j <= c_ij still holds.
inline TransportPlan solve_transport(const Matrix& cost, const Vector& supply, const Vector& demand) {
    if (cost.rows() != supply.size() || cost.cols() != demand.size())
        throw UsageError("solve_transport: cost shape does not match supply/demand");
    if ((supply.array() < 0.0).any() || (demand.array() < 0.0).any())
        throw UsageError("solve_transport: negative mass");
    std::vector<Eigen::Index> rows, cols;
    for (Eigen::Index i = 0; i < supply.size(); ++i)
        if (supply[i] > 0.0)
            rows.push_back(i);
    for (Eigen::Index j = 0; j < demand.size(); ++j)
        if (demand[j] > 0.0)
            cols.push_back(j);
    if (rows.empty() || cols.empty())
        throw UsageError("solve_transport: no mass to transport");

    const auto m = static_cast<Eigen::Index>(rows.size());
    const auto n = static_cast<Eigen::Index>(cols.size());
    Matrix c(m, n);
    Vector a(m), b(n);
    for (Eigen::Index i = 0; i < m; ++i) {
        a[i] = supply[rows[static_cast<std::size_t>(i)]];
        for (Eigen::Index j = 0; j < n; ++j)
            c(i, j) = cost(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]);
    }
    for (Eigen::Index j = 0; j < n; ++j)
        b[j] = demand[cols[static_cast<std::size_t>(j)]];
    const double sa = a.sum(), sb = b.sum();
    if (std::abs(sa - sb) > 1e-9 * std::max(sa, sb))
        throw UsageError("solve_transport: supply and demand totals differ");
    b *= sa / sb;

    detail::TransportSimplex simplex(c, a, b);
    TransportPlan reduced = simplex.solve();

    TransportPlan out;
    out.flow = Matrix::Zero(cost.rows(), cost.cols());
    out.u = Vector::Zero(cost.rows());
    out.v = Vector::Zero(cost.cols());
    out.pivots = reduced.pivots;
    for (Eigen::Index i = 0; i < m; ++i)
        out.u[rows[static_cast<std::size_t>(i)]] = reduced.u[i];
    for (Eigen::Index j = 0; j < n; ++j)
        out.v[cols[static_cast<std::size_t>(j)]] = reduced.v[j];
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            out.flow(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)]) = reduced.flow(i, j);
    // Potentials on zero-mass atoms: largest values keeping dual feasibility.
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        if (supply[i] > 0.0)
            continue;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j : cols)
            best = std::min(best, cost(i, j) - out.v[j]);
        out.u[i] = best;
    }
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
        if (demand[j] > 0.0)
            continue;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < cost.rows(); ++i)
            best = std::min(best, cost(i, j) - out.u[i]);
        out.v[j] = best;
    }
    return out;
}

inline ExactSolution solve_exact(const CostMatrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    if (c.rows() != mu.size() || c.cols() != nu.size())
        throw UsageError("solve_exact: cost shape does not match the measures");
    TransportPlan plan = solve_transport(c.values, mu.weights(), nu.weights());
    Coupling pi(std::move(plan.flow), mu, nu);
    const double value = transport_cost(pi, c);
    return {std::move(pi), value, ExactMethod::lp, plan.pivots};
}

// W_p with ground cost |x - y|_2^p.
inline double wasserstein_p(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p) {
    if (!(p >= 1.0))
        throw UsageError("wasserstein_p: order must be >= 1");
    const CostMatrix c = build_cost(mu, nu, CostFamily::lp_power, p);
    const double v = std::max(solve_exact(c, mu, nu).value, 0.0);
    return std::pow(v, 1.0 / p);
}

// W_p between two couplings seen as measures on X1 x X2, with ground cost
// |x - x'|^p + |y - y'|^p. Empty cells are skipped.
inline double coupling_wasserstein_p(const Coupling& pi, const Coupling& other, double p) {
    if (!(p >= 1.0))
        throw UsageError("coupling_wasserstein_p: order must be >= 1");
    struct Cell {
        Eigen::Index i, j;
        double w;
    };
    auto cells = [](const Coupling& g) {
        std::vector<Cell> out;
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j)
                if (g(i, j) > 0.0)
                    out.push_back({i, j, g(i, j)});
        return out;
    };
    const auto a = cells(pi), b = cells(other);
    auto dist_p = [p](auto x, auto y) {
        const double d = (x - y).norm();
        return p == 1.0 ? d : std::pow(d, p);
    };
    Matrix cost(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
    Vector wa(cost.rows()), wb(cost.cols());
    for (std::size_t s = 0; s < a.size(); ++s) {
        wa[static_cast<Eigen::Index>(s)] = a[s].w;
        for (std::size_t t = 0; t < b.size(); ++t) {
            cost(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) =
                dist_p(pi.left().atom(a[s].i), other.left().atom(b[t].i)) +
                dist_p(pi.right().atom(a[s].j), other.right().atom(b[t].j));
        }
    }
    for (std::size_t t = 0; t < b.size(); ++t)
        wb[static_cast<Eigen::Index>(t)] = b[t].w;
    const TransportPlan plan = solve_transport(cost, wa, wb);
    const double v = std::max(plan.flow.cwiseProduct(cost).sum(), 0.0);
    return std::pow(v, 1.0 / p);
}

}  // namespace tsot
