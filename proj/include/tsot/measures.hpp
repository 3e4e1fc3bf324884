#pragma once

// Discrete probability measures, couplings, Markov kernels and cost
// matrices. Everything is dense; desk-scale problems (a few hundred atoms
// per side) are the target.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tsot/errors.hpp"

namespace tsot {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

// Tolerances used by validate(): probability mass is held to 1e-12,
// marginals of solver output to 1e-9.
inline constexpr double kMassTolerance = 1e-12;
inline constexpr double kMarginalTolerance = 1e-9;

// Finitely supported measure on R^d. Rows of atoms() are points.
// Construction checks shapes only; validate() reports mass/distinctness.
class DiscreteMeasure {
public:
    DiscreteMeasure(Matrix atoms, Vector weights) : atoms_(std::move(atoms)), weights_(std::move(weights)) {
        if (weights_.size() < 1)
            throw UsageError("DiscreteMeasure: at least one atom is required");
        if (atoms_.rows() != weights_.size())
            throw UsageError("DiscreteMeasure: atom count and weight count differ");
        if (atoms_.cols() < 1)
            throw UsageError("DiscreteMeasure: atoms need dimension >= 1");
    }

    // Points on the real line.
    static DiscreteMeasure on_line(std::span<const double> points, std::span<const double> weights) {
        if (points.size() != weights.size())
            throw UsageError("DiscreteMeasure::on_line: size mismatch");
        Matrix a(static_cast<Eigen::Index>(points.size()), 1);
        Vector w(static_cast<Eigen::Index>(weights.size()));
        for (std::size_t i = 0; i < points.size(); ++i) {
            a(static_cast<Eigen::Index>(i), 0) = points[i];
            w[static_cast<Eigen::Index>(i)] = weights[i];
        }
        return {std::move(a), std::move(w)};
    }

    // Weight vector on the index atoms 0, 1, ..., n-1 of the real line.
    static DiscreteMeasure from_weights(Vector w) {
        Matrix a(w.size(), 1);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            a(i, 0) = static_cast<double>(i);
        return {std::move(a), std::move(w)};
    }

    // Uniform discretization of [0,1]: atoms at cell midpoints (k + 1/2)/n.
    static DiscreteMeasure uniform_grid(std::size_t n) {
        if (n == 0)
            throw UsageError("uniform_grid: n must be positive");
        const auto len = static_cast<Eigen::Index>(n);
        Matrix a(len, 1);
        for (Eigen::Index k = 0; k < len; ++k)
            a(k, 0) = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
        return {std::move(a), Vector::Constant(len, 1.0 / static_cast<double>(n))};
    }

    [[nodiscard]] Eigen::Index size() const noexcept { return weights_.size(); }
    [[nodiscard]] Eigen::Index dim() const noexcept { return atoms_.cols(); }
    [[nodiscard]] const Matrix& atoms() const noexcept { return atoms_; }
    [[nodiscard]] const Vector& weights() const noexcept { return weights_; }
    [[nodiscard]] double weight(Eigen::Index i) const { return weights_[i]; }
    [[nodiscard]] auto atom(Eigen::Index i) const { return atoms_.row(i); }
    [[nodiscard]] std::span<const double> weight_span() const noexcept {
        return {weights_.data(), static_cast<std::size_t>(weights_.size())};
    }

private:
    Matrix atoms_;
    Vector weights_;
};

// Joint weight matrix with the two measures whose marginals it should carry.
class Coupling {
public:
    Coupling(Matrix weights, DiscreteMeasure left, DiscreteMeasure right)
        : w_(std::move(weights)), left_(std::move(left)), right_(std::move(right)) {
        if (w_.rows() != left_.size() || w_.cols() != right_.size())
            throw UsageError("Coupling: weight matrix shape does not match the marginals");
    }

    // The diagonal coupling of a measure with itself.
    static Coupling identity(const DiscreteMeasure& mu) {
        Matrix w = Matrix::Zero(mu.size(), mu.size());
        w.diagonal() = mu.weights();
        return {std::move(w), mu, mu};
    }

    [[nodiscard]] Eigen::Index rows() const noexcept { return w_.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return w_.cols(); }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return w_(i, j); }
    [[nodiscard]] const Matrix& matrix() const noexcept { return w_; }
    [[nodiscard]] const DiscreteMeasure& left() const noexcept { return left_; }
    [[nodiscard]] const DiscreteMeasure& right() const noexcept { return right_; }

    [[nodiscard]] Vector row_sums() const { return w_.rowwise().sum(); }
    [[nodiscard]] Vector col_sums() const { return w_.colwise().sum().transpose(); }

    [[nodiscard]] Coupling transposed() const { return {w_.transpose(), right_, left_}; }

    // Largest absolute deviation of a row/column sum from its marginal weight.
    [[nodiscard]] double marginal_defect() const {
        const double rd = (row_sums() - left_.weights()).cwiseAbs().maxCoeff();
        const double cd = (col_sums() - right_.weights()).cwiseAbs().maxCoeff();
        return std::max(rd, cd);
    }

    // The coupling as a measure on the product space, atoms (x_i, y_j) in
    // row-major cell order.
    [[nodiscard]] DiscreteMeasure as_measure() const {
        const Eigen::Index m = rows(), n = cols();
        const Eigen::Index d1 = left_.dim(), d2 = right_.dim();
        Matrix a(m * n, d1 + d2);
        Vector w(m * n);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index k = i * n + j;
                a.row(k).head(d1) = left_.atom(i);
                a.row(k).tail(d2) = right_.atom(j);
                w[k] = w_(i, j);
            }
        }
        return {std::move(a), std::move(w)};
    }

private:
    Matrix w_;
    DiscreteMeasure left_;
    DiscreteMeasure right_;
};

// Row-stochastic matrix from m source atoms to n target atoms.
class StochasticKernel {
public:
    // Target atoms default to the index points 0..n-1 on the line.
    explicit StochasticKernel(Matrix rows) : rows_(std::move(rows)), target_(rows_.cols(), 1) {
        for (Eigen::Index j = 0; j < rows_.cols(); ++j)
            target_(j, 0) = static_cast<double>(j);
    }
    StochasticKernel(Matrix rows, Matrix target_atoms) : rows_(std::move(rows)), target_(std::move(target_atoms)) {
        if (target_.rows() != rows_.cols())
            throw UsageError("StochasticKernel: target atom count does not match kernel columns");
    }

    [[nodiscard]] Eigen::Index sources() const noexcept { return rows_.rows(); }
    [[nodiscard]] Eigen::Index targets() const noexcept { return rows_.cols(); }
    [[nodiscard]] const Matrix& rows() const noexcept { return rows_; }
    [[nodiscard]] const Matrix& target_atoms() const noexcept { return target_; }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return rows_(i, j); }

private:
    Matrix rows_;
    Matrix target_;
};

enum class CostFamily { l1_sum, lp_power, custom };

inline const char* to_string(CostFamily f) {
    switch (f) {
    case CostFamily::l1_sum: return "l1_sum";
    case CostFamily::lp_power: return "lp_power";
    case CostFamily::custom: return "custom";
    }
    return "?";
}

struct CostMatrix {
    Matrix values;
    CostFamily family = CostFamily::custom;
    double order = 1.0;                 // p for lp_power
    std::optional<double> lipschitz;    // L of the stability condition, when declared

    static CostMatrix custom(Matrix v) {
        if ((v.array() < 0.0).any())
            throw UsageError("CostMatrix: costs must be nonnegative");
        return {std::move(v), CostFamily::custom, 1.0, std::nullopt};
    }
    [[nodiscard]] Eigen::Index rows() const noexcept { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return values.cols(); }
    [[nodiscard]] double operator()(Eigen::Index i, Eigen::Index j) const { return values(i, j); }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline Coupling product_measure(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    Matrix w = mu.weights() * nu.weights().transpose();
    return {std::move(w), mu, nu};
}

struct Disintegration {
    DiscreteMeasure marginal;
    StochasticKernel kernel;
};

// pi = marginal (x) kernel. Rows over zero-mass atoms are filled with the
// right marginal so the kernel is defined everywhere.
inline Disintegration disintegrate(const Coupling& pi) {
    const Vector r = pi.row_sums();
    Matrix k(pi.rows(), pi.cols());
    for (Eigen::Index i = 0; i < pi.rows(); ++i) {
        if (r[i] > 0.0)
            k.row(i) = pi.matrix().row(i) / r[i];
        else
            k.row(i) = pi.right().weights().transpose();
    }
    return {DiscreteMeasure(pi.left().atoms(), r), StochasticKernel(std::move(k), pi.right().atoms())};
}

inline DiscreteMeasure push_kernel(const DiscreteMeasure& mu, const StochasticKernel& k) {
    if (k.sources() != mu.size())
        throw UsageError("push_kernel: kernel source count does not match the measure");
    Vector w = k.rows().transpose() * mu.weights();
    return {k.target_atoms(), std::move(w)};
}

// mu (x) K as a coupling of mu with mu K.
inline Coupling compose(const DiscreteMeasure& mu, const StochasticKernel& k) {
    if (k.sources() != mu.size())
        throw UsageError("compose: kernel source count does not match the measure");
    Matrix w = mu.weights().asDiagonal() * k.rows();
    return {std::move(w), mu, push_kernel(mu, k)};
}

inline CostMatrix build_cost(const DiscreteMeasure& mu, const DiscreteMeasure& nu, CostFamily family,
                             double order = 1.0) {
    if (mu.dim() != nu.dim())
        throw UsageError("build_cost: atoms have different dimensions");
    if (family == CostFamily::custom)
        throw UsageError("build_cost: the custom family has no closed-form construction");
    if (family == CostFamily::lp_power && !(order > 0.0))
        throw UsageError("build_cost: lp_power needs a positive order");
    Matrix c(mu.size(), nu.size());
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        for (Eigen::Index j = 0; j < nu.size(); ++j) {
            const auto diff = (mu.atom(i) - nu.atom(j)).eval();
            if (family == CostFamily::l1_sum) {
                c(i, j) = diff.cwiseAbs().sum();
            } else {
                const double sq = diff.squaredNorm();
                c(i, j) = order == 2.0 ? sq : std::pow(std::sqrt(sq), order);
            }
        }
    }
    CostMatrix out{std::move(c), family, family == CostFamily::l1_sum ? 1.0 : order, std::nullopt};
    if (family == CostFamily::l1_sum)
        out.lipschitz = 1.0;
    return out;
}

inline double transport_cost(const Coupling& pi, const CostMatrix& c) {
    if (c.rows() != pi.rows() || c.cols() != pi.cols())
        throw UsageError("transport_cost: cost and coupling shapes differ");
    return pi.matrix().cwiseProduct(c.values).sum();
}

// ---------------------------------------------------------------------------
// Validation: reports every violated invariant with its magnitude.
// ---------------------------------------------------------------------------

struct Violation {
    std::string what;
    double magnitude = 0.0;
};

struct Diagnostics {
    std::vector<Violation> violations;

    [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
    void add(std::string what, double magnitude) { violations.push_back({std::move(what), magnitude}); }
    void merge(const Diagnostics& other, const std::string& prefix) {
        for (const auto& v : other.violations)
            violations.push_back({prefix + v.what, v.magnitude});
    }
    [[nodiscard]] std::string summary() const {
        if (ok())
            return "ok";
        std::ostringstream os;
        for (const auto& v : violations)
            os << v.what << " (magnitude " << v.magnitude << ")\n";
        return os.str();
    }
};

inline Diagnostics validate(const DiscreteMeasure& mu) {
    Diagnostics d;
    const auto& w = mu.weights();
    if (!w.allFinite() || !mu.atoms().allFinite())
        d.add("non-finite atoms or weights", std::numeric_limits<double>::infinity());
    const double neg = (-w.array()).max(0.0).maxCoeff();
    if (neg > 0.0)
        d.add("negative weight", neg);
    const double mass = std::abs(w.sum() - 1.0);
    if (!(mass <= kMassTolerance))
        d.add("total mass differs from 1", mass);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        for (Eigen::Index j = i + 1; j < mu.size(); ++j) {
            if (mu.atom(i) == mu.atom(j)) {
                d.add("duplicate atoms " + std::to_string(i) + " and " + std::to_string(j), 0.0);
            }
        }
    }
    return d;
}

inline Diagnostics validate(const Coupling& pi) {
    Diagnostics d;
    d.merge(validate(pi.left()), "left marginal: ");
    d.merge(validate(pi.right()), "right marginal: ");
    const auto& w = pi.matrix();
    if (!w.allFinite())
        d.add("non-finite coupling entry", std::numeric_limits<double>::infinity());
    const double neg = (-w.array()).max(0.0).maxCoeff();
    if (neg > 0.0)
        d.add("negative coupling entry", neg);
    const double rd = (pi.row_sums() - pi.left().weights()).cwiseAbs().maxCoeff();
    if (!(rd <= kMarginalTolerance))
        d.add("row sums differ from left marginal", rd);
    const double cd = (pi.col_sums() - pi.right().weights()).cwiseAbs().maxCoeff();
    if (!(cd <= kMarginalTolerance))
        d.add("column sums differ from right marginal", cd);
    const double mass = std::abs(w.sum() - 1.0);
    if (!(mass <= kMassTolerance))
        d.add("total mass differs from 1", mass);
    return d;
}

inline Diagnostics validate(const StochasticKernel& k) {
    Diagnostics d;
    const auto& r = k.rows();
    if (!r.allFinite())
        d.add("non-finite kernel entry", std::numeric_limits<double>::infinity());
    const double neg = (-r.array()).max(0.0).maxCoeff();
    if (neg > 0.0)
        d.add("negative kernel entry", neg);
    for (Eigen::Index i = 0; i < k.sources(); ++i) {
        const double defect = std::abs(r.row(i).sum() - 1.0);
        if (!(defect <= kMassTolerance))
            d.add("row " + std::to_string(i) + " is not a probability vector", defect);
    }
    return d;
}

}  // namespace tsot
