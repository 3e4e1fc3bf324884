#pragma once

// Deformed logarithm/exponential calculus and the Tsallis divergence.
//
// Conventions:
//   log_q(y) = (y^{1-q} - 1) / (1 - q),      exp_q(y) = [1 + (1-q) y]_+^{1/(1-q)}
//   f_q(x)   = (x^q - x) / (q - 1),           phi_q(x) = f_q(x) / x
//   f_q*(y)  = sup_{x >= 0} { x y - f_q(x) } = q^{-q/(q-1)} [1 + (q-1) y]_+^{q/(q-1)}
// with the logarithmic limits at q = 1 (f_1(x) = x log x, f_1*(y) = e^{y-1}).
//
// All formulas are written through expm1/log1p so they stay accurate as
// q -> 1; inside |q - 1| < kNearOne the exact limit (plus first-order
// series where it matters) is used instead.

#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "tsot/errors.hpp"
#include "tsot/measures.hpp"

namespace tsot {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNearOne = 1e-8;

// Tsallis order q >= 1; q = 1 selects the Kullback-Leibler limit.
class QParam {
public:
    constexpr QParam() = default;
    explicit QParam(double q) : q_(q) {
        if (!(q >= 1.0) || !std::isfinite(q))
            throw UsageError("Tsallis order must satisfy q >= 1, got " + std::to_string(q));
    }

    static QParam kl() { return QParam(1.0); }

    [[nodiscard]] constexpr double value() const noexcept { return q_; }
    [[nodiscard]] constexpr bool is_kl() const noexcept { return q_ - 1.0 < kNearOne; }
    // Concavity of phi_q (and with it the rate bounds) needs q <= 2.
    [[nodiscard]] constexpr bool outside_rate_hypothesis() const noexcept { return q_ > 2.0; }

    friend constexpr bool operator==(QParam, QParam) = default;

private:
    double q_ = 1.0;
};

// ---------------------------------------------------------------------------
// Deformed logarithm and exponential. The order is a plain real here because
// the rate envelopes evaluate log_q at orders below one.
// ---------------------------------------------------------------------------

inline double q_log(double order, double y) {
    if (!(y > 0.0))
        throw DomainError("q_log requires y > 0");
    const double lg = std::log(y);
    const double d = 1.0 - order;
    if (std::abs(d) < kNearOne)
        return lg + 0.5 * d * lg * lg;
    return std::expm1(d * lg) / d;
}

inline double q_log(QParam q, double y) { return q_log(q.value(), y); }

// Returns +inf where the positive part vanishes under a negative exponent.
inline double q_exp(double order, double y) {
    const double d = 1.0 - order;
    if (std::abs(d) < kNearOne)
        return std::exp(y);
    const double base = 1.0 + d * y;
    if (base <= 0.0)
        return d < 0.0 ? kInf : 0.0;
    return std::exp(std::log1p(d * y) / d);
}

inline double q_exp(QParam q, double y) { return q_exp(q.value(), y); }

// ---------------------------------------------------------------------------
// Divergence generator and its derivatives.
// ---------------------------------------------------------------------------

inline double phi_q(QParam q, double x) {
    if (!(x > 0.0))
        throw DomainError("phi_q requires x > 0");
    const double lg = std::log(x);
    const double d = q.value() - 1.0;
    if (q.is_kl())
        return lg + 0.5 * d * lg * lg;
    return std::expm1(d * lg) / d;
}

inline double f_q(QParam q, double x) {
    if (!(x >= 0.0))
        throw DomainError("f_q requires x >= 0");
    if (x == 0.0)
        return 0.0;
    return x * phi_q(q, x);
}

// f_q'(x) = x^{q-1} + phi_q(x); equals log x + 1 at q = 1.
inline double f_q_prime(QParam q, double x) {
    if (!(x >= 0.0))
        throw DomainError("f_q_prime requires x >= 0");
    if (x == 0.0)
        return q.is_kl() ? -kInf : -1.0 / (q.value() - 1.0);
    return std::pow(x, q.value() - 1.0) + phi_q(q, x);
}

inline double f_q_second(QParam q, double x) {
    if (!(x > 0.0))
        throw DomainError("f_q_second requires x > 0");
    return q.value() * std::pow(x, q.value() - 2.0);
}

// Legendre conjugate over x >= 0. Zero on y <= -1/(q-1) for q > 1.
inline double f_q_star(QParam q, double y) {
    if (q.is_kl())
        return std::exp(y - 1.0);
    const double d = q.value() - 1.0;
    const double base = 1.0 + d * y;
    if (base <= 0.0)
        return 0.0;
    if (q.value() == 2.0)
        return 0.25 * base * base;
    return std::exp((q.value() / d) * (std::log1p(d * y) - std::log1p(d)));
}

// (f_q*)'(y) = q^{-1/(q-1)} [1 + (q-1) y]_+^{1/(q-1)}: the density ratio of
// the primal coupling recovered from dual potentials.
inline double f_q_star_prime(QParam q, double y) {
    if (q.is_kl())
        return std::exp(y - 1.0);
    const double d = q.value() - 1.0;
    const double base = 1.0 + d * y;
    if (base <= 0.0)
        return 0.0;
    if (q.value() == 2.0)
        return 0.5 * base;
    return std::exp((std::log1p(d * y) - std::log1p(d)) / d);
}

// (f_q*)''(y) = (f_q*)'(y) / (1 + (q-1) y); zero on the flat region.
inline double f_q_star_second(QParam q, double y) {
    if (q.is_kl())
        return std::exp(y - 1.0);
    const double d = q.value() - 1.0;
    const double base = 1.0 + d * y;
    if (base <= 0.0)
        return 0.0;
    return f_q_star_prime(q, y) / base;
}

// ---------------------------------------------------------------------------
// Tsallis relative entropy D_q(mu, nu) = sum_i nu_i f_q(mu_i / nu_i) over a
// common index set. Cells with nu_i = mu_i = 0 contribute nothing; mu_i > 0
// with nu_i = 0 makes the divergence +inf.
// ---------------------------------------------------------------------------

inline double tsallis_divergence(QParam q, std::span<const double> mu, std::span<const double> nu) {
    if (mu.size() != nu.size())
        throw UsageError("tsallis_divergence: weight vectors have different lengths");
    double sum = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (mu[i] < 0.0 || nu[i] < 0.0)
            throw DomainError("tsallis_divergence: negative weight");
        if (nu[i] == 0.0) {
            if (mu[i] > 0.0)
                return kInf;
            continue;
        }
        sum += nu[i] * f_q(q, mu[i] / nu[i]);
    }
    // Nonnegative for probability vectors; rounding can leave -1e-17.
    return sum < 0.0 ? 0.0 : sum;
}

// Same quantity written as sum_i mu_i log_{2-q}(mu_i / nu_i).
inline double tsallis_divergence_qlog(QParam q, std::span<const double> mu, std::span<const double> nu) {
    if (mu.size() != nu.size())
        throw UsageError("tsallis_divergence_qlog: weight vectors have different lengths");
    double sum = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (mu[i] == 0.0)
            continue;
        if (nu[i] == 0.0)
            return kInf;
        sum += mu[i] * q_log(2.0 - q.value(), mu[i] / nu[i]);
    }
    return sum < 0.0 ? 0.0 : sum;
}

// Measures must share an atom enumeration; only the lengths can be checked.
inline double tsallis_divergence(QParam q, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    if (mu.size() != nu.size())
        throw UsageError("tsallis_divergence: measures are not on a common atom enumeration");
    return tsallis_divergence(q, mu.weight_span(), nu.weight_span());
}

// D_q(pi, left (x) right): the regularizer of the transport objective.
inline double coupling_divergence(QParam q, const Coupling& pi) {
    const auto& mu = pi.left().weights();
    const auto& nu = pi.right().weights();
    double sum = 0.0;
    for (Eigen::Index i = 0; i < pi.rows(); ++i) {
        for (Eigen::Index j = 0; j < pi.cols(); ++j) {
            const double w = mu[i] * nu[j];
            const double p = pi(i, j);
            if (p < 0.0)
                throw DomainError("coupling_divergence: negative coupling entry");
            if (w == 0.0) {
                if (p > 0.0)
                    return kInf;
                continue;
            }
            sum += w * f_q(q, p / w);
        }
    }
    return sum < 0.0 ? 0.0 : sum;
}

}  // namespace tsot
