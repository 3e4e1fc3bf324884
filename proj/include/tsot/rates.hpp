#pragma once

// Convergence-rate harness: sweeps epsilon, measures OT_{q,eps} - OT and
// evaluates the theoretical envelopes.
//
//   upper:      K1 (b/s) eps log_{1/s}(1/eps) + (K1-1)/(q-1) eps + K2 eps^{1/s},
//               s = (q-1) beta + 1
//   KL upper:   beta eps log(1/eps) + 4 L C eps
//   lower:      Kt1 eps^{1/t} - Kt2 eps,  t = (q-1) d + 1

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <limits>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tsot/errors.hpp"
#include "tsot/exact_ot.hpp"
#include "tsot/measures.hpp"
#include "tsot/qcalc.hpp"
#include "tsot/solver.hpp"

namespace tsot {

struct RateParams {
    QParam q{2.0};
    double beta = 1.0;
    double L = 1.0;
    double C = 0.25;
    int d = 1;

    void check() const {
        if (!(beta >= 1.0) || !std::isfinite(beta))
            throw UsageError("RateParams: beta must be >= 1");
        if (!(L >= 0.0) || !(C >= 0.0))
            throw UsageError("RateParams: L and C must be nonnegative");
        if (d < 1)
            throw UsageError("RateParams: d must be >= 1");
    }
};

struct RateConstants {
    double K1 = 0.0;
    double K2 = 0.0;
};

struct UpperEnvelope {
    double closed_form = 0.0;
    double integer_form = 0.0;  // min over n >= 1 of 2LC n^{-1/beta} + eps phi_q(n)
    long best_n = 1;
    bool outside_hypothesis = false;  // q > 2
};

struct RateRecord {
    double epsilon = 0.0;
    double gap = 0.0;
    double upper_env = 0.0;
    double lower_env = 0.0;
    double kl_env = 0.0;
    double solver_gap = 0.0;
    bool converged = false;
    double regularized_value = 0.0;
    std::size_t iterations = 0;
    std::string error;
};

struct RateInstance {
    DiscreteMeasure mu;
    DiscreteMeasure nu;
    CostMatrix cost;
};

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t points = 0;
};

inline RateConstants constants_upper(const RateParams& prm) {
    prm.check();
    if (prm.q.is_kl())
        throw UsageError("constants_upper: q = 1 has no Tsallis constants, use kl_envelope");
    const double s = (prm.q.value() - 1.0) * prm.beta;
    const double e = s / (s + 1.0);
    const double lc2 = 2.0 * prm.L * prm.C;
    return {std::pow(lc2 / prm.beta, e), std::pow(lc2, e) * std::pow(prm.beta, 1.0 / (s + 1.0))};
}

inline UpperEnvelope upper_envelope(double eps, const RateParams& prm) {
    if (!(eps > 0.0))
        throw UsageError("upper_envelope: eps must be positive");
    const auto [k1, k2] = constants_upper(prm);
    const double q = prm.q.value();
    const double s = (q - 1.0) * prm.beta + 1.0;
    UpperEnvelope env;
    env.outside_hypothesis = prm.q.outside_rate_hypothesis();
    env.closed_form = k1 * (prm.beta / s) * eps * q_log(1.0 / s, 1.0 / eps) + ((k1 - 1.0) / (q - 1.0)) * eps +
                      k2 * std::pow(eps, 1.0 / s);

    const double lc2 = 2.0 * prm.L * prm.C;
    double best = kInf;
    constexpr long kMaxN = 10'000'000;
    for (long n = 1; n <= kMaxN; ++n) {
        const double reg = eps * phi_q(prm.q, static_cast<double>(n));
        if (reg >= best)
            break;  // the quantization term is nonnegative, so no later n wins
        const double v = lc2 * std::pow(static_cast<double>(n), -1.0 / prm.beta) + reg;
        if (v < best) {
            best = v;
            env.best_n = n;
        }
    }
    env.integer_form = best;
    return env;
}

inline double kl_envelope(double eps, const RateParams& prm) {
    prm.check();
    if (!(eps > 0.0))
        throw UsageError("kl_envelope: eps must be positive");
    return prm.beta * eps * std::log(1.0 / eps) + 4.0 * prm.L * prm.C * eps;
}

// Constants of the lower envelope, evaluated in logs so q near 1 does not
// overflow 2^{t/(q-1)}.
inline RateConstants sharpness_constants(const RateParams& prm) {
    prm.check();
    if (prm.q.is_kl())
        throw UsageError("sharpness_constants: requires q > 1");
    const double q = prm.q.value();
    const double qm = q - 1.0;
    const double t = qm * prm.d + 1.0;
    const double log_bracket = std::log(qm) - std::log(t + qm) - (t / qm) * std::log(2.0) + (q / qm) * std::log(q / qm);
    const double kt1 = t / (t + qm) * std::exp((qm / t) * log_bracket);
    const double kt2 = std::exp(-(q / qm) * std::log(q)) + std::exp((t / qm) * std::log(2.0) - (q / qm) * std::log(q));
    return {kt1, kt2};
}

inline double sharpness_envelope(double eps, const RateParams& prm) {
    if (!(eps > 0.0))
        throw UsageError("sharpness_envelope: eps must be positive");
    const auto [kt1, kt2] = sharpness_constants(prm);
    const double t = (prm.q.value() - 1.0) * prm.d + 1.0;
    return kt1 * std::pow(eps, 1.0 / t) - kt2 * eps;
}

// start, start*ratio, ..., count points.
inline std::vector<double> geometric_grid(double start, double ratio, int count) {
    if (!(start > 0.0) || !(ratio > 0.0 && ratio < 1.0) || count < 1)
        throw UsageError("geometric_grid: need start > 0, 0 < ratio < 1, count >= 1");
    std::vector<double> g(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        g[static_cast<std::size_t>(k)] = start * std::pow(ratio, k);
    return g;
}

// Each grid point is solved independently from the same cold start, so the
// records do not depend on the thread count or completion order.
inline std::vector<RateRecord> rate_sweep(const RateInstance& inst, const RateParams& prm, std::span<const double> eps_grid,
                                          const SolveConfig& cfg, unsigned threads = 1) {
    prm.check();
    if (eps_grid.empty())
        throw UsageError("rate_sweep: empty grid");
    for (std::size_t k = 0; k < eps_grid.size(); ++k) {
        if (!(eps_grid[k] > 0.0))
            throw UsageError("rate_sweep: grid entries must be positive");
        if (k > 0 && !(eps_grid[k] < eps_grid[k - 1]))
            throw UsageError("rate_sweep: grid must be strictly descending");
    }
    const double ot = solve_exact(inst.cost, inst.mu, inst.nu).value;

    std::vector<RateRecord> out(eps_grid.size());
    auto one = [&](std::size_t k) {
        RateRecord& r = out[k];
        r.epsilon = eps_grid[k];
        r.kl_env = kl_envelope(r.epsilon, prm);
        if (prm.q.is_kl()) {
            r.upper_env = r.kl_env;
            r.lower_env = 0.0;
        } else {
            r.upper_env = upper_envelope(r.epsilon, prm).closed_form;
            r.lower_env = sharpness_envelope(r.epsilon, prm);
        }
        try {
            SolveConfig c = cfg;
            c.epsilon = r.epsilon;
            c.q = prm.q;
            const SolveReport rep = prm.q.is_kl() ? sinkhorn_kl(inst.cost, inst.mu, inst.nu, c)
                                                  : solve_dual(inst.cost, inst.mu, inst.nu, c);
            r.regularized_value = rep.primal_value;
            r.gap = rep.primal_value - ot;
            r.solver_gap = rep.relative_gap;
            r.iterations = static_cast<std::size_t>(rep.iterations);
            r.converged = rep.converged && rep.relative_gap <= cfg.tol_gap;
        } catch (const std::exception& e) {
            r.gap = std::numeric_limits<double>::quiet_NaN();
            r.solver_gap = std::numeric_limits<double>::quiet_NaN();
            r.converged = false;
            r.error = e.what();
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, eps_grid.size()));
    if (workers == 1) {
        for (std::size_t k = 0; k < eps_grid.size(); ++k)
            one(k);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t k = next++; k < eps_grid.size(); k = next++)
                one(k);
        });
    for (auto& t : pool)
        t.join();
    return out;
}

// Least-squares slope of log(gap) against log(eps) over converged records
// with a positive gap.
inline SlopeFit slope_fit(std::span<const RateRecord> records) {
    std::vector<double> xs, ys;
    for (const auto& r : records) {
        if (r.converged && r.gap > 0.0 && std::isfinite(r.gap) && r.epsilon > 0.0) {
            xs.push_back(std::log(r.epsilon));
            ys.push_back(std::log(r.gap));
        }
    }
    if (xs.size() < 4)
        throw UsageError("slope_fit: fewer than 4 usable records");
    const auto n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        mx += xs[k];
        my += ys[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sxx += (xs[k] - mx) * (xs[k] - mx);
        sxy += (xs[k] - mx) * (ys[k] - my);
        syy += (ys[k] - my) * (ys[k] - my);
    }
    if (sxx <= 0.0)
        throw UsageError("slope_fit: all records share one epsilon");
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ssr = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const double e = ys[k] - (f.intercept + f.slope * xs[k]);
        ssr += e * e;
    }
    f.r2 = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
    f.points = xs.size();
    return f;
}

// Records with eps >= eps_floor that leave [0.8 lower, 1.2 upper]; the lower
// side only counts where the lower envelope is positive.
inline std::size_t band_violations(std::span<const RateRecord> records, double eps_floor, double slack = 0.2) {
    std::size_t bad = 0;
    for (const auto& r : records) {
        if (r.epsilon < eps_floor)
            continue;
        if (!std::isfinite(r.gap) || r.gap > r.upper_env * (1.0 + slack) ||
            (r.lower_env > 0.0 && r.gap < r.lower_env * (1.0 - slack)))
            ++bad;
    }
    return bad;
}

}  // namespace tsot
