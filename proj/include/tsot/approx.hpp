#pragma once

// Quantization of a measure to n atoms and shadows of couplings.
//
// A shadow pushes a coupling pi in Pi(mu1, mu2) through the product kernel
// K1 (x) K2, where K_i disintegrates a coupling kappa_i in Pi(mu_i, mu~_i);
// the result lies in Pi(mu~1, mu~2). With W_p-optimal kappa_i the shadow
// moves pi by exactly (W_p(mu1, mu~1)^p + W_p(mu2, mu~2)^p)^{1/p} and never
// increases the divergence to the product of its marginals.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "tsot/errors.hpp"
#include "tsot/exact_ot.hpp"
#include "tsot/measures.hpp"
#include "tsot/qcalc.hpp"

namespace tsot {

struct QuantizationResult {
    DiscreteMeasure quantized;
    double achieved_wp = 0.0;
    std::size_t n = 0;
    double p = 1.0;
};

struct ShadowResult {
    Coupling shadow;
    double wp_change = 0.0;  // W_p(pi, shadow) on the product space
    double divergence_before = 0.0;
    double divergence_after = 0.0;
};

struct DoubleShadowResult {
    ShadowResult intermediate;   // in Pi(mu1, mu2^n)
    ShadowResult final;          // back in Pi(mu1, mu2)
    double wp_quantization = 0.0;        // W_p(mu2^n, mu2)
    double wp_final_to_original = 0.0;   // W_p(final, pi*)
    double divergence_bound = 0.0;       // phi_q(n)
};

struct DataProcessing {
    double lhs = 0.0;  // D_q(mu K, nu K)
    double rhs = 0.0;  // D_q(mu, nu)
};

namespace detail {

inline constexpr int kLloydStarts = 16;
inline constexpr int kLloydMaxIter = 100;

// Atoms sharing a coordinate vector are merged, weights summed.
inline DiscreteMeasure merged_measure(std::vector<std::vector<double>> pts, std::vector<double> w) {
    std::vector<std::size_t> order(pts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pts[a] < pts[b]; });
    std::vector<std::vector<double>> up;
    std::vector<double> uw;
    for (std::size_t k : order) {
        if (!up.empty() && up.back() == pts[k])
            uw.back() += w[k];
        else {
            up.push_back(pts[k]);
            uw.push_back(w[k]);
        }
    }
    const auto dim = static_cast<Eigen::Index>(up.front().size());
    Matrix a(static_cast<Eigen::Index>(up.size()), dim);
    Vector wv(static_cast<Eigen::Index>(up.size()));
    for (std::size_t s = 0; s < up.size(); ++s) {
        for (Eigen::Index t = 0; t < dim; ++t)
            a(static_cast<Eigen::Index>(s), t) = up[s][static_cast<std::size_t>(t)];
        wv[static_cast<Eigen::Index>(s)] = uw[s];
    }
    return {std::move(a), std::move(wv)};
}

struct Piece {
    double x;
    double mass;
};

// Minimizer of sum_k mass_k |x_k - r|^p over r for pieces sorted by x.
inline double cell_representative(const std::vector<Piece>& cell, double p) {
    const double total = std::accumulate(cell.begin(), cell.end(), 0.0, [](double s, const Piece& pc) { return s + pc.mass; });
    if (p == 2.0) {
        double s = 0.0;
        for (const auto& pc : cell)
            s += pc.mass * pc.x;
        return s / total;
    }
    if (p == 1.0) {
        // Weighted median; midpoint of the median interval when the half
        // mass falls exactly between two pieces.
        const double half = 0.5 * total;
        double cum = 0.0;
        for (std::size_t k = 0; k < cell.size(); ++k) {
            cum += cell[k].mass;
            if (cum >= half - 1e-12 * total) {
                if (std::abs(cum - half) <= 1e-12 * total && k + 1 < cell.size())
                    return 0.5 * (cell[k].x + cell[k + 1].x);
                return cell[k].x;
            }
        }
        return cell.back().x;
    }
    auto objective = [&](double r) {
        double s = 0.0;
        for (const auto& pc : cell)
            s += pc.mass * std::pow(std::abs(pc.x - r), p);
        return s;
    };
    double lo = cell.front().x, hi = cell.back().x;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = objective(x1), f2 = objective(x2);
    for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = objective(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = objective(x2);
        }
    }
    return 0.5 * (lo + hi);
}

// Equal-mass quantile cells on the line.
inline DiscreteMeasure quantize_line(const DiscreteMeasure& mu, std::size_t n, double p) {
    std::vector<Eigen::Index> order;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        if (mu.weight(i) > 0.0)
            order.push_back(i);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return mu.atom(a)[0] < mu.atom(b)[0]; });
    const double total = mu.weights().sum();
    const double per_cell = total / static_cast<double>(n);

    std::vector<std::vector<double>> reps;
    std::vector<double> masses;
    std::vector<Piece> cell;
    double cell_mass = 0.0;
    for (std::size_t s = 0; s < order.size(); ++s) {
        double left = mu.weight(order[s]);
        const double x = mu.atom(order[s])[0];
        while (left > 0.0) {
            const bool last_cell = reps.size() + 1 == n;
            const double room = last_cell ? left : per_cell - cell_mass;
            const double take = std::min(left, room);
            cell.push_back({x, take});
            cell_mass += take;
            left -= take;
            const bool full = !last_cell && cell_mass >= per_cell * (1.0 - 1e-12);
            if (full) {
                reps.push_back({cell_representative(cell, p)});
                masses.push_back(cell_mass);
                cell.clear();
                cell_mass = 0.0;
                if (left <= per_cell * 1e-12)
                    left = 0.0;  // rounding residue of a split atom
            }
        }
    }
    if (!cell.empty()) {
        reps.push_back({cell_representative(cell, p)});
        masses.push_back(cell_mass);
    }
    return merged_measure(std::move(reps), std::move(masses));
}

inline double dist_p(const auto& x, const auto& y, double p) {
    const double d = (x - y).norm();
    return p == 1.0 ? d : p == 2.0 ? d * d : std::pow(d, p);
}

// Weighted Lloyd iteration with k-means++ seeding, best of kLloydStarts.
inline DiscreteMeasure quantize_lloyd(const DiscreteMeasure& mu, std::size_t n, double p, std::uint64_t seed) {
    std::vector<Eigen::Index> pts;
    for (Eigen::Index i = 0; i < mu.size(); ++i)
        if (mu.weight(i) > 0.0)
            pts.push_back(i);
    const auto dim = mu.dim();
    const auto kn = static_cast<Eigen::Index>(n);

    double best_obj = std::numeric_limits<double>::infinity();
    Matrix best_centers;
    std::vector<Eigen::Index> best_assign;

    for (int start = 0; start < kLloydStarts; ++start) {
        std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(start));
        Matrix centers(kn, dim);
        std::vector<double> d2(pts.size(), std::numeric_limits<double>::infinity());
        std::vector<double> prob(pts.size());
        for (std::size_t s = 0; s < pts.size(); ++s)
            prob[s] = mu.weight(pts[s]);
        for (Eigen::Index k = 0; k < kn; ++k) {
            std::discrete_distribution<std::size_t> pick(prob.begin(), prob.end());
            const std::size_t chosen = pick(rng);
            centers.row(k) = mu.atom(pts[chosen]);
            for (std::size_t s = 0; s < pts.size(); ++s) {
                d2[s] = std::min(d2[s], (mu.atom(pts[s]) - centers.row(k)).squaredNorm());
                prob[s] = mu.weight(pts[s]) * d2[s];
            }
            if (std::accumulate(prob.begin(), prob.end(), 0.0) <= 0.0)
                for (std::size_t s = 0; s < pts.size(); ++s)
                    prob[s] = mu.weight(pts[s]);
        }

        std::vector<Eigen::Index> assign(pts.size(), -1);
        for (int it = 0; it < kLloydMaxIter; ++it) {
            bool changed = false;
            for (std::size_t s = 0; s < pts.size(); ++s) {
                Eigen::Index arg = 0;
                double bd = std::numeric_limits<double>::infinity();
                for (Eigen::Index k = 0; k < kn; ++k) {
                    const double dd = (mu.atom(pts[s]) - centers.row(k)).squaredNorm();
                    if (dd < bd) {
                        bd = dd;
                        arg = k;
                    }
                }
                if (assign[s] != arg) {
                    assign[s] = arg;
                    changed = true;
                }
            }
            if (!changed && it > 0)
                break;
            for (Eigen::Index k = 0; k < kn; ++k) {
                Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dim);
                double mass = 0.0;
                for (std::size_t s = 0; s < pts.size(); ++s)
                    if (assign[s] == k) {
                        sum += mu.weight(pts[s]) * mu.atom(pts[s]);
                        mass += mu.weight(pts[s]);
                    }
                if (mass <= 0.0)
                    continue;
                Eigen::RowVectorXd ctr = sum / mass;
                if (p == 1.0) {
                    // Weiszfeld steps toward the geometric median.
                    for (int w = 0; w < 50; ++w) {
                        Eigen::RowVectorXd num = Eigen::RowVectorXd::Zero(dim);
                        double den = 0.0;
                        for (std::size_t s = 0; s < pts.size(); ++s) {
                            if (assign[s] != k)
                                continue;
                            const double dd = std::max((mu.atom(pts[s]) - ctr).norm(), 1e-12);
                            num += mu.weight(pts[s]) * mu.atom(pts[s]) / dd;
                            den += mu.weight(pts[s]) / dd;
                        }
                        ctr = num / den;
                    }
                }
                centers.row(k) = ctr;
            }
        }
        double obj = 0.0;
        for (std::size_t s = 0; s < pts.size(); ++s)
            obj += mu.weight(pts[s]) * dist_p(mu.atom(pts[s]), centers.row(assign[s]), p);
        if (obj < best_obj) {
            best_obj = obj;
            best_centers = centers;
            best_assign = assign;
        }
    }

    std::vector<std::vector<double>> reps;
    std::vector<double> masses;
    for (Eigen::Index k = 0; k < kn; ++k) {
        double mass = 0.0;
        for (std::size_t s = 0; s < pts.size(); ++s)
            if (best_assign[s] == k)
                mass += mu.weight(pts[s]);
        if (mass <= 0.0)
            continue;
        reps.emplace_back(best_centers.row(k).data(), best_centers.row(k).data() + dim);
        masses.push_back(mass);
    }
    return merged_measure(std::move(reps), std::move(masses));
}

inline void require_same_weights(const DiscreteMeasure& a, const DiscreteMeasure& b, const char* what) {
    if (a.size() != b.size() || (a.weights() - b.weights()).cwiseAbs().maxCoeff() > kMarginalTolerance)
        throw UsageError(std::string("shadow: ") + what);
}

}  // namespace detail

// n-point quantization with its achieved W_p error. On the line the
// quantizer uses equal-mass quantile cells with the W_p-optimal point of
// each cell; in higher dimension a multi-start Lloyd iteration.
inline QuantizationResult quantize(const DiscreteMeasure& mu, std::size_t n, double p, std::uint64_t seed = 0) {
    if (n < 1)
        throw UsageError("quantize: n must be >= 1");
    if (!(p >= 1.0))
        throw UsageError("quantize: order must be >= 1");
    const auto support = static_cast<std::size_t>((mu.weights().array() > 0.0).count());
    if (n >= support)
        return {mu, 0.0, n, p};
    DiscreteMeasure q = mu.dim() == 1 ? detail::quantize_line(mu, n, p) : detail::quantize_lloyd(mu, n, p, seed);
    const double w = wasserstein_p(mu, q, p);
    return {std::move(q), w, n, p};
}

// Shadow of pi through kappa1 in Pi(mu1, mu~1) and kappa2 in Pi(mu2, mu~2).
// wp_change is only computed when p > 0 (it needs an OT solve on the
// product space).
inline ShadowResult shadow(const Coupling& pi, const Coupling& kappa1, const Coupling& kappa2, QParam q, double p = 1.0) {
    detail::require_same_weights(kappa1.left(), pi.left(), "kappa1 does not start from the first marginal of pi");
    detail::require_same_weights(kappa2.left(), pi.right(), "kappa2 does not start from the second marginal of pi");
    const Matrix k1 = disintegrate(kappa1).kernel.rows();
    const Matrix k2 = disintegrate(kappa2).kernel.rows();
    Matrix w = k1.transpose() * pi.matrix() * k2;
    Coupling out(std::move(w), kappa1.right(), kappa2.right());
    ShadowResult r{std::move(out), 0.0, coupling_divergence(q, pi), 0.0};
    r.divergence_after = coupling_divergence(q, r.shadow);
    if (p > 0.0)
        r.wp_change = coupling_wasserstein_p(pi, r.shadow, p);
    return r;
}

// Shadow of pi* onto Pi(mu1, mu2^n) and back onto Pi(mu1, mu2), with the
// W_p-optimal coupling of mu2 and mu2^n from the exact solver.
inline DoubleShadowResult double_shadow(const Coupling& pi_star, const DiscreteMeasure& mu2_quant, double p, QParam q) {
    const DiscreteMeasure& mu1 = pi_star.left();
    const DiscreteMeasure& mu2 = pi_star.right();
    const Coupling kappa1 = Coupling::identity(mu1);
    const CostMatrix c = build_cost(mu2, mu2_quant, CostFamily::lp_power, p);
    const ExactSolution opt = solve_exact(c, mu2, mu2_quant);
    const Coupling kappa2 = opt.coupling;

    ShadowResult mid = shadow(pi_star, kappa1, kappa2, q, p);
    ShadowResult fin = shadow(mid.shadow, kappa1, kappa2.transposed(), q, p);
    const double wq = std::pow(std::max(opt.value, 0.0), 1.0 / p);
    const double back = coupling_wasserstein_p(fin.shadow, pi_star, p);
    const auto n = static_cast<double>((mu2_quant.weights().array() > 0.0).count());
    return {std::move(mid), std::move(fin), wq, back, phi_q(q, n)};
}

inline DataProcessing data_processing_check(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                                            const StochasticKernel& k, QParam q) {
    if (mu.size() != nu.size())
        throw UsageError("data_processing_check: measures are not on a common atom enumeration");
    const DiscreteMeasure mk = push_kernel(mu, k);
    const DiscreteMeasure nk = push_kernel(nu, k);
    return {tsallis_divergence(q, mk, nk), tsallis_divergence(q, mu, nu)};
}

}  // namespace tsot
