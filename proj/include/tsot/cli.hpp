#pragma once

// Command-line front end: solve, sweep, compare, quantize, shadow-check.
//
// Exit codes: 0 success, 1 usage or validation error, 2 numerical failure,
// 3 solver did not converge.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>
#include "tsot/approx.hpp"
#include "tsot/errors.hpp"
#include "tsot/exact_ot.hpp"
#include "tsot/io.hpp"
#include "tsot/measures.hpp"
#include "tsot/qcalc.hpp"
#include "tsot/rates.hpp"
#include "tsot/solver.hpp"

namespace tsot::cli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kNotConverged = 3 };

namespace detail {

inline DiscreteMeasure load_checked(const std::string& path, const char* role) {
    DiscreteMeasure mu = io::read_measure(path);
    const Diagnostics d = validate(mu);
    if (!d.ok())
        throw UsageError(std::string(role) + " (" + path + ") is not a valid probability measure:\n" + d.summary());
    return mu;
}

inline CostMatrix make_cost(const std::string& name, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    if (name == "l1")
        return build_cost(mu, nu, CostFamily::l1_sum);
    if (name == "l2sq")
        return build_cost(mu, nu, CostFamily::lp_power, 2.0);
    throw UsageError("unknown cost '" + name + "' (expected l1 or l2sq)");
}

inline std::vector<double> parse_grid(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':'))
        parts.push_back(item);
    if (parts.size() != 3)
        throw UsageError("--grid expects start:ratio:count, got '" + spec + "'");
    try {
        return geometric_grid(std::stod(parts[0]), std::stod(parts[1]), std::stoi(parts[2]));
    } catch (const std::logic_error& e) {
        if (dynamic_cast<const UsageError*>(&e))
            throw;
        throw UsageError("--grid expects start:ratio:count, got '" + spec + "'");
    }
}

inline std::string q_label(double q) {
    std::array<char, 32> buf{};
    std::snprintf(buf.data(), buf.size(), "%g", q);
    return buf.data();
}

// Instance options shared by sweep and compare.
struct InstanceOptions {
    std::string mu_path, nu_path, cost = "l1";
    std::size_t uniform = 0;

    void attach(CLI::App* app) {
        app->add_option("--mu", mu_path, "source measure JSON");
        app->add_option("--nu", nu_path, "target measure JSON");
        app->add_option("--uniform", uniform, "use the N-point uniform grid on [0,1] for both marginals");
        app->add_option("--cost", cost, "cost family: l1 | l2sq")->capture_default_str();
    }

    RateInstance load(io::RunManifest& man) const {
        DiscreteMeasure mu = DiscreteMeasure::from_weights(Vector::Ones(1));
        DiscreteMeasure nu = mu;
        if (uniform > 0) {
            if (!mu_path.empty() || !nu_path.empty())
                throw UsageError("--uniform excludes --mu/--nu");
            mu = nu = DiscreteMeasure::uniform_grid(uniform);
        } else {
            if (mu_path.empty() || nu_path.empty())
                throw UsageError("give --mu and --nu, or --uniform N");
            mu = load_checked(mu_path, "--mu");
            nu = load_checked(nu_path, "--nu");
            man.add_input(mu_path);
            man.add_input(nu_path);
        }
        CostMatrix c = make_cost(cost, mu, nu);
        return {std::move(mu), std::move(nu), std::move(c)};
    }

    void record(json& cfg) const {
        cfg["mu"] = mu_path;
        cfg["nu"] = nu_path;
        cfg["uniform"] = uniform;
        cfg["cost"] = cost;
    }
};

inline unsigned resolve_threads(int flag) {
    if (flag > 0)
        return static_cast<unsigned>(flag);
    if (const char* env = std::getenv("TSOT_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0)
            return static_cast<unsigned>(v);
    }
    return 1;
}

inline json records_json_summary(const std::vector<RateRecord>& recs, double eps_floor) {
    json s;
    json grid = json::array();
    std::size_t conv = 0;
    for (const auto& r : recs) {
        grid.push_back(r.epsilon);
        conv += r.converged ? 1 : 0;
    }
    s["grid"] = std::move(grid);
    s["points"] = recs.size();
    s["converged_points"] = conv;
    s["eps_floor"] = eps_floor;
    s["band_violations"] = band_violations(recs, eps_floor);
    try {
        const SlopeFit f = slope_fit(recs);
        s["slope"] = f.slope;
        s["r2"] = f.r2;
        s["fit_points"] = f.points;
    } catch (const UsageError& e) {
        s["slope"] = nullptr;
        s["r2"] = nullptr;
        s["fit_error"] = e.what();
    }
    return s;
}

inline void finish_manifest(io::RunManifest& man) { man.timestamp = io::utc_timestamp(); }

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Tsallis-regularized optimal transport toolkit", "tsot"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(io::kToolVersion));

    // solve ------------------------------------------------------------------
    auto* solve = app.add_subcommand("solve", "solve one regularized (or, with --epsilon 0, exact) transport problem");
    double s_q = 2.0, s_eps = -1.0, s_tol = 1e-6;
    int s_iter = 10000;
    std::string s_cost = "l1", s_mu, s_nu, s_out, s_coupling, s_method = "dual";
    solve->add_option("--q", s_q, "Tsallis order q >= 1 (1 = KL)")->capture_default_str();
    solve->add_option("--epsilon", s_eps, "regularization strength; 0 solves the unregularized problem")->required();
    solve->add_option("--cost", s_cost, "cost family: l1 | l2sq")->capture_default_str();
    solve->add_option("--mu", s_mu, "source measure JSON")->required();
    solve->add_option("--nu", s_nu, "target measure JSON")->required();
    solve->add_option("--tol-gap", s_tol, "relative duality gap target")->capture_default_str();
    solve->add_option("--max-iter", s_iter, "outer iteration limit")->capture_default_str();
    solve->add_option("--method", s_method, "dual | primal | sinkhorn")->capture_default_str();
    solve->add_option("--out", s_out, "report JSON")->required();
    solve->add_option("--coupling-out", s_coupling, "coupling CSV (default: <out>.coupling.csv)");

    // sweep ------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "epsilon sweep of OT_{q,eps} - OT against the rate envelopes");
    double w_q = 2.0, w_beta = 1.0, w_L = 1.0, w_C = 0.25, w_tol = 1e-6, w_floor = -1.0;
    int w_d = 1, w_iter = 10000, w_threads = 0;
    std::string w_grid = "0.1:0.5:7", w_out, w_summary;
    detail::InstanceOptions w_inst;
    sweep->add_option("--q", w_q, "Tsallis order q >= 1 (1 = KL via Sinkhorn)")->capture_default_str();
    sweep->add_option("--beta", w_beta, "quantization exponent")->capture_default_str();
    sweep->add_option("--d", w_d, "dimension used by the lower envelope")->capture_default_str();
    sweep->add_option("--L", w_L, "cost stability constant")->capture_default_str();
    sweep->add_option("--C", w_C, "quantization constant")->capture_default_str();
    sweep->add_option("--grid", w_grid, "geometric epsilon grid start:ratio:count")->capture_default_str();
    sweep->add_option("--tol-gap", w_tol, "relative duality gap target")->capture_default_str();
    sweep->add_option("--max-iter", w_iter, "outer iteration limit per point")->capture_default_str();
    sweep->add_option("--threads", w_threads, "worker threads (default: TSOT_THREADS or 1)");
    sweep->add_option("--band-floor", w_floor, "smallest epsilon checked against the envelopes (default 10/N)");
    sweep->add_option("--out", w_out, "records CSV")->required();
    sweep->add_option("--summary", w_summary, "summary JSON (default: <out>.summary.json)");
    w_inst.attach(sweep);

    // compare ----------------------------------------------------------------
    auto* compare = app.add_subcommand("compare", "paired epsilon sweeps for several orders q");
    std::vector<double> c_qs;
    double c_tol = 1e-6, c_beta = 1.0, c_L = 1.0, c_C = 0.25;
    int c_iter = 10000, c_threads = 0;
    std::string c_grid = "0.1:0.5:7", c_out;
    detail::InstanceOptions c_inst;
    compare->add_option("--q", c_qs, "Tsallis order, repeatable")->required();
    compare->add_option("--beta", c_beta, "quantization exponent")->capture_default_str();
    compare->add_option("--L", c_L, "cost stability constant")->capture_default_str();
    compare->add_option("--C", c_C, "quantization constant")->capture_default_str();
    compare->add_option("--grid", c_grid, "geometric epsilon grid start:ratio:count")->capture_default_str();
    compare->add_option("--tol-gap", c_tol, "relative duality gap target")->capture_default_str();
    compare->add_option("--max-iter", c_iter, "outer iteration limit per point")->capture_default_str();
    compare->add_option("--threads", c_threads, "worker threads (default: TSOT_THREADS or 1)");
    compare->add_option("--out", c_out, "paired CSV")->required();
    c_inst.attach(compare);

    // quantize ---------------------------------------------------------------
    auto* quant = app.add_subcommand("quantize", "n-point quantization of a measure");
    std::string z_in, z_out;
    std::size_t z_n = 0;
    double z_p = 1.0;
    std::uint64_t z_seed = 0;
    quant->add_option("--in", z_in, "input measure JSON")->required();
    quant->add_option("--out", z_out, "quantized measure JSON")->required();
    quant->add_option("--n", z_n, "number of atoms")->required();
    quant->add_option("--p", z_p, "Wasserstein order")->capture_default_str();
    quant->add_option("--seed", z_seed, "seed of the multi-start Lloyd iteration (d >= 2)")->capture_default_str();

    // shadow-check -------------------------------------------------------------
    auto* shadow_cmd = app.add_subcommand("shadow-check", "double-shadow diagnostics for an optimal coupling");
    std::string h_mu, h_nu, h_out, h_cost = "l1";
    std::size_t h_n = 0;
    double h_p = 1.0, h_q = 2.0, h_eps = 0.0;
    std::uint64_t h_seed = 0;
    shadow_cmd->add_option("--mu", h_mu, "first marginal JSON")->required();
    shadow_cmd->add_option("--nu", h_nu, "second marginal JSON")->required();
    shadow_cmd->add_option("--n", h_n, "atoms in the quantized second marginal")->required();
    shadow_cmd->add_option("--p", h_p, "Wasserstein order")->capture_default_str();
    shadow_cmd->add_option("--q", h_q, "Tsallis order for the divergence diagnostics")->capture_default_str();
    shadow_cmd->add_option("--cost", h_cost, "cost defining the coupling: l1 | l2sq")->capture_default_str();
    shadow_cmd->add_option("--epsilon", h_eps, "0 shadows the exact optimum, > 0 the regularized one")
        ->capture_default_str();
    shadow_cmd->add_option("--seed", h_seed, "quantization seed")->capture_default_str();
    shadow_cmd->add_option("--out", h_out, "diagnostics JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0)
            return app.exit(e, out, err);
        err << e.what() << "\n\n";
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kUsage;
    }

    try {
        io::RunManifest man;
        if (*solve) {
            man.subcommand = "solve";
            const QParam q(s_q);
            if (s_eps < 0.0)
                throw UsageError("--epsilon must be >= 0");
            if (s_coupling.empty())
                s_coupling = s_out + ".coupling.csv";
            const DiscreteMeasure mu = detail::load_checked(s_mu, "--mu");
            const DiscreteMeasure nu = detail::load_checked(s_nu, "--nu");
            man.add_input(s_mu);
            man.add_input(s_nu);
            man.config = {{"q", s_q},       {"epsilon", s_eps},   {"cost", s_cost},         {"tol_gap", s_tol},
                          {"max_iter", s_iter}, {"method", s_method}, {"coupling_out", s_coupling}};
            const CostMatrix c = detail::make_cost(s_cost, mu, nu);

            json rep;
            Coupling pi = Coupling::identity(mu);
            bool converged = true;
            if (s_eps == 0.0) {
                const TransportPlan plan = solve_transport(c.values, mu.weights(), nu.weights());
                pi = Coupling(plan.flow, mu, nu);
                const double primal = transport_cost(pi, c);
                const double dual = plan.u.dot(mu.weights()) + plan.v.dot(nu.weights());
                rep = {{"method", "exact"},
                       {"primal_value", primal},
                       {"dual_value", dual},
                       {"gap", primal - dual},
                       {"relative_gap", relative_gap(primal, dual, 1.0)},
                       {"iterations", plan.pivots},
                       {"converged", true},
                       {"marginal_defect", pi.marginal_defect()}};
            } else {
                SolveConfig cfg;
                cfg.epsilon = s_eps;
                cfg.q = q;
                cfg.tol_gap = s_tol;
                cfg.max_iter = s_iter;
                SolveReport r = s_method == "dual"       ? solve_dual(c, mu, nu, cfg)
                                : s_method == "primal"   ? solve_primal(c, mu, nu, cfg)
                                : s_method == "sinkhorn" ? sinkhorn_kl(c, mu, nu, cfg)
                                                         : throw UsageError("unknown --method '" + s_method + "'");
                converged = r.converged;
                pi = r.coupling;
                rep = {{"method", s_method},
                       {"primal_value", r.primal_value},
                       {"dual_value", r.dual_value},
                       {"gap", r.gap},
                       {"relative_gap", r.relative_gap},
                       {"iterations", r.iterations},
                       {"converged", r.converged},
                       {"marginal_defect", r.marginal_defect}};
            }
            rep["coupling_csv"] = s_coupling;
            io::write_atomic(s_coupling, io::coupling_to_csv(pi));
            detail::finish_manifest(man);
            rep["manifest"] = man.to_json();
            io::write_atomic(s_out, rep.dump(2) + "\n");
            out << "primal " << io::format_double(rep["primal_value"].get<double>()) << " gap "
                << io::format_double(rep["relative_gap"].get<double>()) << (converged ? "" : " (not converged)")
                << "\n";
            return converged ? kOk : kNotConverged;
        }

        if (*sweep) {
            man.subcommand = "sweep";
            RateParams prm;
            prm.q = QParam(w_q);
            prm.beta = w_beta;
            prm.L = w_L;
            prm.C = w_C;
            prm.d = w_d;
            prm.check();
            const auto grid = detail::parse_grid(w_grid);
            const RateInstance inst = w_inst.load(man);
            const double floor = w_floor > 0.0 ? w_floor : 10.0 / static_cast<double>(inst.nu.size());
            const unsigned threads = detail::resolve_threads(w_threads);
            man.config = {{"q", w_q},         {"beta", w_beta},  {"d", w_d},           {"L", w_L},
                          {"C", w_C},         {"grid", w_grid},  {"tol_gap", w_tol},   {"max_iter", w_iter},
                          {"band_floor", floor}};
            w_inst.record(man.config);
            SolveConfig cfg;
            cfg.tol_gap = w_tol;
            cfg.max_iter = w_iter;
            const auto recs = rate_sweep(inst, prm, grid, cfg, threads);
            if (w_summary.empty())
                w_summary = w_out + ".summary.json";
            detail::finish_manifest(man);
            io::write_atomic(w_out, io::records_to_csv(recs));
            io::write_atomic(w_out + ".manifest.json", man.to_json().dump(2) + "\n");
            json summary = detail::records_json_summary(recs, floor);
            summary["manifest"] = man.to_json();
            io::write_atomic(w_summary, summary.dump(2) + "\n");
            bool all = true;
            for (const auto& r : recs)
                all = all && r.converged;
            out << "points " << recs.size() << " band violations " << summary["band_violations"].get<std::size_t>();
            if (!summary["slope"].is_null())
                out << " slope " << io::format_double(summary["slope"].get<double>()) << " r2 "
                    << io::format_double(summary["r2"].get<double>());
            out << "\n";
            return all ? kOk : kNotConverged;
        }

        if (*compare) {
            man.subcommand = "compare";
            const auto grid = detail::parse_grid(c_grid);
            const RateInstance inst = c_inst.load(man);
            const unsigned threads = detail::resolve_threads(c_threads);
            man.config = {{"q", c_qs},        {"beta", c_beta},     {"L", c_L},          {"C", c_C},
                          {"grid", c_grid},   {"tol_gap", c_tol},   {"max_iter", c_iter}};
            c_inst.record(man.config);
            SolveConfig cfg;
            cfg.tol_gap = c_tol;
            cfg.max_iter = c_iter;
            std::vector<std::vector<RateRecord>> runs;
            for (double qv : c_qs) {
                RateParams prm;
                prm.q = QParam(qv);
                prm.beta = c_beta;
                prm.L = c_L;
                prm.C = c_C;
                runs.push_back(rate_sweep(inst, prm, grid, cfg, threads));
            }
            std::ostringstream os;
            os << "epsilon";
            for (double qv : c_qs)
                os << ",gap_q" << detail::q_label(qv) << ",solver_gap_q" << detail::q_label(qv) << ",converged_q"
                   << detail::q_label(qv);
            if (c_qs.size() == 2)
                os << ",ratio_q" << detail::q_label(c_qs[1]) << "_over_q" << detail::q_label(c_qs[0]);
            os << '\n';
            bool all = true;
            for (std::size_t k = 0; k < grid.size(); ++k) {
                os << io::format_double(grid[k]);
                for (const auto& run : runs) {
                    os << ',' << io::format_double(run[k].gap) << ',' << io::format_double(run[k].solver_gap) << ','
                       << (run[k].converged ? 1 : 0);
                    all = all && run[k].converged;
                }
                if (runs.size() == 2)
                    os << ',' << io::format_double(runs[1][k].gap / runs[0][k].gap);
                os << '\n';
            }
            detail::finish_manifest(man);
            io::write_atomic(c_out, os.str());
            io::write_atomic(c_out + ".manifest.json", man.to_json().dump(2) + "\n");
            out << "points " << grid.size() << " orders " << c_qs.size() << "\n";
            return all ? kOk : kNotConverged;
        }

        if (*quant) {
            man.subcommand = "quantize";
            const DiscreteMeasure mu = detail::load_checked(z_in, "--in");
            man.add_input(z_in);
            man.config = {{"n", z_n}, {"p", z_p}, {"seed", z_seed}};
            const QuantizationResult r = quantize(mu, z_n, z_p, z_seed);
            json body = io::measure_to_json(r.quantized);
            body["achieved_wp"] = r.achieved_wp;
            body["n"] = r.n;
            body["p"] = r.p;
            detail::finish_manifest(man);
            body["manifest"] = man.to_json();
            io::write_atomic(z_out, body.dump(2) + "\n");
            out << "atoms " << r.quantized.size() << " W_p " << io::format_double(r.achieved_wp) << "\n";
            return kOk;
        }

        if (*shadow_cmd) {
            man.subcommand = "shadow-check";
            const QParam q(h_q);
            const DiscreteMeasure mu = detail::load_checked(h_mu, "--mu");
            const DiscreteMeasure nu = detail::load_checked(h_nu, "--nu");
            man.add_input(h_mu);
            man.add_input(h_nu);
            man.config = {{"n", h_n}, {"p", h_p}, {"q", h_q}, {"cost", h_cost}, {"epsilon", h_eps}, {"seed", h_seed}};
            const CostMatrix c = detail::make_cost(h_cost, mu, nu);
            Coupling pi_star = Coupling::identity(mu);
            if (h_eps == 0.0) {
                pi_star = solve_exact(c, mu, nu).coupling;
            } else {
                SolveConfig cfg;
                cfg.epsilon = h_eps;
                cfg.q = q;
                const SolveReport r = q.is_kl() ? sinkhorn_kl(c, mu, nu, cfg) : solve_dual(c, mu, nu, cfg);
                if (!r.converged)
                    throw NumericalError("regularized coupling did not converge");
                pi_star = r.coupling;
            }
            const QuantizationResult quantized = quantize(nu, h_n, h_p, h_seed);
            const DoubleShadowResult ds = double_shadow(pi_star, quantized.quantized, h_p, q);
            const double residual =
                std::abs(std::pow(ds.intermediate.wp_change, h_p) - std::pow(ds.wp_quantization, h_p));
            json body = {
                {"atoms", quantized.quantized.size()},
                {"wp_quantization", ds.wp_quantization},
                {"wp_identity_residual", residual},
                {"divergence_before", ds.intermediate.divergence_before},
                {"divergence_intermediate", ds.intermediate.divergence_after},
                {"divergence_final", ds.final.divergence_after},
                {"divergence_bound", ds.divergence_bound},
                {"wp_final_to_original", ds.wp_final_to_original},
                {"checks",
                 {{"wp_identity", residual <= 1e-6},
                  {"divergence_bound", ds.intermediate.divergence_after <= ds.divergence_bound + 1e-9},
                  {"monotone", ds.final.divergence_after <= ds.final.divergence_before + 1e-9},
                  {"round_trip", ds.wp_final_to_original <= 2.0 * ds.wp_quantization + 1e-9}}}};
            detail::finish_manifest(man);
            body["manifest"] = man.to_json();
            io::write_atomic(h_out, body.dump(2) + "\n");
            out << "wp residual " << io::format_double(residual) << " divergence " << io::format_double(ds.intermediate.divergence_after)
                << " <= " << io::format_double(ds.divergence_bound) << "\n";
            return kOk;
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    }
    return kUsage;
}

}  // namespace tsot::cli
