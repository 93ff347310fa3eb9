#pragma once

#include "wed/baseline.hpp"
#include "wed/experiments/commands.hpp"
#include "wed/experiments/config.hpp"
#include "wed/fbsde.hpp"
#include "wed/moreau.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/wed.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace wed::experiments {

struct PropertyResult {
    std::string name;
    bool pass = false;
    double measured = 0.0;
    double tolerance = 0.0;
};

namespace detail {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

inline PropertyResult tree_calculus(const RunConfig& cfg)
{
    const TreePtr tree = build_tree(cfg.n_steps, cfg.horizon, 1, cfg.node_cap);
    std::mt19937_64 rng(cfg.seed + 11);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        AdaptedProcess g(tree, 1, TimeSupport::integrand);
        for (double& x : g.values()) {
            x = normal(rng);
        }
        const AdaptedProcess m = stochastic_integral(g);
        for (int n = 0; n < tree->n_steps(); ++n) {
            const LevelSlice back = conditional_expectation(m, n + 1, n);
            worst = std::max(worst, max_abs_diff(back.values, m.level_values(n)));
        }
        const int N = tree->n_steps();
        double lhs = 0.0;
        for (double x : m.level_values(N)) {
            lhs += x * x;
        }
        lhs *= tree->node_prob(N);
        double rhs = 0.0;
        for (int n = 0; n < N; ++n) {
            double s = 0.0;
            for (double x : g.level_values(n)) {
                s += x * x;
            }
            rhs += tree->dt() * tree->node_prob(n) * s;
        }
        worst = std::max(worst, std::abs(lhs - rhs));
        const MartingaleRepresentation rep = martingale_representation(tree, slice(m, N));
        worst = std::max(worst, std::abs(rep.mean[0]));
        worst = std::max(worst, max_abs_diff(rep.integrand.values(), g.values()));
    }
    return {"tree calculus (martingale, isometry, representation)", worst <= 1e-10, worst, 1e-10};
}

inline PropertyResult moreau_suite(const RunConfig& cfg, const EnergyModel& model, const Grid1D& grid)
{
    std::mt19937_64 rng(cfg.seed + 23);
    double worst = 0.0;
    for (double lambda : {1e-1, 1e-2}) {
        const YosidaParams params{lambda, cfg.inner_tol, 200};
        for (int trial = 0; trial < 10; ++trial) {
            const Field w1 = random_smooth_field(grid, rng, 1.5);
            const Field w2 = random_smooth_field(grid, rng, 1.5);
            const ProxPoint p1 = prox_point(model, params, 0.5, w1, grid);
            const ProxPoint p2 = prox_point(model, params, 0.5, w2, grid);
            Field dw(w1.size()), dJ(w1.size()), dA(w1.size()), gap(w1.size());
            for (std::size_t i = 0; i < w1.size(); ++i) {
                dw[i] = w1[i] - w2[i];
                dJ[i] = p1.J[i] - p2.J[i];
                dA[i] = p1.A[i] - p2.A[i];
            }
            const double nw = norm_H(dw, grid);
            worst = std::max(worst, norm_H(dJ, grid) - nw * (1.0 + 1e-8));
            worst = std::max(worst, lambda * norm_H(dA, grid) - nw * (1.0 + 1e-8));
            const Field a = a_apply(model, 0.5, p1.J, grid);
            for (std::size_t i = 0; i < a.size(); ++i) {
                gap[i] = a[i] - p1.A[i];
            }
            worst = std::max(worst, lambda * norm_H(gap, grid) - 1e-8);
            worst = std::max(worst, p1.envelope - phi_value(model, 0.5, w1, grid));
        }
    }
    return {"moreau-yosida suite", worst <= 0.0, std::max(worst, 0.0), 0.0};
}

/// Relative error of the analytic gradient against central differences, per coordinate.
inline double gradient_error(const WedProblem& problem, double lambda, const TrajectoryVars& x, bool inject_bug)
{
    TrajectoryVars g = metric_to_partials(problem, wed_gradient(problem, x, lambda));
    if (inject_bug) {
        for (double& v : g.G.values()) {
            v *= 1.01;
        }
    }
    const double step = 1e-5;
    double num = 0.0, den = 0.0;
    auto probe = [&](AdaptedProcess TrajectoryVars::*part, std::span<const double> analytic) {
        const std::size_t n = (x.*part).values().size();
        for (std::size_t i = 0; i < n; ++i) {
            TrajectoryVars plus = x, minus = x;
            (plus.*part).values()[i] += step;
            (minus.*part).values()[i] -= step;
            const double fd = (wed_value(problem, plus, lambda) - wed_value(problem, minus, lambda)) / (2.0 * step);
            num += (fd - analytic[i]) * (fd - analytic[i]);
            den += fd * fd;
        }
    };
    probe(&TrajectoryVars::v, g.v.values());
    probe(&TrajectoryVars::G, g.G.values());
    return std::sqrt(num / std::max(den, 1e-300));
}

} // namespace detail

/// The property suite behind `wed check`; each entry names one invariant.
inline std::vector<PropertyResult> run_property_suite(const RunConfig& cfg)
{
    const Setup s = make_setup(cfg);
    std::vector<PropertyResult> out;
    out.push_back(detail::tree_calculus(cfg));
    out.push_back(detail::moreau_suite(cfg, s.model, s.grid));

    const WedProblem problem = make_wed_problem(s, cfg, cfg.epsilon);
    {
        double worst = 0.0;
        for (int trial = 0; trial < 3; ++trial) {
            const TrajectoryVars x = random_vars(problem, cfg.seed + 100 + trial, 0.5);
            worst = std::max(worst, detail::gradient_error(problem, 1e-1, x, cfg.inject_gradient_bug));
        }
        out.push_back({"gradient check vs finite differences", worst <= 1e-6, worst, 1e-6});
    }
    {
        const BaselineSolution ref = solve_reference(s.tree, s.grid, s.model, s.u0, s.B, cfg.inner_tol);
        const BaselineEnergyReport e = baseline_energy_identity(ref, s.B, s.grid);
        out.push_back({"baseline energy identity", e.gap <= 1e-8, e.gap, 1e-8});
    }
    const double lambda = cfg.lambda_schedule.values().back();
    {
        const FbState state = solve_fb(problem, lambda, 1e-10, cfg.picard_max);
        const EnergyIdentityReport e = energy_identity_check(problem, lambda, state);
        out.push_back({"forward-backward energy identity", e.gap <= 1e-8, e.gap, 1e-8});
    }
    {
        MinimizeOptions opt = minimize_options(cfg);
        const SolveReport rep = minimize(problem, cfg.lambda_schedule.values(), opt);
        const double tol = 5.0 * (opt.outer_tol + cfg.inner_tol / lambda);
        const double r = residual_el(problem, lambda, rep.vars);
        out.push_back({"minimizer solves the Euler-Lagrange system", rep.converged && r <= tol, r, tol});
    }
    return out;
}

inline int cmd_check(const RunConfig& cfg)
{
    const std::vector<PropertyResult> results = run_property_suite(cfg);
    bool all = true;
    for (const auto& r : results) {
        std::printf("%-4s %-48s measured=%.3e tol=%.1e\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.measured,
                    r.tolerance);
        all = all && r.pass;
    }
    if (!all) {
        for (const auto& r : results) {
            if (!r.pass) {
                std::cerr << "property failed: " << r.name << '\n';
            }
        }
        return exit_property;
    }
    return exit_ok;
}

} // namespace wed::experiments
