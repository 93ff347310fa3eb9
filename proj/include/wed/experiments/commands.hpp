#pragma once

#include "wed/baseline.hpp"
#include "wed/experiments/config.hpp"
#include "wed/experiments/csv.hpp"
#include "wed/fbsde.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/wed.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace wed::experiments {

enum ExitCode { exit_ok = 0, exit_property = 1, exit_config = 2, exit_solver = 3 };

struct Setup {
    TreePtr tree;
    Grid1D grid;
    EnergyModel model;
    Field u0;
    AdaptedProcess B;
};

inline Setup make_setup(const RunConfig& cfg)
{
    Setup s{build_tree(cfg.n_steps, cfg.horizon, cfg.n_channels, cfg.node_cap),
            Grid1D(static_cast<std::size_t>(cfg.n_interior)), make_model(cfg), {}, {}};
    s.u0 = make_initial_datum(cfg, s.grid);
    s.B = make_noise(cfg, s.tree, s.grid);
    return s;
}

inline WedProblem make_wed_problem(const Setup& s, const RunConfig& cfg, double epsilon)
{
    WedProblem problem =
        make_problem(s.tree, s.grid, s.model, epsilon, s.B, prepare_initial_datum(s.u0, epsilon, s.model, s.grid));
    problem.inner_tol = cfg.inner_tol;
    return problem;
}

inline MinimizeOptions minimize_options(const RunConfig& cfg)
{
    MinimizeOptions opt;
    opt.outer_tol = cfg.outer_tol;
    opt.max_iter = cfg.max_iter;
    return opt;
}

inline std::filesystem::path output_path(const RunConfig& cfg, const char* name)
{
    std::filesystem::create_directories(cfg.output_dir);
    return std::filesystem::path(cfg.output_dir) / name;
}

/// solution.csv rows (level,node,dof,u,v,G...); v is the drift of the step ending at the node
/// (zero at the root), G zero on the leaf level.
inline void write_solution(const RunConfig& cfg, const WedProblem& problem, const AdaptedProcess& u,
                           const TrajectoryVars& vars)
{
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const std::size_t K = problem.K();
    CsvWriter csv(output_path(cfg, "solution.csv"));
    csv.cell("level").cell("node").cell("dof").cell("u").cell("v");
    if (K == 1) {
        csv.cell("G");
    } else {
        for (std::size_t k = 0; k < K; ++k) {
            csv.cell("G_" + std::to_string(k));
        }
    }
    csv.end_row();
    for (int n = 0; n <= tree.n_steps(); ++n) {
        for (std::size_t i = 0; i < tree.level_size(n); ++i) {
            for (std::size_t d = 0; d < M; ++d) {
                const bool leaf = n == tree.n_steps();
                csv.cell(n).cell(i).cell(d).cell(u.at(n, i)[d]).cell(vars.v.at(n, i)[d]);
                for (std::size_t k = 0; k < K; ++k) {
                    csv.cell(leaf ? 0.0 : vars.G.at(n, i)[k * M + d]);
                }
                csv.end_row();
            }
        }
    }
}

inline void write_report(const RunConfig& cfg, const std::vector<std::pair<std::string, double>>& rows)
{
    CsvWriter csv(output_path(cfg, "report.csv"));
    csv.cell("key").cell("value").end_row();
    for (const auto& [key, value] : rows) {
        csv.cell(key).cell(value).end_row();
        std::cout << key << " = " << fmt_real(value) << '\n';
    }
}

inline double field_distance(std::span<const double> a, std::span<const double> b, const Grid1D& grid)
{
    Field d(a.begin(), a.end());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] -= b[i];
    }
    return norm_H(d, grid);
}

inline int cmd_solve(const RunConfig& cfg)
{
    const Setup s = make_setup(cfg);
    const WedProblem problem = make_wed_problem(s, cfg, cfg.epsilon);
    const SolveReport rep = minimize(problem, cfg.lambda_schedule.values(), minimize_options(cfg));
    const double lambda = rep.lambda_final;
    const FbState state = state_from_vars(problem, rep.vars, lambda);
    const double residual = residual_el(problem, lambda, state);
    const EnergyIdentityReport energy = energy_identity_check(problem, lambda, state);
    write_solution(cfg, problem, rep.u, rep.vars);
    std::vector<std::pair<std::string, double>> rows{
        {"epsilon", problem.epsilon}, {"lambda_final", lambda},      {"value", rep.value},
        {"grad_norm", rep.grad_norm}, {"iterations", static_cast<double>(rep.iterations)}, {"converged", rep.converged ? 1.0 : 0.0},
        {"el_residual", residual},    {"energy_lhs", energy.lhs},     {"energy_rhs", energy.rhs},
        {"energy_gap", energy.gap},
        {"u0_eps_distance", field_distance(problem.u0_eps, s.u0, s.grid)},
        {"u0_eps_v0_energy", problem.epsilon * std::pow(norm_V0(problem.u0_eps, s.grid), s.model.p)}};
    for (const auto& [key, value] : rep.monitors) {
        rows.emplace_back(key, value);
    }
    write_report(cfg, rows);
    if (!rep.converged) {
        std::cerr << "solve: optimizer hit max_iter before reaching outer_tol\n";
        return exit_solver;
    }
    return exit_ok;
}

inline int cmd_fb_solve(const RunConfig& cfg)
{
    const Setup s = make_setup(cfg);
    const WedProblem problem = make_wed_problem(s, cfg, cfg.epsilon);
    const double lambda = cfg.lambda_schedule.values().back();
    const FbState state = solve_fb(problem, lambda, cfg.picard_tol, cfg.picard_max);
    const TrajectoryVars vars = state_vars(problem, state);
    const EnergyIdentityReport energy = energy_identity_check(problem, lambda, state);
    write_solution(cfg, problem, state.u, vars);
    write_report(cfg, {{"epsilon", problem.epsilon},
                       {"lambda", lambda},
                       {"value", wed_value(problem, vars, lambda)},
                       {"el_residual", residual_el(problem, lambda, state)},
                       {"energy_lhs", energy.lhs},
                       {"energy_rhs", energy.rhs},
                       {"energy_gap", energy.gap}});
    return exit_ok;
}

inline int cmd_reference(const RunConfig& cfg)
{
    const Setup s = make_setup(cfg);
    const BaselineSolution sol = solve_reference(s.tree, s.grid, s.model, s.u0, s.B, cfg.inner_tol);
    const auto& tree = *s.tree;
    {
        CsvWriter csv(output_path(cfg, "reference.csv"));
        csv.cell("level").cell("node").cell("dof").cell("u").cell("xi").end_row();
        for (int n = 0; n <= tree.n_steps(); ++n) {
            for (std::size_t i = 0; i < tree.level_size(n); ++i) {
                for (std::size_t d = 0; d < s.grid.n_interior; ++d) {
                    csv.cell(n).cell(i).cell(d).cell(sol.u.at(n, i)[d]).cell(sol.xi.at(n, i)[d]).end_row();
                }
            }
        }
    }
    const BaselineEnergyReport energy = baseline_energy_identity(sol, s.B, s.grid);
    write_report(cfg, {{"energy_lhs", energy.lhs}, {"energy_rhs", energy.rhs}, {"energy_gap", energy.gap}});
    return exit_ok;
}

struct SweepRow {
    double epsilon = 0.0;
    double lambda = 0.0;
    double value = 0.0;
    double grad_norm = 0.0;
    double el_residual = 0.0;
    TrajectoryError err;
    std::map<std::string, double> monitors;
    bool converged = true;
};

inline void write_sweep(const RunConfig& cfg, const char* name, const std::vector<SweepRow>& rows)
{
    CsvWriter csv(output_path(cfg, name));
    csv.stream() << "epsilon,lambda_final,value,grad_norm,el_residual,err_L2H,err_supH,est1,est2,est3,est4,est5,"
                    "est6,eps_v,eps_G\n";
    for (const auto& r : rows) {
        csv.cell(r.epsilon).cell(r.lambda).cell(r.value).cell(r.grad_norm).cell(r.el_residual);
        csv.cell(r.err.err_L2H).cell(r.err.err_sup_H);
        for (const char* key : {"est1", "est2", "est3", "est4", "est5", "est6", "eps_v", "eps_G"}) {
            csv.cell(r.monitors.at(key));
        }
        csv.end_row();
        std::cout << "epsilon=" << fmt_real(r.epsilon) << " lambda=" << fmt_real(r.lambda)
                  << " err_L2H=" << fmt_real(r.err.err_L2H) << " eps_v=" << fmt_real(r.monitors.at("eps_v"))
                  << " eps_G=" << fmt_real(r.monitors.at("eps_G")) << '\n';
    }
}

inline int sweep_status(const std::vector<SweepRow>& rows)
{
    for (const auto& r : rows) {
        if (!std::isfinite(r.err.err_L2H) || !std::isfinite(r.err.err_sup_H)) {
            std::cerr << "sweep: non-finite error at epsilon " << fmt_real(r.epsilon) << '\n';
            return exit_property;
        }
        if (!r.converged) {
            std::cerr << "sweep: optimizer hit max_iter at epsilon " << fmt_real(r.epsilon) << '\n';
            return exit_solver;
        }
    }
    return exit_ok;
}

inline SweepRow sweep_row(const WedProblem& problem, const SolveReport& rep, const BaselineSolution& ref)
{
    SweepRow row;
    row.epsilon = problem.epsilon;
    row.lambda = rep.lambda_final;
    row.value = rep.value;
    row.grad_norm = rep.grad_norm;
    row.el_residual = rep.el_residual;
    row.err = trajectory_error(rep.u, ref.u, *problem.tree, problem.grid);
    row.monitors = rep.monitors;
    row.converged = rep.converged;
    return row;
}

inline int cmd_sweep_eps(const RunConfig& cfg)
{
    const Setup s = make_setup(cfg);
    const BaselineSolution ref = solve_reference(s.tree, s.grid, s.model, s.u0, s.B, cfg.inner_tol);
    std::vector<SweepRow> rows;
    for (double eps : cfg.eps_schedule.values()) {
        const WedProblem problem = make_wed_problem(s, cfg, eps);
        const SolveReport rep = minimize(problem, cfg.lambda_schedule.values(), minimize_options(cfg));
        rows.push_back(sweep_row(problem, rep, ref));
    }
    write_sweep(cfg, "sweep.csv", rows);
    return sweep_status(rows);
}

inline int cmd_sweep_lambda(const RunConfig& cfg)
{
    const Setup s = make_setup(cfg);
    const BaselineSolution ref = solve_reference(s.tree, s.grid, s.model, s.u0, s.B, cfg.inner_tol);
    const WedProblem problem = make_wed_problem(s, cfg, cfg.epsilon);
    std::vector<SweepRow> rows;
    std::optional<TrajectoryVars> warm;
    for (double lambda : cfg.lambda_schedule.values()) {
        const SolveReport rep = minimize(problem, {lambda}, minimize_options(cfg), warm);
        rows.push_back(sweep_row(problem, rep, ref));
        warm = rep.vars;
    }
    write_sweep(cfg, "sweep.csv", rows);
    return sweep_status(rows);
}

} // namespace wed::experiments
