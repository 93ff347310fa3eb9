#pragma once

#include "wed/energy.hpp"
#include "wed/errors.hpp"
#include "wed/moreau.hpp"
#include "wed/parallel.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace wed {

/// Data of the discrete WED problem. B is integrand-like with width M*K.
struct WedProblem {
    TreePtr tree;
    Grid1D grid;
    EnergyModel model;
    double epsilon = 1.0;
    AdaptedProcess B;
    Field u0_eps;
    std::vector<double> weights;   ///< per level 0..N, (eps/(eps+dt))^n
    double inner_tol = 1e-10;
    int inner_max_iter = 200;

    std::size_t M() const { return grid.n_interior; }
    std::size_t K() const { return static_cast<std::size_t>(tree->n_channels()); }
    double dt() const { return tree->dt(); }

    YosidaParams yosida_params(double lambda) const { return {lambda, inner_tol, inner_max_iter}; }
};

inline std::vector<double> wed_weights(const ScenarioTree& tree, double epsilon)
{
    const double ratio = epsilon / (epsilon + tree.dt());
    std::vector<double> w(static_cast<std::size_t>(tree.n_steps()) + 1);
    w[0] = 1.0;
    for (std::size_t n = 1; n < w.size(); ++n) {
        w[n] = w[n - 1] * ratio;
    }
    return w;
}

inline WedProblem make_problem(TreePtr tree, Grid1D grid, EnergyModel model, double epsilon, AdaptedProcess B,
                               Field u0_eps)
{
    if (!tree) {
        throw DomainError("make_problem: null tree");
    }
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw DomainError("make_problem: epsilon must be positive");
    }
    if (B.tree_ptr() != tree) {
        throw SizeMismatch("make_problem: B lives on a different tree");
    }
    if (B.support() != TimeSupport::integrand) {
        throw SizeMismatch("make_problem: B must have time support 0..N-1");
    }
    detail::require_size(B.width(), grid.n_interior * static_cast<std::size_t>(tree->n_channels()), "make_problem B");
    detail::require_size(u0_eps.size(), grid.n_interior, "make_problem u0");
    const double horizon_coeff = model.time_coeff(tree->horizon());
    if (!(horizon_coeff > 0.0)) {
        throw DomainError("make_problem: time coefficient must stay positive on [0,T]");
    }
    WedProblem problem{tree, grid, model, epsilon, std::move(B), std::move(u0_eps), wed_weights(*tree, epsilon)};
    return problem;
}

/// Noise field constant in time and ω: every node and channel gets the same profile.
inline AdaptedProcess constant_noise(const TreePtr& tree, const Grid1D& grid, std::span<const double> profile)
{
    detail::require_size(profile.size(), grid.n_interior, "constant_noise");
    const auto K = static_cast<std::size_t>(tree->n_channels());
    AdaptedProcess B(tree, grid.n_interior * K, TimeSupport::integrand);
    for (int n = 0; n < tree->n_steps(); ++n) {
        for (std::size_t i = 0; i < tree->level_size(n); ++i) {
            auto b = B.at(n, i);
            for (std::size_t k = 0; k < K; ++k) {
                std::copy(profile.begin(), profile.end(), b.begin() + static_cast<std::ptrdiff_t>(k * grid.n_interior));
            }
        }
    }
    return B;
}

/// Decision variables: drift v (width M) and extra diffusion G (width M*K).
///
/// The drift of step n -> n+1 is stored at the node where the step ends, so v is
/// state-like with level 0 unused (kept at zero); G is integrand-like.
struct TrajectoryVars {
    AdaptedProcess v;
    AdaptedProcess G;
};

inline TrajectoryVars zero_vars(const WedProblem& problem)
{
    return {AdaptedProcess(problem.tree, problem.M(), TimeSupport::state),
            AdaptedProcess(problem.tree, problem.M() * problem.K(), TimeSupport::integrand)};
}

inline TrajectoryVars random_vars(const WedProblem& problem, std::uint64_t seed, double scale = 1.0)
{
    TrajectoryVars vars = zero_vars(problem);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    const auto v = vars.v.values();
    for (std::size_t i = problem.M(); i < v.size(); ++i) {
        v[i] = normal(rng);
    }
    for (double& x : vars.G.values()) {
        x = normal(rng);
    }
    return vars;
}

inline void check_vars(const WedProblem& problem, const TrajectoryVars& vars)
{
    if (vars.v.tree_ptr() != problem.tree || vars.G.tree_ptr() != problem.tree) {
        throw SizeMismatch("trajectory variables live on a different tree");
    }
    if (vars.v.support() != TimeSupport::state || vars.G.support() != TimeSupport::integrand) {
        throw SizeMismatch("trajectory variables: v must be state-like and G integrand-like");
    }
    detail::require_size(vars.v.width(), problem.M(), "trajectory v");
    detail::require_size(vars.G.width(), problem.M() * problem.K(), "trajectory G");
}

/// out = a + s * b, elementwise over both components.
inline TrajectoryVars lincomb(const TrajectoryVars& a, double s, const TrajectoryVars& b)
{
    TrajectoryVars out = a;
    auto combine = [s](std::span<double> o, std::span<const double> y) {
        for (std::size_t i = 0; i < o.size(); ++i) {
            o[i] += s * y[i];
        }
    };
    combine(out.v.values(), b.v.values());
    combine(out.G.values(), b.G.values());
    return out;
}

namespace detail {

inline double level_dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

} // namespace detail

/// Weighted metric sum_n w_n dt E[eps (a_v,b_v)_H + eps^2 (a_G,b_G)_HS] over the steps,
/// the geometry in which wed_gradient is expressed.
inline double metric_dot(const WedProblem& problem, const TrajectoryVars& a, const TrajectoryVars& b)
{
    const auto& tree = *problem.tree;
    const double eps = problem.epsilon;
    double total = 0.0;
    for (int n = 0; n < tree.n_steps(); ++n) {
        const double sv = tree.node_prob(n + 1) * detail::level_dot(a.v.level_values(n + 1), b.v.level_values(n + 1));
        const double sG = tree.node_prob(n) * detail::level_dot(a.G.level_values(n), b.G.level_values(n));
        total += problem.weights[n] * tree.dt() * problem.grid.h * (eps * sv + eps * eps * sG);
    }
    return total;
}

/// Trajectory norm sqrt(sum_n dt E(|v|_H^2 + |G|_HS^2)).
inline double vars_norm(const WedProblem& problem, const TrajectoryVars& a)
{
    const auto& tree = *problem.tree;
    double total = 0.0;
    for (int n = 0; n < tree.n_steps(); ++n) {
        const auto v = a.v.level_values(n + 1);
        const auto G = a.G.level_values(n);
        total += tree.dt() * problem.grid.h *
                 (tree.node_prob(n + 1) * detail::level_dot(v, v) + tree.node_prob(n) * detail::level_dot(G, G));
    }
    return std::sqrt(total);
}

inline double vars_distance(const WedProblem& problem, const TrajectoryVars& a, const TrajectoryVars& b)
{
    return vars_norm(problem, lincomb(a, -1.0, b));
}

/// Step-wise residual norm max_n sqrt(E|r_v,n+1|_H^2 + dt E|r_G,n|_HS^2).
inline double level_residual_norm(const WedProblem& problem, const TrajectoryVars& r)
{
    const auto& tree = *problem.tree;
    double worst = 0.0;
    for (int n = 0; n < tree.n_steps(); ++n) {
        const auto v = r.v.level_values(n + 1);
        const auto G = r.G.level_values(n);
        worst = std::max(worst, std::sqrt(problem.grid.h * (tree.node_prob(n + 1) * detail::level_dot(v, v) +
                                                            tree.dt() * tree.node_prob(n) * detail::level_dot(G, G))));
    }
    return worst;
}

/// u_child = u_parent + v_child dt + sum_k (B + eps G)_k(parent) ΔW_k, u_root = u0_eps.
inline AdaptedProcess reconstruct_u(const WedProblem& problem, const TrajectoryVars& vars)
{
    check_vars(problem, vars);
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const std::size_t K = problem.K();
    const double dt = tree.dt();
    const double eps = problem.epsilon;
    AdaptedProcess u(problem.tree, M, TimeSupport::state);
    std::copy(problem.u0_eps.begin(), problem.u0_eps.end(), u.at(0, 0).begin());
    for (int n = 0; n < tree.n_steps(); ++n) {
        parallel_for(tree.level_size(n + 1), [&](std::size_t c) {
            const std::size_t p = tree.parent_index(c);
            const auto up = u.at(n, p);
            const auto vc = vars.v.at(n + 1, c);
            const auto Gp = vars.G.at(n, p);
            const auto Bp = problem.B.at(n, p);
            auto uc = u.at(n + 1, c);
            for (std::size_t d = 0; d < M; ++d) {
                double value = up[d] + vc[d] * dt;
                for (std::size_t k = 0; k < K; ++k) {
                    value += (Bp[k * M + d] + eps * Gp[k * M + d]) * tree.increment(n + 1, c, static_cast<int>(k));
                }
                uc[d] = value;
            }
        });
    }
    return u;
}

/// Phi_lambda and A_lambda at every node of levels 1..N (lambda = 0 means Phi and A themselves).
struct NodeEnergy {
    AdaptedProcess phi;  ///< width 1; level 0 unused
    AdaptedProcess a;    ///< width M; level 0 unused
    AdaptedProcess J;    ///< resolvent (u itself when lambda = 0)
};

inline NodeEnergy node_energy(const WedProblem& problem, const AdaptedProcess& u, double lambda)
{
    if (!(lambda >= 0.0)) {
        throw DomainError("lambda must be nonnegative");
    }
    const auto& tree = *problem.tree;
    NodeEnergy out{AdaptedProcess(problem.tree, 1, TimeSupport::state),
                   AdaptedProcess(problem.tree, problem.M(), TimeSupport::state),
                   AdaptedProcess(problem.tree, problem.M(), TimeSupport::state)};
    const YosidaParams params = problem.yosida_params(lambda > 0.0 ? lambda : 1.0);
    for (int n = 1; n <= tree.n_steps(); ++n) {
        const double t = tree.time(n);
        parallel_for(
            tree.level_size(n),
            [&](std::size_t i) {
                const auto w = u.at(n, i);
                if (lambda > 0.0) {
                    const ProxPoint prox = prox_point(problem.model, params, t, w, problem.grid);
                    out.phi.at(n, i)[0] = prox.envelope;
                    std::copy(prox.A.begin(), prox.A.end(), out.a.at(n, i).begin());
                    std::copy(prox.J.begin(), prox.J.end(), out.J.at(n, i).begin());
                } else {
                    out.phi.at(n, i)[0] = phi_value(problem.model, t, w, problem.grid);
                    const Field a = a_apply(problem.model, t, w, problem.grid);
                    std::copy(a.begin(), a.end(), out.a.at(n, i).begin());
                    std::copy(w.begin(), w.end(), out.J.at(n, i).begin());
                }
            },
            16);
    }
    return out;
}

struct WedEvaluation {
    double value = 0.0;
    AdaptedProcess u;
    NodeEnergy energy;
};

inline double wed_value_from(const WedProblem& problem, const TrajectoryVars& vars, const NodeEnergy& energy)
{
    const auto& tree = *problem.tree;
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    const double h = problem.grid.h;
    double value = 0.0;
    for (int n = 0; n < tree.n_steps(); ++n) {
        double sv = 0.0;
        for (double x : vars.v.level_values(n + 1)) {
            sv += x * x;
        }
        double sG = 0.0;
        for (double x : vars.G.level_values(n)) {
            sG += x * x;
        }
        double sphi = 0.0;
        for (double x : energy.phi.level_values(n + 1)) {
            sphi += x;
        }
        value += dt * problem.weights[n] * h *
                     (0.5 * eps * tree.node_prob(n + 1) * sv + 0.5 * eps * eps * tree.node_prob(n) * sG) +
                 dt * problem.weights[n + 1] * tree.node_prob(n + 1) * sphi;
    }
    return value;
}

inline WedEvaluation evaluate(const WedProblem& problem, const TrajectoryVars& vars, double lambda)
{
    WedEvaluation out;
    out.u = reconstruct_u(problem, vars);
    out.energy = node_energy(problem, out.u, lambda);
    out.value = wed_value_from(problem, vars, out.energy);
    return out;
}

/// Discrete functional sum_n dt E[w_n (eps/2 |v_{n+1}|^2 + eps^2/2 |G_n|^2) + w_{n+1} Phi_lambda(t_{n+1}, u_{n+1})].
inline double wed_value(const WedProblem& problem, const TrajectoryVars& vars, double lambda)
{
    return evaluate(problem, vars, lambda).value;
}

/// Gradient in the metric of metric_dot, from the evaluated Yosida field by one backward sweep.
///
/// The adjoint zeta_N = dt a_N/(eps+dt), zeta_n = (dt a_n + eps E_n zeta_{n+1})/(eps+dt)
/// gives g_v = v + zeta at the child and g_G = G + E_n[ΔW zeta_{n+1}]/dt.
inline TrajectoryVars wed_gradient_from(const WedProblem& problem, const TrajectoryVars& vars, const NodeEnergy& energy)
{
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const std::size_t K = problem.K();
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    TrajectoryVars grad = vars;
    const int N = tree.n_steps();
    AdaptedProcess zeta(problem.tree, M, TimeSupport::state);
    {
        const double c = dt / (eps + dt);
        auto z = zeta.level_values(N);
        const auto a = energy.a.level_values(N);
        auto gv = grad.v.level_values(N);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] = c * a[i];
            gv[i] += z[i];
        }
    }
    for (int n = N - 1; n >= 0; --n) {
        parallel_for(tree.level_size(n), [&](std::size_t p) {
            std::vector<double> mean(M);
            std::vector<double> integ(M * K);
            project_one_step(
                tree, M, [&](std::size_t br) { return zeta.at(n + 1, tree.child_index(p, br)); }, std::span(mean),
                std::span(integ));
            auto gG = grad.G.at(n, p);
            for (std::size_t d = 0; d < M * K; ++d) {
                gG[d] += integ[d];
            }
            if (n >= 1) {
                auto z = zeta.at(n, p);
                auto gv = grad.v.at(n, p);
                const auto a = energy.a.at(n, p);
                for (std::size_t d = 0; d < M; ++d) {
                    z[d] = (dt * a[d] + eps * mean[d]) / (eps + dt);
                    gv[d] += z[d];
                }
            }
        });
    }
    return grad;
}

inline TrajectoryVars wed_gradient(const WedProblem& problem, const TrajectoryVars& vars, double lambda)
{
    const WedEvaluation eval = evaluate(problem, vars, lambda);
    return wed_gradient_from(problem, vars, eval.energy);
}

/// Converts a metric gradient into plain partial derivatives with respect to the stored coefficients.
inline TrajectoryVars metric_to_partials(const WedProblem& problem, const TrajectoryVars& grad)
{
    const auto& tree = *problem.tree;
    TrajectoryVars out = grad;
    const double eps = problem.epsilon;
    for (double& x : out.v.level_values(0)) {
        x = 0.0;
    }
    for (int n = 0; n < tree.n_steps(); ++n) {
        const double base = problem.weights[n] * tree.dt() * problem.grid.h;
        for (double& x : out.v.level_values(n + 1)) {
            x *= base * tree.node_prob(n + 1) * eps;
        }
        for (double& x : out.G.level_values(n)) {
            x *= base * tree.node_prob(n) * eps * eps;
        }
    }
    return out;
}

/// Euler-Lagrange residual of (v,G) against the Yosida field a:
/// r_v = v - (eps E v_next - dt a)/(eps+dt) at levels 1..N with v_{N+1} = 0,
/// r_G = G - E_n[ΔW v_{n+1}]/dt.
inline TrajectoryVars el_backward_residual(const WedProblem& problem, const TrajectoryVars& vars,
                                           const AdaptedProcess& a)
{
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const std::size_t K = problem.K();
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    TrajectoryVars r = vars;
    const int N = tree.n_steps();
    for (double& x : r.v.level_values(0)) {
        x = 0.0;
    }
    {
        auto rv = r.v.level_values(N);
        const auto aN = a.level_values(N);
        for (std::size_t i = 0; i < rv.size(); ++i) {
            rv[i] += dt * aN[i] / (eps + dt);
        }
    }
    for (int n = N - 1; n >= 0; --n) {
        parallel_for(tree.level_size(n), [&](std::size_t p) {
            std::vector<double> mean(M);
            std::vector<double> integ(M * K);
            project_one_step(
                tree, M, [&](std::size_t br) { return vars.v.at(n + 1, tree.child_index(p, br)); }, std::span(mean),
                std::span(integ));
            auto rG = r.G.at(n, p);
            for (std::size_t d = 0; d < M * K; ++d) {
                rG[d] -= integ[d];
            }
            if (n >= 1) {
                auto rv = r.v.at(n, p);
                const auto ap = a.at(n, p);
                for (std::size_t d = 0; d < M; ++d) {
                    rv[d] -= (eps * mean[d] - dt * ap[d]) / (eps + dt);
                }
            }
        });
    }
    return r;
}

/// Mollified datum (I + delta R0)^{-1} u0 with delta = eps^{2/p} h^2/4.
inline Field prepare_initial_datum(std::span<const double> u0, double epsilon, const EnergyModel& model,
                                   const Grid1D& grid)
{
    detail::require_size(u0.size(), grid.n_interior, "prepare_initial_datum");
    if (!(epsilon > 0.0)) {
        throw DomainError("prepare_initial_datum: epsilon must be positive");
    }
    const double delta = std::pow(epsilon, 2.0 / model.p) * grid.h * grid.h / 4.0;
    Tridiagonal op = dirichlet_laplacian(grid);
    for (double& d : op.diag) {
        d = 1.0 + delta * d;
    }
    for (double& o : op.off) {
        o *= delta;
    }
    return solve_tridiagonal(op, u0);
}

struct StageReport {
    double lambda = 0.0;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct SolveReport {
    TrajectoryVars vars;
    AdaptedProcess u;
    double value = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    double el_residual = 0.0;
    double lambda_final = 0.0;
    bool converged = false;
    std::vector<StageReport> stages;
    std::map<std::string, double> monitors;
};

/// Geometric schedule start, start*factor, ..., count entries.
inline std::vector<double> geometric_schedule(double start, double factor, int count)
{
    if (!(start > 0.0) || !(factor > 0.0 && factor < 1.0) || count < 1) {
        throw DomainError("schedule: need start > 0, 0 < factor < 1, count >= 1");
    }
    std::vector<double> out(static_cast<std::size_t>(count));
    out[0] = start;
    for (std::size_t i = 1; i < out.size(); ++i) {
        out[i] = out[i - 1] * factor;
    }
    return out;
}

struct MinimizeOptions {
    double outer_tol = 1e-8;
    int max_iter = 20000;   ///< per stage
    double lipschitz_cap = 1e14;
};

struct StageResult {
    TrajectoryVars x;
    WedEvaluation eval;
    TrajectoryVars grad;
    double grad_norm = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// FISTA in the weighted metric with gradient-based restart and backtracking on L.
inline StageResult minimize_stage(const WedProblem& problem, TrajectoryVars x, double lambda,
                                  const MinimizeOptions& options)
{
    StageResult res;
    WedEvaluation fx = evaluate(problem, x, lambda);
    TrajectoryVars gx = wed_gradient_from(problem, x, fx.energy);
    double gnorm = level_residual_norm(problem, gx);
    TrajectoryVars y = x;
    WedEvaluation fy = fx;
    TrajectoryVars gy = gx;
    double t = 1.0;
    double L = 1.0;
    int it = 0;
    while (gnorm > options.outer_tol * (1.0 + std::abs(fx.value))) {
        if (it == options.max_iter) {
            res.x = std::move(x);
            res.eval = std::move(fx);
            res.grad = std::move(gx);
            res.grad_norm = gnorm;
            res.iterations = it;
            res.converged = false;
            return res;
        }
        ++it;
        const double g2 = metric_dot(problem, gy, gy);
        double L_try = std::max(1.0, 0.9 * L);
        TrajectoryVars x_new;
        WedEvaluation f_new;
        TrajectoryVars g_new;
        while (true) {
            x_new = lincomb(y, -1.0 / L_try, gy);
            f_new = evaluate(problem, x_new, lambda);
            g_new = wed_gradient_from(problem, x_new, f_new.energy);
            const TrajectoryVars dx = lincomb(x_new, -1.0, y);
            const double curvature = metric_dot(problem, lincomb(g_new, -1.0, gy), dx);
            const double dx2 = metric_dot(problem, dx, dx);
            const double slack = 1e-13 * std::abs(fy.value);
            const bool decrease = f_new.value <= fy.value - g2 / (2.0 * L_try) + slack;
            const bool lipschitz = curvature <= L_try * dx2 * (1.0 + 1e-10);
            if (decrease && lipschitz) {
                break;
            }
            L_try *= 2.0;
            if (L_try > options.lipschitz_cap) {
                throw LineSearchError("minimize: backtracking exceeded the Lipschitz cap at lambda " +
                                      detail::real_str(lambda) + "; the gradient is inconsistent with the objective");
            }
        }
        L = L_try;
        const TrajectoryVars step = lincomb(x_new, -1.0, x);
        const bool restart = metric_dot(problem, gy, step) > 0.0;
        x = std::move(x_new);
        fx = std::move(f_new);
        gx = std::move(g_new);
        gnorm = level_residual_norm(problem, gx);
        if (restart) {
            t = 1.0;
            y = x;
            fy = fx;
            gy = gx;
        } else {
            const double t_new = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            y = lincomb(x, (t - 1.0) / t_new, step);
            t = t_new;
            fy = evaluate(problem, y, lambda);
            gy = wed_gradient_from(problem, y, fy.energy);
        }
    }
    res.x = std::move(x);
    res.eval = std::move(fx);
    res.grad = std::move(gx);
    res.grad_norm = gnorm;
    res.iterations = it;
    res.converged = true;
    return res;
}

inline void validate_schedule(const std::vector<double>& schedule)
{
    if (schedule.empty()) {
        throw DomainError("lambda schedule must be nonempty");
    }
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        if (!(schedule[i] > 0.0)) {
            throw DomainError("lambda schedule entries must be positive");
        }
        if (i > 0 && !(schedule[i] < schedule[i - 1])) {
            throw DomainError("lambda schedule must be strictly decreasing");
        }
    }
}

inline std::map<std::string, double> compute_monitors(const WedProblem& problem, const TrajectoryVars& vars,
                                                      const AdaptedProcess& u, const NodeEnergy& energy,
                                                      double lambda);

/// lambda-continuation: one accelerated stage per schedule entry, warm-started.
inline SolveReport minimize(const WedProblem& problem, const std::vector<double>& lambda_schedule,
                            const MinimizeOptions& options = {}, std::optional<TrajectoryVars> initial = std::nullopt)
{
    validate_schedule(lambda_schedule);
    if (!(options.outer_tol > 0.0) || options.max_iter < 1) {
        throw DomainError("minimize: outer_tol must be positive and max_iter >= 1");
    }
    TrajectoryVars x = initial ? std::move(*initial) : zero_vars(problem);
    check_vars(problem, x);
    SolveReport report;
    report.converged = true;
    StageResult stage;
    for (double lambda : lambda_schedule) {
        stage = minimize_stage(problem, std::move(x), lambda, options);
        report.stages.push_back({lambda, stage.eval.value, stage.grad_norm, stage.iterations, stage.converged});
        report.iterations += stage.iterations;
        report.converged = report.converged && stage.converged;
        x = stage.x;
    }
    const double lambda = lambda_schedule.back();
    report.vars = std::move(stage.x);
    report.u = stage.eval.u;
    report.value = stage.eval.value;
    report.grad_norm = stage.grad_norm;
    report.lambda_final = lambda;
    report.el_residual = level_residual_norm(problem, el_backward_residual(problem, report.vars, stage.eval.energy.a));
    report.monitors = compute_monitors(problem, report.vars, report.u, stage.eval.energy, lambda);
    return report;
}

namespace detail {

/// E over leaves of a path functional: fold(acc, level, node) along each root-to-leaf path.
template <class Init, class Fold, class Finish>
double path_expectation(const ScenarioTree& tree, int last_level, Init init, Fold fold, Finish finish)
{
    std::vector<double> acc(1, init);
    acc[0] = fold(init, 0, std::size_t{0});
    for (int n = 1; n <= last_level; ++n) {
        std::vector<double> next(tree.level_size(n));
        for (std::size_t i = 0; i < next.size(); ++i) {
            next[i] = fold(acc[tree.parent_index(i)], n, i);
        }
        acc = std::move(next);
    }
    double total = 0.0;
    for (double a : acc) {
        total += finish(a);
    }
    return total * tree.node_prob(last_level);
}

inline double hs_norm2(std::span<const double> g, std::size_t M, const Grid1D& grid,
                       double (*norm)(std::span<const double>, const Grid1D&))
{
    double s = 0.0;
    for (std::size_t k = 0; k * M < g.size(); ++k) {
        const double nk = norm(g.subspan(k * M, M), grid);
        s += nk * nk;
    }
    return s;
}

} // namespace detail

/// Uniform-estimate monitors est1..est6 and the vanishing quantities eps_v, eps_G.
inline std::map<std::string, double> compute_monitors(const WedProblem& problem, const TrajectoryVars& vars,
                                                      const AdaptedProcess& u, const NodeEnergy& energy, double lambda)
{
    const auto& tree = *problem.tree;
    const auto& grid = problem.grid;
    const std::size_t M = problem.M();
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    const double p = problem.model.p;
    const double q = problem.model.q();
    const int N = tree.n_steps();

    double v_l2 = 0.0, v_q = 0.0, v_sup_mean = 0.0, G_l2 = 0.0, G_q = 0.0;
    for (int n = 0; n < N; ++n) {
        const double prob_v = tree.node_prob(n + 1);
        double level_vq = 0.0;
        for (std::size_t i = 0; i < tree.level_size(n + 1); ++i) {
            const auto v = vars.v.at(n + 1, i);
            const double vh = norm_H(v, grid);
            v_l2 += dt * prob_v * vh * vh;
            level_vq += prob_v * std::pow(norm_V0_dual(v, grid), q);
        }
        v_q += dt * level_vq;
        v_sup_mean = std::max(v_sup_mean, level_vq);
        const double prob = tree.node_prob(n);
        for (std::size_t i = 0; i < tree.level_size(n); ++i) {
            const double gh2 = detail::hs_norm2(vars.G.at(n, i), M, grid, &norm_H);
            G_l2 += dt * prob * gh2;
            G_q += dt * prob * std::pow(gh2, q / 2.0);
        }
    }
    double J_p = 0.0, A_l2 = 0.0, A_q = 0.0;
    for (int n = 1; n <= N; ++n) {
        const double prob = tree.node_prob(n);
        for (std::size_t i = 0; i < tree.level_size(n); ++i) {
            J_p += dt * prob * std::pow(norm_V(energy.J.at(n, i), grid, p), p);
            const auto a = energy.a.at(n, i);
            const double ah = norm_H(a, grid);
            A_l2 += dt * prob * ah * ah;
            A_q += dt * prob * std::pow(norm_V_dual(a, grid, p), q);
        }
    }
    const double u_sup = detail::path_expectation(
        tree, N, 0.0,
        [&](double acc, int n, std::size_t i) { return std::max(acc, std::pow(norm_V0_dual(u.at(n, i), grid), q)); },
        [](double acc) { return acc; });
    const double v_sup = detail::path_expectation(
        tree, N, 0.0,
        [&](double acc, int n, std::size_t i) {
            return std::max(acc, std::pow(norm_V0_dual(vars.v.at(n, i), grid), q));
        },
        [](double acc) { return acc; });
    const double G_dual = detail::path_expectation(
        tree, N - 1, 0.0,
        [&](double acc, int n, std::size_t i) {
            return acc + dt * detail::hs_norm2(vars.G.at(n, i), M, grid, &norm_V0_dual);
        },
        [&](double acc) { return std::pow(acc, q / 2.0); });

    std::map<std::string, double> m;
    const double lam = lambda > 0.0 ? lambda : 0.0;
    m["est1"] = eps * v_l2 + J_p + lam * A_l2;
    m["est2"] = eps * v_sup_mean + v_q + eps * eps * G_l2 + eps * G_q;
    m["est3"] = u_sup;
    m["est4"] = A_q;
    m["est5"] = eps * v_sup;
    m["est6"] = eps * G_dual;
    m["eps_v"] = eps * std::sqrt(v_l2);
    m["eps_G"] = std::pow(std::pow(eps, q) * G_dual, 1.0 / q);
    return m;
}

} // namespace wed
