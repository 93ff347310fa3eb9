#pragma once

#include "wed/errors.hpp"
#include "wed/moreau.hpp"
#include "wed/parallel.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/wed.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace wed {

/// Solution candidate of the discrete forward-backward system.
///
/// u, v and xi are state-like; v_n is the drift of the step ending at level n, so
/// level 0 of v is unused and the terminal condition v_{N+1} = 0 is implicit.
/// xi_n = A_lambda(t_n, u_n); G is integrand-like.
struct FbState {
    AdaptedProcess u;
    AdaptedProcess v;
    AdaptedProcess G;
    AdaptedProcess xi;
};

enum class FbMethod { newton, picard };

struct FbOptions {
    FbMethod method = FbMethod::newton;
    double relaxation = 0.5;   ///< Picard damping; Newton falls back to it when the residual grows
    std::optional<TrajectoryVars> initial;
};

inline TrajectoryVars state_vars(const WedProblem& problem, const FbState& state)
{
    TrajectoryVars vars{state.v, state.G};
    check_vars(problem, vars);
    return vars;
}

/// Builds the state (u, v, G, xi) generated by trajectory variables.
inline FbState state_from_vars(const WedProblem& problem, const TrajectoryVars& vars, double lambda)
{
    check_vars(problem, vars);
    FbState state;
    state.u = reconstruct_u(problem, vars);
    state.v = vars.v;
    state.G = vars.G;
    NodeEnergy energy = node_energy(problem, state.u, lambda);
    state.xi = std::move(energy.a);
    const Field a0 = lambda > 0.0
                         ? yosida(problem.model, problem.yosida_params(lambda), 0.0, state.u.at(0, 0), problem.grid)
                         : a_apply(problem.model, 0.0, state.u.at(0, 0), problem.grid);
    std::copy(a0.begin(), a0.end(), state.xi.at(0, 0).begin());
    return state;
}

/// Max of the backward, martingale, forward and xi-consistency residuals, each in a
/// level-wise norm. Zero iff the state solves the discrete system.
inline double residual_el(const WedProblem& problem, double lambda, const FbState& state)
{
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const std::size_t K = problem.K();
    const int N = tree.n_steps();
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    const auto& grid = problem.grid;
    for (const AdaptedProcess* proc : {&state.u, &state.v, &state.xi}) {
        if (proc->tree_ptr() != problem.tree || proc->width() != M || proc->support() != TimeSupport::state) {
            throw SizeMismatch("residual_el: state processes must be state-like of width M on the problem tree");
        }
    }
    if (state.G.tree_ptr() != problem.tree || state.G.width() != M * K ||
        state.G.support() != TimeSupport::integrand) {
        throw SizeMismatch("residual_el: G must be integrand-like of width M*K");
    }

    const NodeEnergy energy = node_energy(problem, state.u, lambda);
    double worst = level_residual_norm(problem, el_backward_residual(problem, state_vars(problem, state), energy.a));

    auto level_norm = [&](int n, auto&& residual_at) {
        double s = 0.0;
        std::vector<double> r(M);
        for (std::size_t i = 0; i < tree.level_size(n); ++i) {
            residual_at(i, std::span<double>(r));
            for (double x : r) {
                s += x * x;
            }
        }
        return std::sqrt(tree.node_prob(n) * grid.h * s);
    };

    worst = std::max(worst, level_norm(0, [&](std::size_t, std::span<double> r) {
                         for (std::size_t d = 0; d < M; ++d) {
                             r[d] = std::abs(state.u.at(0, 0)[d] - problem.u0_eps[d]) + std::abs(state.v.at(0, 0)[d]);
                         }
                     }));
    for (int n = 0; n < N; ++n) {
        worst = std::max(worst, level_norm(n + 1, [&](std::size_t c, std::span<double> r) {
                             const std::size_t p = tree.parent_index(c);
                             const auto up = state.u.at(n, p);
                             const auto vc = state.v.at(n + 1, c);
                             const auto Gp = state.G.at(n, p);
                             const auto Bp = problem.B.at(n, p);
                             const auto uc = state.u.at(n + 1, c);
                             for (std::size_t d = 0; d < M; ++d) {
                                 double value = up[d] + vc[d] * dt;
                                 for (std::size_t k = 0; k < K; ++k) {
                                     value += (Bp[k * M + d] + eps * Gp[k * M + d]) *
                                              tree.increment(n + 1, c, static_cast<int>(k));
                                 }
                                 r[d] = uc[d] - value;
                             }
                         }));
    }
    for (int n = 1; n <= N; ++n) {
        worst = std::max(worst, level_norm(n, [&](std::size_t i, std::span<double> r) {
                             for (std::size_t d = 0; d < M; ++d) {
                                 r[d] = state.xi.at(n, i)[d] - energy.a.at(n, i)[d];
                             }
                         }));
    }
    return worst;
}

inline double residual_el(const WedProblem& problem, double lambda, const TrajectoryVars& vars)
{
    return residual_el(problem, lambda, state_from_vars(problem, vars, lambda));
}

namespace detail {

/// Backward sweep with a frozen Yosida field a:
/// v_n = (eps E_n v_{n+1} - dt a_n)/(eps+dt), v_{N+1} = 0, G_n = E_n[ΔW v_{n+1}]/dt.
inline TrajectoryVars picard_backward(const WedProblem& problem, const AdaptedProcess& a)
{
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    const int N = tree.n_steps();
    TrajectoryVars out = zero_vars(problem);
    {
        auto v = out.v.level_values(N);
        const auto aN = a.level_values(N);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = -dt * aN[i] / (eps + dt);
        }
    }
    for (int n = N - 1; n >= 0; --n) {
        parallel_for(tree.level_size(n), [&](std::size_t p) {
            std::vector<double> mean(M);
            project_one_step(
                tree, M, [&](std::size_t br) { return out.v.at(n + 1, tree.child_index(p, br)); }, std::span(mean),
                out.G.at(n, p));
            if (n >= 1) {
                auto v = out.v.at(n, p);
                const auto ap = a.at(n, p);
                for (std::size_t d = 0; d < M; ++d) {
                    v[d] = (eps * mean[d] - dt * ap[d]) / (eps + dt);
                }
            }
        });
    }
    return out;
}

/// One Newton step: linearize A_lambda at u and solve the linear forward-backward
/// system exactly through the decoupling E_n v_{n+1} = K_n u_n + k_n.
inline TrajectoryVars newton_step(const WedProblem& problem, const AdaptedProcess& u, const NodeEnergy& energy,
                                  double lambda)
{
    using Eigen::Index;
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const auto& tree = *problem.tree;
    const std::size_t M = problem.M();
    const std::size_t K = problem.K();
    const auto m = static_cast<Index>(M);
    const auto mk = static_cast<Index>(M * K);
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    const int N = tree.n_steps();
    const double pi = tree.child_prob();

    // per node c at levels 1..N: v_c = P_c u_c + q_c and u_c = Q_c (u_p + beta + eps ΔW G_p + dt q_c)
    std::vector<std::vector<MatrixXd>> P(static_cast<std::size_t>(N + 1)), Q(static_cast<std::size_t>(N + 1));
    std::vector<std::vector<VectorXd>> q(static_cast<std::size_t>(N + 1));
    // per parent at levels 0..N-1: G_p = X_p u_p + y_p
    std::vector<std::vector<MatrixXd>> X(static_cast<std::size_t>(N));
    std::vector<std::vector<VectorXd>> y(static_cast<std::size_t>(N));

    auto beta_of = [&](int n, std::size_t p, std::size_t br) {
        VectorXd beta = VectorXd::Zero(m);
        const auto Bp = problem.B.at(n, p);
        for (std::size_t k = 0; k < K; ++k) {
            const double dW = tree.increment_of_branch(br, static_cast<int>(k));
            for (Index d = 0; d < m; ++d) {
                beta(d) += Bp[k * M + static_cast<std::size_t>(d)] * dW;
            }
        }
        return beta;
    };

    std::vector<MatrixXd> gain(tree.level_size(N), MatrixXd::Zero(m, m));
    std::vector<VectorXd> offset(tree.level_size(N), VectorXd::Zero(m));
    for (int level = N; level >= 1; --level) {
        const std::size_t nodes = tree.level_size(level);
        P[level].assign(nodes, MatrixXd());
        Q[level].assign(nodes, MatrixXd());
        q[level].assign(nodes, VectorXd());
        parallel_for(
            nodes,
            [&](std::size_t c) {
                const auto uc = u.at(level, c);
                const auto ac = energy.a.at(level, c);
                const MatrixXd Jc = lambda > 0.0 ? yosida_jacobian(problem.model, lambda, tree.time(level),
                                                                   energy.J.at(level, c), problem.grid)
                                                 : yosida_jacobian(problem.model, 0.0, tree.time(level), uc,
                                                                   problem.grid);
                VectorXd alpha(m);
                VectorXd u_lin(m);
                for (Index d = 0; d < m; ++d) {
                    alpha(d) = ac[d];
                    u_lin(d) = uc[d];
                }
                alpha -= Jc * u_lin;
                P[level][c] = (eps * gain[c] - dt * Jc) / (eps + dt);
                q[level][c] = (eps * offset[c] - dt * alpha) / (eps + dt);
                Q[level][c] = (MatrixXd::Identity(m, m) - dt * P[level][c]).partialPivLu().inverse();
            },
            4);

        const int n = level - 1;
        const std::size_t parents = tree.level_size(n);
        X[n].assign(parents, MatrixXd());
        y[n].assign(parents, VectorXd());
        std::vector<MatrixXd> next_gain(parents);
        std::vector<VectorXd> next_offset(parents);
        parallel_for(
            parents,
            [&](std::size_t p) {
                MatrixXd S = MatrixXd::Identity(mk, mk);
                MatrixXd rhs_u = MatrixXd::Zero(mk, m);
                VectorXd rhs_c = VectorXd::Zero(mk);
                MatrixXd mean_u = MatrixXd::Zero(m, m);
                MatrixXd mean_G = MatrixXd::Zero(m, mk);
                VectorXd mean_c = VectorXd::Zero(m);
                for (std::size_t br = 0; br < tree.branching(); ++br) {
                    const std::size_t c = tree.child_index(p, br);
                    const MatrixXd PQ = P[level][c] * Q[level][c];
                    const VectorXd affine = PQ * (beta_of(n, p, br) + dt * q[level][c]) + q[level][c];
                    mean_u += pi * PQ;
                    mean_c += pi * affine;
                    for (std::size_t l = 0; l < K; ++l) {
                        const double dWl = tree.increment_of_branch(br, static_cast<int>(l));
                        mean_G.middleCols(static_cast<Index>(l) * m, m) += (pi * eps * dWl) * PQ;
                    }
                    for (std::size_t k = 0; k < K; ++k) {
                        const double wk = pi * tree.increment_of_branch(br, static_cast<int>(k)) / dt;
                        rhs_u.middleRows(static_cast<Index>(k) * m, m) += wk * PQ;
                        rhs_c.segment(static_cast<Index>(k) * m, m) += wk * affine;
                        for (std::size_t l = 0; l < K; ++l) {
                            const double dWl = tree.increment_of_branch(br, static_cast<int>(l));
                            S.block(static_cast<Index>(k) * m, static_cast<Index>(l) * m, m, m) -=
                                (wk * eps * dWl) * PQ;
                        }
                    }
                }
                Eigen::PartialPivLU<MatrixXd> lu(S);
                X[n][p] = lu.solve(rhs_u);
                y[n][p] = lu.solve(rhs_c);
                next_gain[p] = mean_u + mean_G * X[n][p];
                next_offset[p] = mean_c + mean_G * y[n][p];
            },
            4);
        gain = std::move(next_gain);
        offset = std::move(next_offset);
    }

    TrajectoryVars out = zero_vars(problem);
    AdaptedProcess u_new(problem.tree, M, TimeSupport::state);
    std::copy(problem.u0_eps.begin(), problem.u0_eps.end(), u_new.at(0, 0).begin());
    for (int n = 0; n < N; ++n) {
        parallel_for(tree.level_size(n), [&](std::size_t p) {
            VectorXd up(m);
            for (Index d = 0; d < m; ++d) {
                up(d) = u_new.at(n, p)[d];
            }
            const VectorXd G = X[n][p] * up + y[n][p];
            auto Gp = out.G.at(n, p);
            for (Index d = 0; d < mk; ++d) {
                Gp[d] = G(d);
            }
        });
        parallel_for(tree.level_size(n + 1), [&](std::size_t c) {
            const std::size_t p = tree.parent_index(c);
            const std::size_t br = c - tree.child_index(p, 0);
            VectorXd rhs = beta_of(n, p, br) + dt * q[n + 1][c];
            const auto up = u_new.at(n, p);
            const auto Gp = out.G.at(n, p);
            for (Index d = 0; d < m; ++d) {
                rhs(d) += up[d];
                for (std::size_t k = 0; k < K; ++k) {
                    rhs(d) += eps * Gp[k * M + static_cast<std::size_t>(d)] *
                              tree.increment_of_branch(br, static_cast<int>(k));
                }
            }
            const VectorXd uc = Q[n + 1][c] * rhs;
            const VectorXd vc = P[n + 1][c] * uc + q[n + 1][c];
            auto u_out = u_new.at(n + 1, c);
            auto v_out = out.v.at(n + 1, c);
            for (Index d = 0; d < m; ++d) {
                u_out[d] = uc(d);
                v_out[d] = vc(d);
            }
        });
    }
    return out;
}

} // namespace detail

/// Solves the discrete Euler-Lagrange system to residual_el <= tol.
///
/// Newton (default) linearizes A_lambda and solves each linear system by a backward
/// decoupling sweep; steps that do not reduce the residual are relaxed. Picard freezes
/// A_lambda(u), sweeps backward, and relaxes; it contracts only for mild stiffness.
inline FbState solve_fb(const WedProblem& problem, double lambda, double tol, int max_sweeps,
                        const FbOptions& options = {})
{
    if (!(lambda > 0.0)) {
        throw DomainError("solve_fb: lambda must be positive");
    }
    if (!(tol > 0.0) || max_sweeps < 1) {
        throw DomainError("solve_fb: tol must be positive and max_sweeps >= 1");
    }
    if (!(options.relaxation > 0.0 && options.relaxation <= 1.0)) {
        throw DomainError("solve_fb: relaxation must lie in (0, 1]");
    }
    TrajectoryVars vars = options.initial ? *options.initial : zero_vars(problem);
    check_vars(problem, vars);
    FbState state = state_from_vars(problem, vars, lambda);
    double residual = residual_el(problem, lambda, state);
    const double start_residual = residual;
    for (int sweep = 0; sweep < max_sweeps && residual > tol; ++sweep) {
        const NodeEnergy energy = node_energy(problem, state.u, lambda);
        TrajectoryVars proposal = options.method == FbMethod::newton
                                      ? detail::newton_step(problem, state.u, energy, lambda)
                                      : detail::picard_backward(problem, energy.a);
        double theta = options.method == FbMethod::newton ? 1.0 : options.relaxation;
        for (int damp = 0; damp < 30; ++damp) {
            TrajectoryVars trial = lincomb(vars, theta, lincomb(proposal, -1.0, vars));
            FbState trial_state = state_from_vars(problem, trial, lambda);
            const double trial_residual = residual_el(problem, lambda, trial_state);
            if (trial_residual < residual || options.method == FbMethod::picard || damp == 29) {
                vars = std::move(trial);
                state = std::move(trial_state);
                residual = trial_residual;
                break;
            }
            theta *= options.relaxation;
        }
        if (!std::isfinite(residual) || residual > 1e6 * std::max(start_residual, 1.0)) {
            throw ConvergenceError("solve_fb: iteration diverges (residual " + detail::real_str(residual) +
                                   "); the Picard map is not contractive here, use the Newton method");
        }
    }
    if (!(residual <= tol)) {
        throw ConvergenceError("solve_fb: residual " + detail::real_str(residual) + " above tolerance after " +
                               std::to_string(max_sweeps) +
                               " sweeps; refine the time step or use relaxation 0.5");
    }
    return state;
}

struct EnergyIdentityReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;
};

/// Exact discrete Ito identity of the forward-backward system on the tree:
/// 1/2 E|u_N|^2 + sum_{n=1}^N dt (eps + dt/2) E|v_n|^2 + sum_{n=1}^N dt E(xi_n, u_n)
///   + eps^2/2 sum dt E|G|^2 = 1/2 |u_0|^2 - eps (E v_1, u_0) + 1/2 sum dt E|B|^2.
inline EnergyIdentityReport energy_identity_check(const WedProblem& problem, double lambda, const FbState& state)
{
    (void)lambda;
    const auto& tree = *problem.tree;
    const auto& grid = problem.grid;
    const double eps = problem.epsilon;
    const double dt = tree.dt();
    const int N = tree.n_steps();
    auto level_mean = [&](int n, auto&& f) {
        double s = 0.0;
        for (std::size_t i = 0; i < tree.level_size(n); ++i) {
            s += f(i);
        }
        return tree.node_prob(n) * s;
    };
    EnergyIdentityReport rep;
    rep.lhs = 0.5 * level_mean(N, [&](std::size_t i) { return inner_H(state.u.at(N, i), state.u.at(N, i), grid); });
    rep.rhs = 0.5 * inner_H(state.u.at(0, 0), state.u.at(0, 0), grid) -
              eps * level_mean(1, [&](std::size_t i) { return inner_H(state.v.at(1, i), state.u.at(0, 0), grid); });
    for (int n = 0; n < N; ++n) {
        rep.lhs += dt * (eps + 0.5 * dt) * level_mean(n + 1, [&](std::size_t i) {
                       return inner_H(state.v.at(n + 1, i), state.v.at(n + 1, i), grid);
                   });
        rep.lhs += dt * level_mean(n + 1, [&](std::size_t i) {
                       return inner_H(state.xi.at(n + 1, i), state.u.at(n + 1, i), grid);
                   });
        rep.lhs += 0.5 * eps * eps * dt *
                   level_mean(n, [&](std::size_t i) { return inner_H(state.G.at(n, i), state.G.at(n, i), grid); });
        rep.rhs += 0.5 * dt *
                   level_mean(n, [&](std::size_t i) { return inner_H(problem.B.at(n, i), problem.B.at(n, i), grid); });
    }
    rep.gap = std::abs(rep.lhs - rep.rhs);
    return rep;
}

} // namespace wed
