#pragma once

#include "wed/energy.hpp"
#include "wed/errors.hpp"
#include "wed/moreau.hpp"
#include "wed/parallel.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace wed {

/// Proximal implicit Euler-Maruyama solution; xi is stored at the child node (levels 1..N).
struct BaselineSolution {
    AdaptedProcess u;
    AdaptedProcess xi;
};

/// u_child = J_dt(t_{n+1}; u_parent + B_n ΔW), xi = (u_parent + B_n ΔW - u_child)/dt.
inline BaselineSolution solve_reference(const TreePtr& tree_ptr, const Grid1D& grid, const EnergyModel& model,
                                        std::span<const double> u0, const AdaptedProcess& B, double inner_tol = 1e-10,
                                        int inner_max_iter = 200)
{
    const auto& tree = *tree_ptr;
    const std::size_t M = grid.n_interior;
    const auto K = static_cast<std::size_t>(tree.n_channels());
    detail::require_size(u0.size(), M, "solve_reference u0");
    if (B.tree_ptr() != tree_ptr || B.support() != TimeSupport::integrand) {
        throw SizeMismatch("solve_reference: B must be integrand-like on the same tree");
    }
    detail::require_size(B.width(), M * K, "solve_reference B");
    const double dt = tree.dt();
    const YosidaParams params{dt, inner_tol, inner_max_iter};
    BaselineSolution sol{AdaptedProcess(tree_ptr, M, TimeSupport::state), AdaptedProcess(tree_ptr, M, TimeSupport::state)};
    std::copy(u0.begin(), u0.end(), sol.u.at(0, 0).begin());
    for (int n = 0; n < tree.n_steps(); ++n) {
        const double t = tree.time(n + 1);
        parallel_for(
            tree.level_size(n + 1),
            [&](std::size_t c) {
                const std::size_t p = tree.parent_index(c);
                const auto up = sol.u.at(n, p);
                const auto Bp = B.at(n, p);
                Field w(M);
                for (std::size_t d = 0; d < M; ++d) {
                    double value = up[d];
                    for (std::size_t k = 0; k < K; ++k) {
                        value += Bp[k * M + d] * tree.increment(n + 1, c, static_cast<int>(k));
                    }
                    w[d] = value;
                }
                const ProxPoint prox = prox_point(model, params, t, w, grid);
                std::copy(prox.J.begin(), prox.J.end(), sol.u.at(n + 1, c).begin());
                std::copy(prox.A.begin(), prox.A.end(), sol.xi.at(n + 1, c).begin());
            },
            16);
    }
    return sol;
}

struct TrajectoryError {
    double err_L2H = 0.0;
    double err_sup_H = 0.0;
};

/// err_L2H = sqrt(sum_{n=1..N} dt E|a_n - b_n|_H^2), err_sup_H = max_{n=0..N} sqrt(E|a_n - b_n|_H^2).
inline TrajectoryError trajectory_error(const AdaptedProcess& a, const AdaptedProcess& b, const ScenarioTree& tree,
                                        const Grid1D& grid)
{
    if (a.support() != TimeSupport::state || b.support() != TimeSupport::state) {
        throw SizeMismatch("trajectory_error: inputs must be state-like");
    }
    if (&a.tree() != &tree || &b.tree() != &tree) {
        if (a.tree().n_steps() != tree.n_steps() || b.tree().n_steps() != tree.n_steps() ||
            a.tree().n_channels() != tree.n_channels() || b.tree().n_channels() != tree.n_channels()) {
            throw SizeMismatch("trajectory_error: inputs live on different trees");
        }
    }
    detail::require_size(a.width(), grid.n_interior, "trajectory_error a");
    detail::require_size(b.width(), grid.n_interior, "trajectory_error b");
    TrajectoryError err;
    double l2 = 0.0;
    for (int n = 0; n <= tree.n_steps(); ++n) {
        const auto av = a.level_values(n);
        const auto bv = b.level_values(n);
        double s = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            s += d * d;
        }
        const double mean = tree.node_prob(n) * grid.h * s;
        if (n >= 1) {
            l2 += tree.dt() * mean;
        }
        err.err_sup_H = std::max(err.err_sup_H, std::sqrt(mean));
    }
    err.err_L2H = std::sqrt(l2);
    return err;
}

struct BaselineEnergyReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;
};

/// 1/2 E|u_N|^2 + sum dt E(xi_{n+1}, u_{n+1}) + 1/2 sum dt^2 E|xi_{n+1}|^2 = 1/2 |u_0|^2 + 1/2 sum dt E|B_n|^2.
inline BaselineEnergyReport baseline_energy_identity(const BaselineSolution& sol, const AdaptedProcess& B,
                                                     const Grid1D& grid)
{
    const auto& tree = sol.u.tree();
    const double dt = tree.dt();
    const int N = tree.n_steps();
    auto level_mean = [&](int n, auto&& f) {
        double s = 0.0;
        for (std::size_t i = 0; i < tree.level_size(n); ++i) {
            s += f(i);
        }
        return tree.node_prob(n) * s;
    };
    BaselineEnergyReport rep;
    rep.lhs = 0.5 * level_mean(N, [&](std::size_t i) { return inner_H(sol.u.at(N, i), sol.u.at(N, i), grid); });
    rep.rhs = 0.5 * inner_H(sol.u.at(0, 0), sol.u.at(0, 0), grid);
    for (int n = 0; n < N; ++n) {
        rep.lhs += level_mean(n + 1, [&](std::size_t i) {
            const auto xi = sol.xi.at(n + 1, i);
            return dt * inner_H(xi, sol.u.at(n + 1, i), grid) + 0.5 * dt * dt * inner_H(xi, xi, grid);
        });
        rep.rhs += 0.5 * dt * level_mean(n, [&](std::size_t i) { return inner_H(B.at(n, i), B.at(n, i), grid); });
    }
    rep.gap = std::abs(rep.lhs - rep.rhs);
    return rep;
}

} // namespace wed
