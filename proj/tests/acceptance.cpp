// Acceptance suite: one PASS/FAIL line per criterion. Oracles here are written
// independently of the library code they check.

#include "support.hpp"

#include "wed/baseline.hpp"
#include "wed/fbsde.hpp"
#include "wed/moreau.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/wed.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

using namespace wed;
using wed::testing::Instance;
using wed::testing::make_instance;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

double sq(double x) { return x * x; }

// ---------------------------------------------------------------- 1

/// E[x | node at level m] by brute-force averaging over the leaf block below it (K = 1).
std::vector<double> block_average(const std::vector<double>& leaves, int from, int to)
{
    const std::size_t block = std::size_t{1} << (from - to);
    std::vector<double> out(leaves.size() / block, 0.0);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        out[i / block] += leaves[i] / static_cast<double>(block);
    }
    return out;
}

Outcome criterion_tree()
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> steps(1, 8);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int N = steps(rng);
        const TreePtr tree = build_tree(N, 0.5 + 0.1 * (trial % 7));
        const double dt = tree->dt();

        // isometry: E (sum g dW)^2 = sum dt E g^2, with the integral accumulated by hand along paths
        std::vector<std::vector<double>> g(static_cast<std::size_t>(N));
        for (int n = 0; n < N; ++n) {
            g[n].resize(std::size_t{1} << n);
            for (double& x : g[n]) {
                x = normal(rng);
            }
        }
        AdaptedProcess gp(tree, 1, TimeSupport::integrand);
        for (int n = 0; n < N; ++n) {
            std::copy(g[n].begin(), g[n].end(), gp.level_values(n).begin());
        }
        const AdaptedProcess m = stochastic_integral(gp);
        std::vector<double> path(1, 0.0);
        for (int n = 0; n < N; ++n) {
            std::vector<double> next(path.size() * 2);
            for (std::size_t c = 0; c < next.size(); ++c) {
                const double dW = (c % 2 == 0 ? 1.0 : -1.0) * std::sqrt(dt);
                next[c] = path[c / 2] + g[n][c / 2] * dW;
            }
            path = std::move(next);
        }
        double lhs = 0.0;
        for (std::size_t i = 0; i < path.size(); ++i) {
            lhs += sq(path[i]) / static_cast<double>(path.size());
            worst = std::max(worst, std::abs(path[i] - m.level_values(N)[i]));
        }
        double rhs = 0.0;
        for (int n = 0; n < N; ++n) {
            for (double x : g[n]) {
                rhs += dt * sq(x) / static_cast<double>(g[n].size());
            }
        }
        worst = std::max(worst, std::abs(lhs - rhs));

        // representation round-trip on a random terminal variable
        std::vector<double> leaves(tree->level_size(N));
        for (double& x : leaves) {
            x = normal(rng);
        }
        const MartingaleRepresentation rep = martingale_representation(tree, LevelSlice{N, 1, leaves});
        const AdaptedProcess rebuilt = stochastic_integral(rep.integrand);
        double mean = 0.0;
        for (double x : leaves) {
            mean += x / static_cast<double>(leaves.size());
        }
        worst = std::max(worst, std::abs(rep.mean[0] - mean));
        for (std::size_t i = 0; i < leaves.size(); ++i) {
            worst = std::max(worst, std::abs(rep.mean[0] + rebuilt.level_values(N)[i] - leaves[i]));
        }

        // tower property against block averages
        for (int to = 0; to <= N; ++to) {
            const std::vector<double> oracle = block_average(leaves, N, to);
            const LevelSlice direct = conditional_expectation(*tree, LevelSlice{N, 1, leaves}, to);
            for (int mid = to; mid <= N; ++mid) {
                const LevelSlice inner = conditional_expectation(*tree, LevelSlice{N, 1, leaves}, mid);
                const LevelSlice outer = conditional_expectation(*tree, inner, to);
                for (std::size_t i = 0; i < oracle.size(); ++i) {
                    worst = std::max(worst, std::abs(outer.values[i] - oracle[i]));
                    worst = std::max(worst, std::abs(direct.values[i] - oracle[i]));
                }
            }
        }
    }
    return {worst <= 1e-10, fmt("max residual %.3e over 100 instances (tol 1e-10)", worst)};
}

// ---------------------------------------------------------------- 2

Outcome criterion_moreau()
{
    const Grid1D grid(8);
    std::mt19937_64 rng(2);
    double lip = 0.0, identity = 0.0, below = 0.0, env_grad = 0.0;
    for (auto kind : {EnergyKind::quadratic_heat, EnergyKind::p_laplace, EnergyKind::allen_cahn_convex_split}) {
        const EnergyModel model = EnergyModel::make(kind, kind == EnergyKind::p_laplace ? 3.0 : 2.0);
        for (double lambda : {1e-1, 1e-2, 1e-3}) {
            const YosidaParams params{lambda, 1e-13, 200};
            for (int trial = 0; trial < 10; ++trial) {
                const Field w1 = random_smooth_field(grid, rng, 1.5);
                const Field w2 = random_smooth_field(grid, rng, 1.5);
                const Field J1 = resolvent(model, params, 0.3, w1, grid);
                const Field J2 = resolvent(model, params, 0.3, w2, grid);
                const Field A1 = yosida(model, params, 0.3, w1, grid);
                const Field A2 = yosida(model, params, 0.3, w2, grid);
                double dw = 0.0, dJ = 0.0, dA = 0.0, gap = 0.0;
                for (std::size_t i = 0; i < w1.size(); ++i) {
                    dw += grid.h * sq(w1[i] - w2[i]);
                    dJ += grid.h * sq(J1[i] - J2[i]);
                    dA += grid.h * sq(A1[i] - A2[i]);
                    gap += grid.h * sq(w1[i] - J1[i] - lambda * A1[i]);
                }
                lip = std::max(lip, std::sqrt(dJ) / std::sqrt(dw) - 1.0);
                lip = std::max(lip, lambda * std::sqrt(dA) / std::sqrt(dw) - 1.0);
                identity = std::max(identity, std::sqrt(gap));

                // plain energy evaluated by hand on the grid
                double phi = 0.0;
                for (std::size_t j = 0; j <= grid.n_interior; ++j) {
                    const double left = j == 0 ? 0.0 : w1[j - 1];
                    const double right = j == grid.n_interior ? 0.0 : w1[j];
                    const double g = (right - left) / grid.h;
                    phi += grid.h * (kind == EnergyKind::p_laplace ? std::pow(std::abs(g), 3.0) / 3.0 : 0.5 * g * g);
                }
                if (kind == EnergyKind::allen_cahn_convex_split) {
                    for (double x : w1) {
                        phi += grid.h * 0.25 * x * x * x * x;
                    }
                }
                const double env = moreau_envelope(model, params, 0.3, w1, grid);
                below = std::max(below, env - phi);

                // central differences of the envelope, per node, against the H-gradient A_lambda
                double num = 0.0, den = 0.0;
                const double s = 1e-6;
                for (std::size_t i = 0; i < w1.size(); ++i) {
                    Field wp = w1, wm = w1;
                    wp[i] += s;
                    wm[i] -= s;
                    const double fd = (moreau_envelope(model, params, 0.3, wp, grid) -
                                       moreau_envelope(model, params, 0.3, wm, grid)) /
                                      (2.0 * s * grid.h);
                    num += sq(fd - A1[i]);
                    den += sq(A1[i]);
                }
                env_grad = std::max(env_grad, std::sqrt(num / den));
            }
        }
    }
    const bool pass = lip <= 1e-9 && identity <= 1e-9 && below <= 1e-12 && env_grad <= 1e-5;
    return {pass, fmt("Lipschitz excess %.2e, |I-J-lambda A| %.2e, ", lip, identity) +
                      fmt("Phi_lambda-Phi %.2e, envelope-gradient rel err %.2e", below, env_grad)};
}

// ---------------------------------------------------------------- 3

Outcome criterion_gradient()
{
    double worst = 0.0;
    for (auto kind : {EnergyKind::quadratic_heat, EnergyKind::p_laplace, EnergyKind::allen_cahn_convex_split,
                      EnergyKind::quadratic_reaction, EnergyKind::zero}) {
        const Instance s = make_instance(kind, kind == EnergyKind::p_laplace ? 3.0 : 2.0, 3, 4);
        const WedProblem problem = s.problem(0.2, 1e-13);
        const double lambda = 1e-1;
        for (int trial = 0; trial < 50; ++trial) {
            const TrajectoryVars x = random_vars(problem, 300 + static_cast<std::uint64_t>(trial), 0.5);
            const TrajectoryVars g = metric_to_partials(problem, wed_gradient(problem, x, lambda));
            const double step = 1e-5;
            double num = 0.0, den = 0.0;
            auto probe = [&](AdaptedProcess TrajectoryVars::*part, bool skip_root) {
                const auto analytic = (g.*part).values();
                const std::size_t start = skip_root ? problem.M() : 0;
                for (std::size_t i = start; i < analytic.size(); ++i) {
                    TrajectoryVars plus = x, minus = x;
                    (plus.*part).values()[i] += step;
                    (minus.*part).values()[i] -= step;
                    const double fd =
                        (wed_value(problem, plus, lambda) - wed_value(problem, minus, lambda)) / (2.0 * step);
                    num += sq(fd - analytic[i]);
                    den += sq(fd);
                }
            };
            probe(&TrajectoryVars::v, true);
            probe(&TrajectoryVars::G, false);
            worst = std::max(worst, std::sqrt(num / den));
        }
    }
    return {worst <= 1e-6, fmt("worst relative error %.3e over 5 energies x 50 points (tol 1e-6)", worst)};
}

// ---------------------------------------------------------------- 4

Outcome criterion_minimizer_el()
{
    bool pass = true;
    double worst_ratio = 0.0, worst_value = 0.0;
    for (auto kind : {EnergyKind::quadratic_heat, EnergyKind::p_laplace}) {
        const Instance s = make_instance(kind, kind == EnergyKind::p_laplace ? 3.0 : 2.0, 4, 8);
        for (double eps : {1e-1, 1e-2}) {
            const WedProblem problem = s.problem(eps, 1e-10);
            for (double lambda : {1e-2, 1e-3}) {
                MinimizeOptions opt;
                opt.outer_tol = 1e-8;
                const SolveReport rep = minimize(problem, wed::testing::lambda_schedule_to(lambda), opt);
                const double tol = 5.0 * (opt.outer_tol + problem.inner_tol / lambda);
                const double r = residual_el(problem, lambda, rep.vars);
                const FbState fb = solve_fb(problem, lambda, 1e-10, 50);
                const double dv = std::abs(wed_value(problem, state_vars(problem, fb), lambda) - rep.value);
                worst_ratio = std::max(worst_ratio, r / tol);
                worst_value = std::max(worst_value, dv);
                pass = pass && rep.converged && r <= tol && dv <= 1e-7;
            }
        }
    }
    return {pass, fmt("worst residual/tolerance %.3f, worst |value(fb) - value(min)| %.3e (tol 1e-7)", worst_ratio,
                      worst_value)};
}

// ---------------------------------------------------------------- 5

Outcome criterion_oracle()
{
    const TreePtr tree = build_tree(1, 1.0);
    const Grid1D grid(1);
    const EnergyModel model = EnergyModel::make(EnergyKind::quadratic_reaction);
    const double eps = 1.0, lambda = 0.1, u0 = 1.0, b = 0.3;
    const Field profile{b};
    WedProblem problem = make_problem(tree, grid, model, eps, constant_noise(tree, grid, profile), Field{u0});
    MinimizeOptions opt;
    opt.outer_tol = 1e-12;
    const SolveReport rep = minimize(problem, {lambda}, opt);

    // value by hand: dt = 1, h = 1/2, weights 1 and 1/2, Phi_lambda(u) = h u^2 / (2 (1 + lambda))
    const double h = grid.h, dt = 1.0, w1 = eps / (eps + dt);
    const double s0 = tree->increment(1, 0, 0), s1 = tree->increment(1, 1, 0);
    auto value = [&](const std::array<double, 3>& x) {
        const double u_a = u0 + dt * x[0] + (b + eps * x[2]) * s0;
        const double u_b = u0 + dt * x[1] + (b + eps * x[2]) * s1;
        const double kinetic = dt * h * (0.5 * eps * 0.5 * (sq(x[0]) + sq(x[1])) + 0.5 * eps * eps * sq(x[2]));
        const double potential = dt * w1 * 0.5 * (h * sq(u_a) + h * sq(u_b)) / (2.0 * (1.0 + lambda));
        return kinetic + potential;
    };
    std::array<double, 3> best{0.0, 0.0, 0.0};
    double best_value = value(best);
    std::array<double, 3> center{0.0, 0.0, 0.0};
    double half = 3.0;
    int points = 61;
    while (half > 1e-10) {
        const std::array<double, 3> c = center;
        for (int i = 0; i < points; ++i) {
            for (int j = 0; j < points; ++j) {
                for (int k = 0; k < points; ++k) {
                    const double step = 2.0 * half / (points - 1);
                    const std::array<double, 3> x{c[0] - half + i * step, c[1] - half + j * step,
                                                  c[2] - half + k * step};
                    const double f = value(x);
                    if (f < best_value) {
                        best_value = f;
                        best = x;
                    }
                }
            }
        }
        half = 4.0 * half / (points - 1);
        center = best;
        points = 21;
    }
    const double err = std::max({std::abs(rep.vars.v.at(1, 0)[0] - best[0]), std::abs(rep.vars.v.at(1, 1)[0] - best[1]),
                                 std::abs(rep.vars.G.at(0, 0)[0] - best[2])});
    return {err <= 1e-6, fmt("max |minimizer - grid search| %.3e (tol 1e-6), oracle value %.12f", err, best_value)};
}

// ---------------------------------------------------------------- 6

Outcome criterion_linear()
{
    const Instance s = make_instance(EnergyKind::quadratic_heat, 2.0, 4, 8);
    const double eps = 0.1, lambda = 1e-2;
    const WedProblem problem = s.problem(eps);
    const ScenarioTree& tree = *problem.tree;
    const int N = tree.n_steps();
    const auto M = static_cast<Eigen::Index>(problem.M());
    const double dt = tree.dt(), h = problem.grid.h, r = eps / (eps + dt);

    // A_lambda = (I + lambda R)^{-1} R for the Dirichlet Laplacian R
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(M, M);
    for (Eigen::Index i = 0; i < M; ++i) {
        R(i, i) = 2.0 / (h * h);
        if (i + 1 < M) {
            R(i, i + 1) = R(i + 1, i) = -1.0 / (h * h);
        }
    }
    const Eigen::MatrixXd Al = (Eigen::MatrixXd::Identity(M, M) + lambda * R).ldlt().solve(R);

    // unknowns: v at levels 1..N, then G at levels 0..N-1, node-major
    std::vector<Eigen::Index> v_off(static_cast<std::size_t>(N) + 1), g_off(static_cast<std::size_t>(N));
    Eigen::Index count = 0;
    for (int n = 1; n <= N; ++n) {
        v_off[n] = count;
        count += static_cast<Eigen::Index>(std::size_t{1} << n) * M;
    }
    for (int n = 0; n < N; ++n) {
        g_off[n] = count;
        count += static_cast<Eigen::Index>(std::size_t{1} << n) * M;
    }
    // u = L x + a over the nodes of levels 1..N
    std::vector<Eigen::Index> u_off(static_cast<std::size_t>(N) + 1);
    Eigen::Index rows = 0;
    for (int n = 1; n <= N; ++n) {
        u_off[n] = rows;
        rows += static_cast<Eigen::Index>(std::size_t{1} << n) * M;
    }
    std::vector<Eigen::Triplet<double>> Lt, Wt, Dt;
    Eigen::VectorXd a = Eigen::VectorXd::Zero(rows);
    const Eigen::VectorXd u0 = Eigen::Map<const Eigen::VectorXd>(problem.u0_eps.data(), M);
    const double bsd = std::sqrt(dt);
    for (int n = 1; n <= N; ++n) {
        for (std::size_t c = 0; c < (std::size_t{1} << n); ++c) {
            Eigen::VectorXd aff = u0;
            std::size_t node = c;
            for (int level = n; level >= 1; --level) {
                const std::size_t parent = node / 2;
                const double dW = node % 2 == 0 ? bsd : -bsd;
                for (Eigen::Index d = 0; d < M; ++d) {
                    const Eigen::Index row = u_off[n] + static_cast<Eigen::Index>(c) * M + d;
                    Lt.emplace_back(row, v_off[level] + static_cast<Eigen::Index>(node) * M + d, dt);
                    Lt.emplace_back(row, g_off[level - 1] + static_cast<Eigen::Index>(parent) * M + d, eps * dW);
                    aff(d) += problem.B.at(level - 1, parent)[static_cast<std::size_t>(d)] * dW;
                }
                node = parent;
            }
            a.segment(u_off[n] + static_cast<Eigen::Index>(c) * M, M) = aff;
            // potential weight dt w_n P_n h A_lambda
            const double wt = dt * std::pow(r, n) * std::pow(0.5, n) * h;
            for (Eigen::Index i = 0; i < M; ++i) {
                for (Eigen::Index j = 0; j < M; ++j) {
                    Wt.emplace_back(u_off[n] + static_cast<Eigen::Index>(c) * M + i,
                                    u_off[n] + static_cast<Eigen::Index>(c) * M + j, wt * Al(i, j));
                }
            }
            // kinetic weight of v at level n: dt w_{n-1} P_n h eps
            const double kv = dt * std::pow(r, n - 1) * std::pow(0.5, n) * h * eps;
            for (Eigen::Index d = 0; d < M; ++d) {
                Dt.emplace_back(v_off[n] + static_cast<Eigen::Index>(c) * M + d,
                                v_off[n] + static_cast<Eigen::Index>(c) * M + d, kv);
            }
        }
        for (std::size_t p = 0; p < (std::size_t{1} << (n - 1)); ++p) {
            const double kg = dt * std::pow(r, n - 1) * std::pow(0.5, n - 1) * h * eps * eps;
            for (Eigen::Index d = 0; d < M; ++d) {
                Dt.emplace_back(g_off[n - 1] + static_cast<Eigen::Index>(p) * M + d,
                                g_off[n - 1] + static_cast<Eigen::Index>(p) * M + d, kg);
            }
        }
    }
    Eigen::SparseMatrix<double> L(rows, count), W(rows, rows), D(count, count);
    L.setFromTriplets(Lt.begin(), Lt.end());
    W.setFromTriplets(Wt.begin(), Wt.end());
    D.setFromTriplets(Dt.begin(), Dt.end());
    const Eigen::SparseMatrix<double> H = D + Eigen::SparseMatrix<double>(L.transpose() * W * L);
    const Eigen::VectorXd rhs = -(L.transpose() * (W * a));
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(H);
    const Eigen::VectorXd x = solver.solve(rhs);

    MinimizeOptions opt;
    opt.outer_tol = 1e-11;
    const SolveReport rep = minimize(problem, {1e-1, lambda}, opt);
    double dist = 0.0, ref = 0.0;
    for (int n = 1; n <= N; ++n) {
        const double w = dt * std::pow(0.5, n) * h;
        for (std::size_t c = 0; c < (std::size_t{1} << n); ++c) {
            for (Eigen::Index d = 0; d < M; ++d) {
                const double xs = x(v_off[n] + static_cast<Eigen::Index>(c) * M + d);
                dist += w * sq(rep.vars.v.at(n, c)[static_cast<std::size_t>(d)] - xs);
                ref += w * sq(xs);
            }
        }
    }
    for (int n = 0; n < N; ++n) {
        const double w = dt * std::pow(0.5, n) * h;
        for (std::size_t p = 0; p < (std::size_t{1} << n); ++p) {
            for (Eigen::Index d = 0; d < M; ++d) {
                const double xs = x(g_off[n] + static_cast<Eigen::Index>(p) * M + d);
                dist += w * sq(rep.vars.G.at(n, p)[static_cast<std::size_t>(d)] - xs);
                ref += w * sq(xs);
            }
        }
    }
    dist = std::sqrt(dist);
    return {rep.converged && dist <= 1e-7,
            fmt("trajectory-norm distance %.3e (tol 1e-7), solution norm %.3e", dist, std::sqrt(ref))};
}

// ---------------------------------------------------------------- 7

Outcome criterion_energy_identity()
{
    double worst = 0.0;
    for (auto kind : {EnergyKind::quadratic_heat, EnergyKind::p_laplace, EnergyKind::allen_cahn_convex_split,
                      EnergyKind::quadratic_reaction, EnergyKind::zero}) {
        const Instance s = make_instance(kind, kind == EnergyKind::p_laplace ? 3.0 : 2.0, 4, 8);
        const WedProblem problem = s.problem(0.1);
        const double lambda = 1e-2;
        const FbState fb = solve_fb(problem, lambda, 1e-10, 50);
        // identity assembled here from the state, independent of the library's report
        const ScenarioTree& tree = *problem.tree;
        const Grid1D& grid = problem.grid;
        const double eps = problem.epsilon, dt = tree.dt();
        const int N = tree.n_steps();
        auto E = [&](int n, const std::function<double(std::size_t)>& f) {
            double acc = 0.0;
            for (std::size_t i = 0; i < tree.level_size(n); ++i) {
                acc += f(i);
            }
            return acc / static_cast<double>(tree.level_size(n));
        };
        auto dot = [&](std::span<const double> x, std::span<const double> y) {
            double acc = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                acc += grid.h * x[i] * y[i];
            }
            return acc;
        };
        double lhs = 0.5 * E(N, [&](std::size_t i) { return dot(fb.u.at(N, i), fb.u.at(N, i)); });
        double rhs = 0.5 * dot(fb.u.at(0, 0), fb.u.at(0, 0)) -
                     eps * E(1, [&](std::size_t i) { return dot(fb.v.at(1, i), fb.u.at(0, 0)); });
        for (int n = 1; n <= N; ++n) {
            lhs += dt * (eps + 0.5 * dt) * E(n, [&](std::size_t i) { return dot(fb.v.at(n, i), fb.v.at(n, i)); });
            lhs += dt * E(n, [&](std::size_t i) { return dot(fb.xi.at(n, i), fb.u.at(n, i)); });
            lhs += 0.5 * eps * eps * dt *
                   E(n - 1, [&](std::size_t i) { return dot(fb.G.at(n - 1, i), fb.G.at(n - 1, i)); });
            rhs += 0.5 * dt * E(n - 1, [&](std::size_t i) { return dot(problem.B.at(n - 1, i), problem.B.at(n - 1, i)); });
        }
        worst = std::max(worst, std::abs(lhs - rhs));
        worst = std::max(worst, energy_identity_check(problem, lambda, fb).gap);
    }
    return {worst <= 1e-8, fmt("worst gap %.3e over 5 energies (tol 1e-8)", worst)};
}

// ---------------------------------------------------------------- 8, 9

struct SweepGrid {
    std::vector<double> eps;
    std::vector<double> lambda;
    std::vector<double> err;               ///< per eps at the final lambda
    std::vector<double> eps_v, eps_G;      ///< per eps at the final lambda
    std::vector<std::map<std::string, double>> monitors;   ///< eps-major, all lambdas
};

const SweepGrid& sweep_grid()
{
    static const SweepGrid grid = [] {
        SweepGrid g;
        Instance s = make_instance(EnergyKind::quadratic_heat, 2.0, 8, 16);
        s.u0 = wed::testing::hat_profile(s.grid);
        const BaselineSolution ref = solve_reference(s.tree, s.grid, s.model, s.u0, s.B, 1e-10);
        for (int k = 0; k < 7; ++k) {
            g.eps.push_back(std::pow(0.5, k));
        }
        for (int j = 0; j < 10; ++j) {
            g.lambda.push_back(1e-1 * std::pow(0.5, j));
        }
        for (double eps : g.eps) {
            const WedProblem problem = s.problem(eps);
            std::optional<TrajectoryVars> warm;
            SolveReport rep;
            for (double lambda : g.lambda) {
                rep = minimize(problem, {lambda}, {}, warm);
                g.monitors.push_back(rep.monitors);
                warm = rep.vars;
            }
            g.err.push_back(trajectory_error(rep.u, ref.u, *s.tree, s.grid).err_L2H);
            g.eps_v.push_back(rep.monitors.at("eps_v"));
            g.eps_G.push_back(rep.monitors.at("eps_G"));
        }
        return g;
    }();
    return grid;
}

Outcome criterion_convergence()
{
    const SweepGrid& g = sweep_grid();
    bool pass = true;
    std::string errs;
    for (std::size_t i = 0; i < g.err.size(); ++i) {
        errs += fmt("%.4g ", g.err[i]);
        if (i > 0) {
            pass = pass && g.err[i] < g.err[i - 1] && g.eps_v[i] < g.eps_v[i - 1] && g.eps_G[i] < g.eps_G[i - 1];
        }
    }
    pass = pass && g.eps_v.back() <= 0.1 * g.eps_v.front() && g.eps_G.back() <= 0.25 * g.eps_G.front();
    return {pass, "err_L2H " + errs + fmt("| eps_v %.3g -> %.3g, eps_G %.3g -> ", g.eps_v.front(), g.eps_v.back(),
                                          g.eps_G.front()) +
                      fmt("%.3g", g.eps_G.back())};
}

Outcome criterion_monitors()
{
    const SweepGrid& g = sweep_grid();
    const std::size_t per_eps = g.lambda.size();
    bool pass = true;
    std::string detail = "max ratio to value at (eps,lambda)=(1,1e-1):";
    std::string run_detail = " | to max over the eps=1 run:";
    for (const char* key : {"est1", "est2", "est3", "est4", "est5", "est6"}) {
        const double coarse = g.monitors.front().at(key);
        double coarse_run = 0.0;
        for (std::size_t j = 0; j < per_eps; ++j) {
            coarse_run = std::max(coarse_run, g.monitors[j].at(key));
        }
        double worst = 0.0;
        for (const auto& m : g.monitors) {
            worst = std::max(worst, m.at(key));
        }
        pass = pass && worst <= 2.0 * coarse;
        detail += std::string(" ") + key + fmt(" %.3f", worst / coarse);
        run_detail += std::string(" ") + key + fmt(" %.3f", worst / coarse_run);
    }
    return {pass, detail + run_detail};
}

// ---------------------------------------------------------------- 10

Outcome criterion_uniqueness()
{
    const Instance s = make_instance(EnergyKind::p_laplace, 3.0, 4, 8);
    const WedProblem problem = s.problem(0.1);
    const SolveReport from_zero = minimize(problem, {1e-1, 1e-2});
    const SolveReport from_random = minimize(problem, {1e-1, 1e-2}, {}, random_vars(problem, 77, 1.0));
    const double d_min = vars_distance(problem, from_zero.vars, from_random.vars);

    // the Picard map contracts only for mild stiffness, hence the reaction energy here
    const Instance t = make_instance(EnergyKind::quadratic_reaction, 2.0, 4, 4);
    const WedProblem mild = t.problem(0.5);
    FbOptions picard;
    picard.method = FbMethod::picard;
    const FbState a = solve_fb(mild, 1e-1, 1e-12, 2000, picard);
    picard.initial = random_vars(mild, 78, 1.0);
    const FbState b = solve_fb(mild, 1e-1, 1e-12, 2000, picard);
    const double d_fb = vars_distance(mild, state_vars(mild, a), state_vars(mild, b));
    return {d_min <= 1e-6 && d_fb <= 1e-8,
            fmt("optimizer starts differ by %.3e (tol 1e-6), Picard starts by %.3e (tol 1e-8)", d_min, d_fb)};
}

// ---------------------------------------------------------------- 11

Outcome criterion_well_prepared()
{
    const Grid1D grid(32);
    Field u0 = wed::testing::hat_profile(grid);
    const Field rough = wed::testing::sine_profile(grid, 0.3, 11);
    for (std::size_t i = 0; i < u0.size(); ++i) {
        u0[i] += rough[i];
    }
    bool pass = true;
    std::string detail;
    for (double p : {2.0, 3.0}) {
        const EnergyModel model = EnergyModel::make(p == 2.0 ? EnergyKind::quadratic_heat : EnergyKind::p_laplace, p);
        double prev_energy = INFINITY, prev_dist = INFINITY;
        for (int k = 0; k < 8; ++k) {
            const double eps = std::pow(0.5, k);
            const Field u = prepare_initial_datum(u0, eps, model, grid);
            double v0 = 0.0, dist = 0.0;
            for (std::size_t j = 0; j <= grid.n_interior; ++j) {
                const double left = j == 0 ? 0.0 : u[j - 1];
                const double right = j == grid.n_interior ? 0.0 : u[j];
                v0 += sq(right - left) / grid.h;
            }
            for (std::size_t i = 0; i < u.size(); ++i) {
                dist += grid.h * sq(u[i] - u0[i]);
            }
            const double energy = eps * std::pow(std::sqrt(v0), p), d = std::sqrt(dist);
            pass = pass && energy < prev_energy && d < prev_dist;
            prev_energy = energy;
            prev_dist = d;
        }
        detail += fmt("p=%g: eps|u|^p %.3e, |u-u0| %.3e at eps=1/128; ", p, prev_energy, prev_dist);
    }
    return {pass, detail};
}

} // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"tree calculus exactness", criterion_tree},
        {"Moreau-Yosida suite", criterion_moreau},
        {"gradient vs finite differences", criterion_gradient},
        {"minimizer solves Euler-Lagrange system", criterion_minimizer_el},
        {"tiny-instance grid-search oracle", criterion_oracle},
        {"linear case vs assembled sparse system", criterion_linear},
        {"forward-backward energy identity", criterion_energy_identity},
        {"epsilon -> 0 convergence to reference", criterion_convergence},
        {"uniform estimate monitors", criterion_monitors},
        {"uniqueness from different starts", criterion_uniqueness},
        {"well-prepared initial data", criterion_well_prepared},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        selected.push_back(std::atoi(argv[i]));
    }
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && std::find(selected.begin(), selected.end(), id) == selected.end()) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = criteria[i].second();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s %2d %-40s %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", id, criteria[i].first,
                    out.detail.c_str(), secs);
        std::fflush(stdout);
        failures += out.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
