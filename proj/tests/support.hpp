#pragma once

#include "wed/baseline.hpp"
#include "wed/energy.hpp"
#include "wed/fbsde.hpp"
#include "wed/scenario_tree.hpp"
#include "wed/spatial.hpp"
#include "wed/wed.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace wed::testing {

inline Field sine_profile(const Grid1D& grid, double amplitude, int mode = 1)
{
    Field f(grid.n_interior);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = amplitude * std::sin(mode * std::numbers::pi * grid.node_x(i));
    }
    return f;
}

inline Field hat_profile(const Grid1D& grid)
{
    Field f(grid.n_interior);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double x = grid.node_x(i);
        f[i] = 1.0 - std::abs(2.0 * x - 1.0);
    }
    return f;
}

struct Instance {
    TreePtr tree;
    Grid1D grid;
    EnergyModel model;
    Field u0;
    AdaptedProcess B;

    WedProblem problem(double epsilon, double inner_tol = 1e-10) const
    {
        WedProblem p = make_problem(tree, grid, model, epsilon, B, prepare_initial_datum(u0, epsilon, model, grid));
        p.inner_tol = inner_tol;
        return p;
    }
};

inline Instance make_instance(EnergyKind kind, double p, int n_steps, std::size_t n_interior, double noise = 0.5,
                              double horizon = 1.0)
{
    Instance s{build_tree(n_steps, horizon), Grid1D(n_interior), EnergyModel::make(kind, p), {}, {}};
    s.u0 = sine_profile(s.grid, 1.0);
    const Field profile = sine_profile(s.grid, noise);
    s.B = constant_noise(s.tree, s.grid, profile);
    return s;
}

inline std::vector<double> lambda_schedule_to(double lambda_final, double start = 1e-1, double factor = 0.1)
{
    std::vector<double> out{start};
    while (out.back() > lambda_final * (1.0 + 1e-12)) {
        out.push_back(out.back() * factor);
    }
    return out;
}

} // namespace wed::testing
