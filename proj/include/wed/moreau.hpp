#pragma once

#include "wed/energy.hpp"
#include "wed/errors.hpp"
#include "wed/spatial.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>

namespace wed {

struct YosidaParams {
    double lambda = 1e-1;
    double inner_tol = 1e-10;
    int inner_max_iter = 200;

    void validate() const
    {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
            throw DomainError("YosidaParams: lambda must be positive");
        }
        if (!(inner_tol > 0.0)) {
            throw DomainError("YosidaParams: inner_tol must be positive");
        }
        if (inner_max_iter < 1) {
            throw DomainError("YosidaParams: inner_max_iter must be >= 1");
        }
    }
};

/// Everything one resolvent solve yields at a point w.
struct ProxPoint {
    Field J;            ///< resolvent J_lambda(w)
    Field A;            ///< Yosida value (w - J)/lambda
    double envelope = 0;///< Phi(J) + |w - J|^2/(2 lambda)
    int iterations = 0;
};

namespace detail {

inline double prox_objective(const EnergyModel& model, double lambda, double t, std::span<const double> z,
                             std::span<const double> w, const Grid1D& grid)
{
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        s += (z[i] - w[i]) * (z[i] - w[i]);
    }
    return 0.5 * grid.h * s + lambda * phi_value(model, t, z, grid);
}

inline Field prox_gradient(const EnergyModel& model, double lambda, double t, std::span<const double> z,
                           std::span<const double> w, const Grid1D& grid)
{
    Field g = a_apply(model, t, z, grid);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = z[i] - w[i] + lambda * g[i];
    }
    return g;
}

} // namespace detail

/// argmin_z |z - w|_H^2/2 + lambda Phi(t,z) by damped Newton in the H metric.
inline ProxPoint prox_point(const EnergyModel& model, const YosidaParams& params, double t, std::span<const double> w,
                            const Grid1D& grid)
{
    params.validate();
    detail::require_size(w.size(), grid.n_interior, "resolvent");
    const double lambda = params.lambda;
    ProxPoint out;
    out.J.assign(w.begin(), w.end());
    Field g = detail::prox_gradient(model, lambda, t, out.J, w, grid);
    double gnorm = norm_H(g, grid);
    double f = detail::prox_objective(model, lambda, t, out.J, w, grid);
    int it = 0;
    while (gnorm > params.inner_tol) {
        if (it == params.inner_max_iter) {
            throw ConvergenceError("resolvent: no convergence after " + std::to_string(it) +
                                   " Newton steps (gradient norm " + detail::real_str(gnorm) +
                                   "); reduce the lambda step");
        }
        ++it;
        Tridiagonal hess = a_jacobian(model, t, out.J, grid);
        for (std::size_t i = 0; i < hess.diag.size(); ++i) {
            hess.diag[i] = 1.0 + lambda * hess.diag[i];
        }
        for (double& o : hess.off) {
            o *= lambda;
        }
        const Field step = solve_tridiagonal(hess, g);
        const double slope = -inner_H(g, step, grid);
        double alpha = 1.0;
        bool accepted = false;
        bool stalled = false;
        Field trial(out.J.size());
        for (int ls = 0; ls < 40; ++ls) {
            for (std::size_t i = 0; i < trial.size(); ++i) {
                trial[i] = out.J[i] - alpha * step[i];
            }
            const double f_trial = detail::prox_objective(model, lambda, t, trial, w, grid);
            Field g_trial = detail::prox_gradient(model, lambda, t, trial, w, grid);
            const double gnorm_trial = norm_H(g_trial, grid);
            // near the minimizer the objective decrease drowns in round-off; a smaller gradient still counts
            if (f_trial <= f + 1e-4 * alpha * slope || (alpha == 1.0 && gnorm_trial < 0.5 * gnorm)) {
                stalled = gnorm_trial >= gnorm && gnorm <= 1e3 * params.inner_tol;
                out.J = trial;
                g = std::move(g_trial);
                gnorm = gnorm_trial;
                f = f_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (stalled) {
            break;
        }
        if (!accepted) {
            if (gnorm <= 1e3 * params.inner_tol) {
                break;
            }
            throw ConvergenceError("resolvent: line search stalled at gradient norm " + detail::real_str(gnorm));
        }
    }
    out.iterations = it;
    out.A.resize(w.size());
    double dist2 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = w[i] - out.J[i];
        out.A[i] = d / lambda;
        dist2 += d * d;
    }
    out.envelope = phi_value(model, t, out.J, grid) + grid.h * dist2 / (2.0 * lambda);
    return out;
}

inline Field resolvent(const EnergyModel& model, const YosidaParams& params, double t, std::span<const double> w,
                       const Grid1D& grid)
{
    return prox_point(model, params, t, w, grid).J;
}

inline Field yosida(const EnergyModel& model, const YosidaParams& params, double t, std::span<const double> w,
                    const Grid1D& grid)
{
    return prox_point(model, params, t, w, grid).A;
}

inline double moreau_envelope(const EnergyModel& model, const YosidaParams& params, double t,
                              std::span<const double> w, const Grid1D& grid)
{
    return prox_point(model, params, t, w, grid).envelope;
}

/// Derivative of the Yosida map at the point whose resolvent is J: T (I + lambda T)^{-1},
/// with T the H-Hessian of Phi at J. Symmetric positive semidefinite.
inline Eigen::MatrixXd yosida_jacobian(const EnergyModel& model, double lambda, double t, std::span<const double> J,
                                       const Grid1D& grid)
{
    const auto m = static_cast<Eigen::Index>(grid.n_interior);
    const Tridiagonal hess = a_jacobian(model, t, J, grid);
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        T(i, i) = hess.diag[i];
        if (i + 1 < m) {
            T(i, i + 1) = hess.off[i];
            T(i + 1, i) = hess.off[i];
        }
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(m, m) + lambda * T;
    Eigen::MatrixXd X = S.ldlt().solve(T);
    return 0.5 * (X + X.transpose());
}

} // namespace wed
