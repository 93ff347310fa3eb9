#pragma once

#include "wed/errors.hpp"
#include "wed/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

namespace wed {

enum class EnergyKind {
    quadratic_heat,         ///< phi = |g|^2/2
    p_laplace,              ///< phi = |g|^p/p
    allen_cahn_convex_split,///< phi = |g|^2/2, psi = u^4/4
    quadratic_reaction,     ///< psi = u^2/2
    zero,                   ///< Phi = 0
};

inline std::string_view to_string(EnergyKind kind)
{
    switch (kind) {
    case EnergyKind::quadratic_heat: return "quadratic_heat";
    case EnergyKind::p_laplace: return "p_laplace";
    case EnergyKind::allen_cahn_convex_split: return "allen_cahn_convex_split";
    case EnergyKind::quadratic_reaction: return "quadratic_reaction";
    case EnergyKind::zero: return "zero";
    }
    return "unknown";
}

inline EnergyKind parse_energy_kind(std::string_view name)
{
    for (auto kind : {EnergyKind::quadratic_heat, EnergyKind::p_laplace, EnergyKind::allen_cahn_convex_split,
                      EnergyKind::quadratic_reaction, EnergyKind::zero}) {
        if (name == to_string(kind)) {
            return kind;
        }
    }
    throw DomainError("unknown energy kind '" + std::string(name) + "'");
}

/// Affine time modulation c(t) = base + slope*t multiplying phi and psi.
struct TimeCoefficient {
    double base = 1.0;
    double slope = 0.0;

    double operator()(double t) const { return base + slope * t; }
};

/// Convex integrand Phi(t,u) = c(t) [ sum_cells phi(grad u) h + sum_nodes psi(u) h ]
/// with growth metadata for the subgradient A = dPhi.
struct EnergyModel {
    EnergyKind kind = EnergyKind::quadratic_heat;
    double p = 2.0;
    double c_A = 0.5;
    double C_A = 2.0;
    double f_A = 0.0;
    TimeCoefficient time_coeff{};

    double q() const { return p / (p - 1.0); }

    static EnergyModel make(EnergyKind kind, double p = 2.0, TimeCoefficient coeff = {})
    {
        if (!(p >= 2.0) || !std::isfinite(p)) {
            throw DomainError("EnergyModel: exponent p must be >= 2");
        }
        if (kind != EnergyKind::p_laplace && p != 2.0) {
            throw DomainError("EnergyModel: only p_laplace accepts p != 2");
        }
        if (!(coeff.base > 0.0) || coeff.base + coeff.slope <= 0.0) {
            // positivity on [0, 1]; longer horizons are checked by the caller via coefficient_positive
            throw DomainError("EnergyModel: time coefficient must stay positive");
        }
        EnergyModel model;
        model.kind = kind;
        model.p = p;
        model.time_coeff = coeff;
        if (kind == EnergyKind::allen_cahn_convex_split) {
            model.f_A = 16.0;
        }
        return model;
    }

    double phi(double g) const
    {
        switch (kind) {
        case EnergyKind::quadratic_heat:
        case EnergyKind::allen_cahn_convex_split: return 0.5 * g * g;
        case EnergyKind::p_laplace: return std::pow(std::abs(g), p) / p;
        default: return 0.0;
        }
    }
    double dphi(double g) const
    {
        switch (kind) {
        case EnergyKind::quadratic_heat:
        case EnergyKind::allen_cahn_convex_split: return g;
        case EnergyKind::p_laplace: return std::pow(std::abs(g), p - 2.0) * g;
        default: return 0.0;
        }
    }
    double d2phi(double g) const
    {
        switch (kind) {
        case EnergyKind::quadratic_heat:
        case EnergyKind::allen_cahn_convex_split: return 1.0;
        case EnergyKind::p_laplace: return p == 2.0 ? 1.0 : (p - 1.0) * std::pow(std::abs(g), p - 2.0);
        default: return 0.0;
        }
    }
    double psi(double u) const
    {
        switch (kind) {
        case EnergyKind::allen_cahn_convex_split: return 0.25 * u * u * u * u;
        case EnergyKind::quadratic_reaction: return 0.5 * u * u;
        default: return 0.0;
        }
    }
    double dpsi(double u) const
    {
        switch (kind) {
        case EnergyKind::allen_cahn_convex_split: return u * u * u;
        case EnergyKind::quadratic_reaction: return u;
        default: return 0.0;
        }
    }
    double d2psi(double u) const
    {
        switch (kind) {
        case EnergyKind::allen_cahn_convex_split: return 3.0 * u * u;
        case EnergyKind::quadratic_reaction: return 1.0;
        default: return 0.0;
        }
    }
};

inline double phi_value(const EnergyModel& model, double t, std::span<const double> u, const Grid1D& grid)
{
    detail::require_size(u.size(), grid.n_interior, "phi_value");
    if (model.kind == EnergyKind::zero) {
        return 0.0;
    }
    const auto g = grad(u, grid);
    double s = 0.0;
    for (double gj : g) {
        s += model.phi(gj);
    }
    for (double ui : u) {
        s += model.psi(ui);
    }
    return model.time_coeff(t) * grid.h * s;
}

/// H-gradient of Phi(t,.) at u: (a_apply(u), w)_H = dPhi(u)[w].
inline Field a_apply(const EnergyModel& model, double t, std::span<const double> u, const Grid1D& grid)
{
    detail::require_size(u.size(), grid.n_interior, "a_apply");
    Field out(grid.n_interior, 0.0);
    if (model.kind == EnergyKind::zero) {
        return out;
    }
    auto flux = grad(u, grid);
    for (double& f : flux) {
        f = model.dphi(f);
    }
    out = neg_div(flux, grid);
    const double c = model.time_coeff(t);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = c * (out[i] + model.dpsi(u[i]));
    }
    return out;
}

/// Second derivative of Phi(t,.) at u in the H metric (tridiagonal).
inline Tridiagonal a_jacobian(const EnergyModel& model, double t, std::span<const double> u, const Grid1D& grid)
{
    detail::require_size(u.size(), grid.n_interior, "a_jacobian");
    const std::size_t m = grid.n_interior;
    Tridiagonal jac{std::vector<double>(m, 0.0), std::vector<double>(m > 0 ? m - 1 : 0, 0.0)};
    if (model.kind == EnergyKind::zero) {
        return jac;
    }
    const auto g = grad(u, grid);
    const double c = model.time_coeff(t);
    const double inv_h2 = 1.0 / (grid.h * grid.h);
    for (std::size_t i = 0; i < m; ++i) {
        jac.diag[i] = c * ((model.d2phi(g[i]) + model.d2phi(g[i + 1])) * inv_h2 + model.d2psi(u[i]));
        if (i + 1 < m) {
            jac.off[i] = -c * model.d2phi(g[i + 1]) * inv_h2;
        }
    }
    return jac;
}

struct GrowthReport {
    double min_coercivity_ratio = std::numeric_limits<double>::infinity();
    double max_boundedness_ratio = 0.0;
    bool violation = false;
};

/// Random field with a few sine modes, sup-normalized and scaled by amplitude.
inline Field random_smooth_field(const Grid1D& grid, std::mt19937_64& rng, double amplitude, int modes = 4)
{
    std::normal_distribution<double> normal;
    std::vector<double> coeff(modes);
    for (auto& c : coeff) {
        c = normal(rng);
    }
    Field u(grid.n_interior, 0.0);
    double sup = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double x = grid.node_x(i);
        for (int k = 0; k < modes; ++k) {
            u[i] += coeff[k] * std::sin((k + 1) * std::numbers::pi * x) / (k + 1);
        }
        sup = std::max(sup, std::abs(u[i]));
    }
    if (sup > 0.0) {
        for (double& ui : u) {
            ui *= amplitude / sup;
        }
    }
    return u;
}

/// Checks <a(z),z> >= c_A |z|_V^p and |a(z)|_{V*}^q <= f_A + C_A |z|_V^p on sampled fields
/// of sup-amplitude up to max_amplitude. A ratio crossing 1 flags a violation.
inline GrowthReport validate_growth(const EnergyModel& model, const Grid1D& grid, int sample_count, std::uint64_t seed,
                                    double t = 0.0, double max_amplitude = 2.0)
{
    if (sample_count < 1) {
        throw DomainError("validate_growth: sample_count must be >= 1");
    }
    GrowthReport report;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(0.0, max_amplitude);
    for (int s = 0; s < sample_count; ++s) {
        // the first sample is z = 0, where both inequalities hold trivially
        const double a = s == 0 ? 0.0 : amp(rng);
        const Field z = random_smooth_field(grid, rng, a);
        const double vnorm_p = std::pow(norm_V(z, grid, model.p), model.p);
        const Field xi = a_apply(model, t, z, grid);
        const double pairing = inner_H(xi, z, grid);
        const double coercivity = vnorm_p > 0.0 ? pairing / (model.c_A * vnorm_p) : 1.0;
        const double bound = model.f_A + model.C_A * vnorm_p;
        const double dual_q = std::pow(norm_V_dual(xi, grid, model.p), model.q());
        const double boundedness = bound > 0.0 ? dual_q / bound : (dual_q > 0.0 ? 2.0 : 1.0);
        report.min_coercivity_ratio = std::min(report.min_coercivity_ratio, coercivity);
        report.max_boundedness_ratio = std::max(report.max_boundedness_ratio, boundedness);
    }
    report.violation = report.min_coercivity_ratio < 1.0 || report.max_boundedness_ratio > 1.0;
    return report;
}

} // namespace wed
