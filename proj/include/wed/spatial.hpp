#pragma once

#include "wed/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace wed {

/// Interior values of a field on (0,1); the two boundary values are implicitly zero.
using Field = std::vector<double>;

/// Uniform grid of M interior nodes on (0,1), spacing h = 1/(M+1).
struct Grid1D {
    std::size_t n_interior = 1;
    double h = 0.5;

    explicit Grid1D(std::size_t m = 1) : n_interior(m), h(1.0 / static_cast<double>(m + 1))
    {
        if (m == 0) {
            throw DomainError("Grid1D: need at least one interior node");
        }
    }

    std::size_t cells() const { return n_interior + 1; }
    double node_x(std::size_t i) const { return static_cast<double>(i + 1) * h; }
};

/// Forward differences over the M+1 cells, with the Dirichlet zeros at both ends.
inline std::vector<double> grad(std::span<const double> u, const Grid1D& grid)
{
    detail::require_size(u.size(), grid.n_interior, "grad");
    const std::size_t m = grid.n_interior;
    std::vector<double> g(m + 1);
    const double inv_h = 1.0 / grid.h;
    g[0] = u[0] * inv_h;
    for (std::size_t j = 1; j < m; ++j) {
        g[j] = (u[j] - u[j - 1]) * inv_h;
    }
    g[m] = -u[m - 1] * inv_h;
    return g;
}

/// Discrete adjoint of grad: (neg_div w, u)_H = (w, grad u)_cells.
inline Field neg_div(std::span<const double> w, const Grid1D& grid)
{
    detail::require_size(w.size(), grid.cells(), "neg_div");
    Field out(grid.n_interior);
    const double inv_h = 1.0 / grid.h;
    for (std::size_t i = 0; i < grid.n_interior; ++i) {
        out[i] = (w[i] - w[i + 1]) * inv_h;
    }
    return out;
}

inline double inner_H(std::span<const double> a, std::span<const double> b, const Grid1D& grid)
{
    detail::require_size(a.size(), b.size(), "inner_H");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return grid.h * s;
}

/// h-weighted inner product over cells.
inline double inner_cells(std::span<const double> a, std::span<const double> b, const Grid1D& grid)
{
    detail::require_size(a.size(), grid.cells(), "inner_cells");
    detail::require_size(b.size(), grid.cells(), "inner_cells");
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        s += a[j] * b[j];
    }
    return grid.h * s;
}

inline double norm_H(std::span<const double> u, const Grid1D& grid)
{
    detail::require_size(u.size(), grid.n_interior, "norm_H");
    return std::sqrt(inner_H(u, u, grid));
}

/// Discrete W^{1,p}_0 norm: (h sum |grad u|^p)^{1/p}.
inline double norm_V(std::span<const double> u, const Grid1D& grid, double p)
{
    if (!(p >= 1.0)) {
        throw DomainError("norm_V: exponent must be >= 1");
    }
    const auto g = grad(u, grid);
    double s = 0.0;
    for (double gj : g) {
        s += std::pow(std::abs(gj), p);
    }
    return std::pow(grid.h * s, 1.0 / p);
}

/// Discrete H^1_0 norm.
inline double norm_V0(std::span<const double> u, const Grid1D& grid)
{
    const auto g = grad(u, grid);
    return std::sqrt(inner_cells(g, g, grid));
}

/// Symmetric tridiagonal matrix; off[i] couples rows i and i+1.
struct Tridiagonal {
    std::vector<double> diag;
    std::vector<double> off;

    std::size_t size() const { return diag.size(); }

    Field apply(std::span<const double> x) const
    {
        const std::size_t n = diag.size();
        Field y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = diag[i] * x[i];
            if (i > 0) {
                s += off[i - 1] * x[i - 1];
            }
            if (i + 1 < n) {
                s += off[i] * x[i + 1];
            }
            y[i] = s;
        }
        return y;
    }
};

/// Thomas algorithm; the caller guarantees diagonal dominance or SPD.
inline Field solve_tridiagonal(const Tridiagonal& a, std::span<const double> rhs)
{
    const std::size_t n = a.size();
    detail::require_size(rhs.size(), n, "solve_tridiagonal");
    std::vector<double> c(n, 0.0);
    Field x(rhs.begin(), rhs.end());
    double denom = a.diag[0];
    if (n > 1) {
        c[0] = a.off[0] / denom;
    }
    x[0] /= denom;
    for (std::size_t i = 1; i < n; ++i) {
        denom = a.diag[i] - a.off[i - 1] * c[i - 1];
        if (i + 1 < n) {
            c[i] = a.off[i] / denom;
        }
        x[i] = (x[i] - a.off[i - 1] * x[i - 1]) / denom;
    }
    for (std::size_t i = n - 1; i-- > 0;) {
        x[i] -= c[i] * x[i + 1];
    }
    return x;
}

/// The Dirichlet Laplacian R0 = neg_div grad, stencil (-1, 2, -1)/h^2.
inline Tridiagonal dirichlet_laplacian(const Grid1D& grid)
{
    const std::size_t m = grid.n_interior;
    const double s = 1.0 / (grid.h * grid.h);
    return {std::vector<double>(m, 2.0 * s), std::vector<double>(m > 0 ? m - 1 : 0, -s)};
}

/// R0^{-1} w: solves the discrete Dirichlet problem.
inline Field riesz_V0_solve(std::span<const double> w, const Grid1D& grid)
{
    detail::require_size(w.size(), grid.n_interior, "riesz_V0_solve");
    return solve_tridiagonal(dirichlet_laplacian(grid), w);
}

inline double norm_V0_dual(std::span<const double> w, const Grid1D& grid)
{
    const auto z = riesz_V0_solve(w, grid);
    return std::sqrt(std::max(0.0, inner_H(w, z, grid)));
}

/// Dual norm of V = W^{1,p}_0 with respect to the H pairing.
///
/// Every xi equals neg_div(sigma) for a one-parameter family sigma_j = c + s_j; the
/// dual norm is the smallest h-weighted q-norm in that family, found by bisection
/// on the (monotone) optimality condition in c.
inline double norm_V_dual(std::span<const double> xi, const Grid1D& grid, double p)
{
    detail::require_size(xi.size(), grid.n_interior, "norm_V_dual");
    if (!(p > 1.0)) {
        throw DomainError("norm_V_dual: exponent must exceed 1");
    }
    const double q = p / (p - 1.0);
    const std::size_t cells = grid.cells();
    std::vector<double> s(cells, 0.0);
    for (std::size_t j = 1; j < cells; ++j) {
        s[j] = s[j - 1] - grid.h * xi[j - 1];
    }
    auto slope = [&](double c) {
        double total = 0.0;
        for (double sj : s) {
            const double r = c + sj;
            total += std::pow(std::abs(r), q - 1.0) * (r < 0.0 ? -1.0 : 1.0);
        }
        return total;
    };
    double lo = -*std::max_element(s.begin(), s.end());
    double hi = -*std::min_element(s.begin(), s.end());
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (slope(mid) < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    const double c = 0.5 * (lo + hi);
    double total = 0.0;
    for (double sj : s) {
        total += std::pow(std::abs(c + sj), q);
    }
    return std::pow(grid.h * total, 1.0 / q);
}

/// Interior samples of a continuous profile.
template <class Profile>
Field sample_field(const Grid1D& grid, Profile&& profile)
{
    Field u(grid.n_interior);
    for (std::size_t i = 0; i < grid.n_interior; ++i) {
        u[i] = profile(grid.node_x(i));
    }
    return u;
}

} // namespace wed
