#pragma once

// Grids over the macro domain, the unit cell and the state window, plus the
// midpoint quadrature every integral in the library goes through.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "oscillab/error.hpp"

namespace oscillab {

/// Fixed-order pairwise summation. The order depends only on the length, so sums
/// are reproducible regardless of how the terms were produced.
inline double pairwise_sum(std::span<const double> terms) {
    constexpr std::size_t block = 8;
    if (terms.size() <= block) {
        double s = 0.0;
        for (double t : terms) s += t;
        return s;
    }
    const std::size_t half = terms.size() / 2;
    return pairwise_sum(terms.first(half)) + pairwise_sum(terms.subspan(half));
}

inline std::size_t ipow(std::size_t base, int exp) {
    std::size_t r = 1;
    for (int i = 0; i < exp; ++i) r *= base;
    return r;
}

/// Fractional part t - floor(t), folded into [0,1).
inline double fractional_fold(double t) {
    if (!std::isfinite(t)) throw InvalidArgument("fractional_fold of a non-finite value");
    double r = t - std::floor(t);
    // t slightly below an integer can round to exactly 1
    if (r >= 1.0) r = 0.0;
    return r;
}

inline std::vector<double> fractional_fold(std::span<const double> t) {
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = fractional_fold(t[i]);
    return out;
}

/// Box [lo, hi]^d the state variable lives in.
struct StateWindow {
    double lo = -4.0;
    double hi = 4.0;

    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
    StateWindow doubled() const {
        const double c = 0.5 * (lo + hi);
        return {c - width(), c + width()};
    }
};

/// Uniform partitions of Ω (a box in R^N), of Q = (0,1)^N, and the state window.
/// Linear cell indices run with axis 0 fastest.
struct GridSpec {
    int dim_macro = 1;  // N
    int dim_state = 1;  // d
    int n_x = 512;      // cells per macro axis
    int n_y = 64;       // cells per unit-cell axis
    std::vector<double> omega_lo{0.0};
    std::vector<double> omega_hi{1.0};
    double p_exponent = 2.0;
    StateWindow window{};

    void validate() const {
        if (dim_macro < 1) throw InvalidArgument("GridSpec: dim_macro must be >= 1");
        if (dim_state < 1) throw InvalidArgument("GridSpec: dim_state must be >= 1");
        if (n_x < 1 || n_y < 1) throw InvalidArgument("GridSpec: n_x and n_y must be >= 1");
        if (omega_lo.size() != static_cast<std::size_t>(dim_macro) ||
            omega_hi.size() != static_cast<std::size_t>(dim_macro))
            throw InvalidArgument("GridSpec: omega corners must have dim_macro components");
        for (int a = 0; a < dim_macro; ++a) {
            if (!(omega_lo[a] < omega_hi[a]))
                throw InvalidArgument("GridSpec: omega_lo must be < omega_hi componentwise");
        }
        if (!(p_exponent > 1.0) || !std::isfinite(p_exponent))
            throw InvalidArgument("GridSpec: p_exponent must be a finite real > 1");
        if (!(window.lo < window.hi)) throw InvalidArgument("GridSpec: empty state window");
    }

    std::size_t macro_cells() const { return ipow(static_cast<std::size_t>(n_x), dim_macro); }
    std::size_t unit_cells() const { return ipow(static_cast<std::size_t>(n_y), dim_macro); }

    double omega_volume() const {
        double v = 1.0;
        for (int a = 0; a < dim_macro; ++a) v *= omega_hi[a] - omega_lo[a];
        return v;
    }
    double macro_cell_volume() const {
        return omega_volume() / static_cast<double>(macro_cells());
    }
    double unit_cell_volume() const { return 1.0 / static_cast<double>(unit_cells()); }

    double macro_step(int axis) const { return (omega_hi[axis] - omega_lo[axis]) / n_x; }

    void macro_midpoint(std::size_t cell, std::span<double> out) const {
        for (int a = 0; a < dim_macro; ++a) {
            const std::size_t i = cell % static_cast<std::size_t>(n_x);
            cell /= static_cast<std::size_t>(n_x);
            out[a] = omega_lo[a] + (static_cast<double>(i) + 0.5) * macro_step(a);
        }
    }
    void unit_midpoint(std::size_t cell, std::span<double> out) const {
        for (int a = 0; a < dim_macro; ++a) {
            const std::size_t i = cell % static_cast<std::size_t>(n_y);
            cell /= static_cast<std::size_t>(n_y);
            out[a] = (static_cast<double>(i) + 0.5) / n_y;
        }
    }

    /// Flat array of all macro midpoints, dim_macro entries per cell.
    std::vector<double> macro_midpoints() const {
        std::vector<double> pts(macro_cells() * dim_macro);
        for (std::size_t c = 0; c < macro_cells(); ++c)
            macro_midpoint(c, std::span(pts).subspan(c * dim_macro, dim_macro));
        return pts;
    }
    std::vector<double> unit_midpoints() const {
        std::vector<double> pts(unit_cells() * dim_macro);
        for (std::size_t c = 0; c < unit_cells(); ++c)
            unit_midpoint(c, std::span(pts).subspan(c * dim_macro, dim_macro));
        return pts;
    }

    /// Index of the unit cell containing y ∈ [0,1)^N.
    std::size_t unit_cell_of(std::span<const double> y) const {
        std::size_t idx = 0;
        for (int a = dim_macro - 1; a >= 0; --a) {
            auto i = static_cast<std::size_t>(std::floor(y[a] * n_y));
            if (i >= static_cast<std::size_t>(n_y)) i = static_cast<std::size_t>(n_y) - 1;
            idx = idx * static_cast<std::size_t>(n_y) + i;
        }
        return idx;
    }

    /// Same Ω, N, d and macro partition (what fields need to be comparable).
    bool same_macro_grid(const GridSpec& o) const {
        return dim_macro == o.dim_macro && dim_state == o.dim_state && n_x == o.n_x &&
               omega_lo == o.omega_lo && omega_hi == o.omega_hi;
    }
    bool same_grid(const GridSpec& o) const { return same_macro_grid(o) && n_y == o.n_y; }
};

/// Cellwise-constant map Ω → R^d, one state vector per macro cell.
struct GridField {
    GridSpec spec;
    std::vector<double> values;

    GridField() = default;
    explicit GridField(GridSpec s)
        : spec(std::move(s)), values(spec.macro_cells() * spec.dim_state, 0.0) {}
    GridField(GridSpec s, std::vector<double> v) : spec(std::move(s)), values(std::move(v)) {
        validate();
    }

    std::size_t cells() const { return spec.macro_cells(); }
    std::span<double> at(std::size_t cell) {
        return std::span(values).subspan(cell * spec.dim_state, spec.dim_state);
    }
    std::span<const double> at(std::size_t cell) const {
        return std::span(values).subspan(cell * spec.dim_state, spec.dim_state);
    }

    void validate() const {
        if (values.size() != spec.macro_cells() * spec.dim_state)
            throw InvalidArgument("GridField: value count does not match the macro grid");
        for (double v : values)
            if (!std::isfinite(v)) throw InvalidArgument("GridField: non-finite entry");
    }

    static GridField constant(const GridSpec& s, std::span<const double> c) {
        GridField f(s);
        for (std::size_t i = 0; i < f.cells(); ++i)
            for (int k = 0; k < s.dim_state; ++k) f.at(i)[k] = c[k];
        return f;
    }
};

/// Map Ω × Q → R^d, cellwise constant on (macro cell, unit cell) pairs. The unit-cell
/// index wraps, so Q-periodicity is structural.
struct TwoScaleField {
    GridSpec spec;
    std::vector<double> values;  // [(macro * unit_cells + unit) * d + component]

    TwoScaleField() = default;
    explicit TwoScaleField(GridSpec s)
        : spec(std::move(s)),
          values(spec.macro_cells() * spec.unit_cells() * spec.dim_state, 0.0) {}

    std::size_t index(std::size_t macro, std::size_t unit) const {
        return macro * spec.unit_cells() + unit % spec.unit_cells();
    }
    std::span<double> at(std::size_t macro, std::size_t unit) {
        return std::span(values).subspan(index(macro, unit) * spec.dim_state, spec.dim_state);
    }
    std::span<const double> at(std::size_t macro, std::size_t unit) const {
        return std::span(values).subspan(index(macro, unit) * spec.dim_state, spec.dim_state);
    }

    /// Samples u1(x, y) at (macro midpoint, unit midpoint).
    template <class Sampler>
    static TwoScaleField sample(const GridSpec& s, Sampler&& u1) {
        TwoScaleField f(s);
        const auto xs = s.macro_midpoints();
        const auto ys = s.unit_midpoints();
        const auto N = static_cast<std::size_t>(s.dim_macro);
        for (std::size_t i = 0; i < s.macro_cells(); ++i)
            for (std::size_t j = 0; j < s.unit_cells(); ++j)
                u1(std::span(xs).subspan(i * N, N), std::span(ys).subspan(j * N, N), f.at(i, j));
        for (double v : f.values)
            if (!std::isfinite(v)) throw InvalidArgument("TwoScaleField: non-finite sample");
        return f;
    }
};

using MacroFunction = std::function<double(std::span<const double>)>;

/// Midpoint rule for ∫_Ω sampler(x) dx.
template <class Sampler>
double quadrature(Sampler&& sampler, const GridSpec& spec) {
    const auto N = static_cast<std::size_t>(spec.dim_macro);
    std::vector<double> x(N);
    std::vector<double> terms(spec.macro_cells());
    for (std::size_t c = 0; c < terms.size(); ++c) {
        spec.macro_midpoint(c, x);
        terms[c] = sampler(std::span<const double>(x));
        if (std::isnan(terms[c]))
            throw EvaluationFailure("quadrature sampler returned NaN at macro cell " +
                                    std::to_string(c));
    }
    return pairwise_sum(terms) * spec.macro_cell_volume();
}

/// max over the battery φ and state components of |∫_Ω (u − v) φ dx|.
inline double weak_lp_norm_gap(const GridField& u, const GridField& v,
                               std::span<const MacroFunction> battery) {
    if (!u.spec.same_macro_grid(v.spec))
        throw InvalidArgument("weak_lp_norm_gap: fields live on different grids");
    const auto N = static_cast<std::size_t>(u.spec.dim_macro);
    const std::size_t cells = u.cells();
    const auto xs = u.spec.macro_midpoints();
    double worst = 0.0;
    std::vector<double> terms(cells);
    for (const auto& phi : battery) {
        std::vector<double> phis(cells);
        for (std::size_t c = 0; c < cells; ++c) phis[c] = phi(std::span(xs).subspan(c * N, N));
        for (int k = 0; k < u.spec.dim_state; ++k) {
            for (std::size_t c = 0; c < cells; ++c)
                terms[c] = (u.at(c)[k] - v.at(c)[k]) * phis[c];
            worst = std::max(worst, std::abs(pairwise_sum(terms) * u.spec.macro_cell_volume()));
        }
    }
    return worst;
}

inline double euclidean_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace oscillab
