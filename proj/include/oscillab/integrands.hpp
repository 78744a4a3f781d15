#pragma once

// Local densities f(y, ξ), non-local densities W(x, x', y, y', ξ, ξ'), sampled audits of
// their structural hypotheses, and the convex envelope in the state variable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oscillab/error.hpp"
#include "oscillab/lattice.hpp"

namespace oscillab {

using LocalEval = std::function<double(std::span<const double> y, std::span<const double> xi)>;

/// Q-periodic local density f(y, ξ), y ∈ [0,1)^N, ξ ∈ R^d, with its p-growth constant.
struct IntegrandF {
    LocalEval eval;
    double growth_c = 1.0;
    double p = 2.0;
    std::string label;
    /// Set when f is only meaningful on a bounded state box; envelopes and cell
    /// problems then stay inside it instead of using the experiment window.
    std::optional<StateWindow> window;

    double operator()(std::span<const double> y, std::span<const double> xi) const {
        return eval(y, xi);
    }
};

/// Arguments of a non-local density evaluation.
struct NonlocalArgs {
    std::span<const double> x, xp, y, yp, xi, xip;
};

/// g(x, y, ξ) for densities of the form W = g(x,y,ξ) + g(x',y',ξ').
using SeparablePart = std::function<double(std::span<const double> x, std::span<const double> y,
                                           std::span<const double> xi)>;

/// Symmetric non-local density with the two-sided growth constants
/// α + |ξ|^p / c ≤ W ≤ a + c(|ξ|^p + |ξ'|^p).
struct NonlocalW {
    std::function<double(const NonlocalArgs&)> eval;
    double a_bound = 0.0;
    double alpha_bound = 0.0;
    double c = 1.0;
    double p = 2.0;
    std::string label;
    /// Present when W splits into g + g'; minimizers use it to decouple cells.
    std::optional<SeparablePart> separable;
    /// Set by reduce_y_independent once y-independence has been audited.
    bool y_independent = false;

    double operator()(const NonlocalArgs& a) const { return eval(a); }
};

struct SymmetryReport {
    double max_violation = 0.0;
    std::size_t samples = 0;
};

/// One sampled argument tuple, kept as a counterexample.
struct AuditWitness {
    std::vector<double> x, xp, y, yp, xi, xip;
    double value = 0.0;
    double bound = 0.0;
};

struct GrowthReport {
    bool lower_ok = true;
    bool upper_ok = true;
    std::optional<AuditWitness> lower_witness;
    std::optional<AuditWitness> upper_witness;
    std::size_t samples = 0;
};

namespace detail {

struct TupleSampler {
    const GridSpec& spec;
    std::mt19937_64 rng;

    void macro(std::vector<double>& x) {
        x.resize(spec.dim_macro);
        for (int a = 0; a < spec.dim_macro; ++a)
            x[a] = std::uniform_real_distribution<double>(spec.omega_lo[a], spec.omega_hi[a])(rng);
    }
    void unit(std::vector<double>& y) {
        y.resize(spec.dim_macro);
        for (auto& v : y) v = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    void state(std::vector<double>& xi) {
        xi.resize(spec.dim_state);
        for (auto& v : xi)
            v = std::uniform_real_distribution<double>(spec.window.lo, spec.window.hi)(rng);
    }
    void tuple(AuditWitness& w) {
        macro(w.x), macro(w.xp), unit(w.y), unit(w.yp), state(w.xi), state(w.xip);
    }
};

inline NonlocalArgs args_of(const AuditWitness& w) { return {w.x, w.xp, w.y, w.yp, w.xi, w.xip}; }
inline NonlocalArgs swapped_args_of(const AuditWitness& w) {
    return {w.xp, w.x, w.yp, w.y, w.xip, w.xi};
}

}  // namespace detail

/// Max |W(x,x',y,y',ξ,ξ') − W(x',x,y',y,ξ',ξ)| over seeded random tuples drawn from
/// Ω² × Q² × window². Sampled, so a zero result only means no violation was found.
inline SymmetryReport audit_symmetry(const NonlocalW& W, std::size_t n_samples,
                                     std::uint64_t seed, const GridSpec& spec = {}) {
    if (n_samples < 1) throw InvalidArgument("audit_symmetry: n_samples must be >= 1");
    detail::TupleSampler sampler{spec, std::mt19937_64(seed)};
    SymmetryReport report;
    AuditWitness w;
    for (std::size_t s = 0; s < n_samples; ++s) {
        sampler.tuple(w);
        const double v = std::abs(W(detail::args_of(w)) - W(detail::swapped_args_of(w)));
        report.max_violation = std::max(report.max_violation, v);
    }
    report.samples = n_samples;
    return report;
}

/// Checks both growth inequalities at seeded random tuples. Records the first
/// counterexample of each side.
inline GrowthReport audit_growth(const NonlocalW& W, std::size_t n_samples, std::uint64_t seed,
                                 const GridSpec& spec = {}) {
    if (n_samples < 1) throw InvalidArgument("audit_growth: n_samples must be >= 1");
    detail::TupleSampler sampler{spec, std::mt19937_64(seed)};
    GrowthReport report;
    AuditWitness w;
    for (std::size_t s = 0; s < n_samples; ++s) {
        sampler.tuple(w);
        const double value = W(detail::args_of(w));
        const double pxi = std::pow(euclidean_norm(w.xi), W.p);
        const double pxip = std::pow(euclidean_norm(w.xip), W.p);
        const double lower = W.alpha_bound + pxi / W.c;
        const double upper = W.a_bound + W.c * (pxi + pxip);
        const double slack = 1e-12 * (1.0 + std::abs(value));
        if (report.lower_ok && !(lower <= value + slack)) {
            report.lower_ok = false;
            w.value = value, w.bound = lower;
            report.lower_witness = w;
        }
        if (report.upper_ok && !(value <= upper + slack)) {
            report.upper_ok = false;
            w.value = value, w.bound = upper;
            report.upper_witness = w;
        }
    }
    report.samples = n_samples;
    return report;
}

/// |f(y,ξ)| ≤ c(1 + |ξ|^p) at seeded samples over Q × window; returns the worst ratio
/// |f| / (c(1+|ξ|^p)), which must stay ≤ 1.
inline double audit_local_growth(const IntegrandF& f, const GridSpec& spec, std::size_t n_samples,
                                 std::uint64_t seed) {
    detail::TupleSampler sampler{spec, std::mt19937_64(seed)};
    std::vector<double> y, xi;
    double worst = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        sampler.unit(y);
        sampler.state(xi);
        const double v = f(y, xi);
        if (!std::isfinite(v)) return INFINITY;
        worst = std::max(worst, std::abs(v) / (f.growth_c * (1.0 + std::pow(euclidean_norm(xi), f.p))));
    }
    return worst;
}

/// Lower convex hull (monotone chain) of (ξ_i, f(y, ξ_i)), evaluated back at every ξ_i.
/// Requires d = 1 and a strictly increasing grid of at least two points.
inline std::vector<double> convex_envelope_1d(std::span<const double> xi_grid,
                                              std::span<const double> f_values) {
    const std::size_t n = xi_grid.size();
    if (n < 2) throw InvalidArgument("convex_envelope_1d: need at least two grid points");
    if (f_values.size() != n) throw InvalidArgument("convex_envelope_1d: size mismatch");
    for (std::size_t i = 1; i < n; ++i)
        if (!(xi_grid[i] > xi_grid[i - 1]))
            throw InvalidArgument("convex_envelope_1d: grid must be strictly increasing");

    std::vector<std::size_t> hull;
    hull.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        while (hull.size() >= 2) {
            const std::size_t a = hull[hull.size() - 2];
            const std::size_t b = hull.back();
            // drop b when it lies on or above the chord a → i
            const double cross = (xi_grid[b] - xi_grid[a]) * (f_values[i] - f_values[a]) -
                                 (f_values[b] - f_values[a]) * (xi_grid[i] - xi_grid[a]);
            if (cross <= 0.0)
                hull.pop_back();
            else
                break;
        }
        hull.push_back(i);
    }

    std::vector<double> out(n);
    std::size_t seg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (seg + 1 < hull.size() && hull[seg + 1] < i) ++seg;
        const std::size_t a = hull[seg];
        if (a == i || seg + 1 == hull.size()) {
            out[i] = f_values[a];
            continue;
        }
        const std::size_t b = hull[seg + 1];
        const double t = (xi_grid[i] - xi_grid[a]) / (xi_grid[b] - xi_grid[a]);
        out[i] = std::min(f_values[i], (1.0 - t) * f_values[a] + t * f_values[b]);
    }
    return out;
}

/// Envelope of f(y, ·) on xi_grid for a single cell point y.
inline std::vector<double> convex_envelope_1d(const IntegrandF& f, std::span<const double> y,
                                              std::span<const double> xi_grid,
                                              int dim_state = 1) {
    if (dim_state != 1)
        throw UnsupportedDimension("convex envelopes are only available for d = 1");
    std::vector<double> fv(xi_grid.size());
    for (std::size_t i = 0; i < xi_grid.size(); ++i) {
        fv[i] = f(y, std::span(&xi_grid[i], 1));
        if (!std::isfinite(fv[i]))
            throw EvaluationFailure("convex_envelope_1d: non-finite sample of " + f.label);
    }
    return convex_envelope_1d(xi_grid, fv);
}

/// Evenly spaced grid lo, lo+h, ..., hi with `points` entries.
inline std::vector<double> uniform_grid(double lo, double hi, std::size_t points) {
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    g.back() = hi;
    return g;
}

/// Per unit-cell samples of co f on a shared ξ grid, with piecewise-linear
/// interpolation (and linear extrapolation of the end segments).
struct EnvelopeTable {
    std::vector<double> xi_grid;
    std::vector<std::vector<double>> values;  // [unit cell][grid point]
    std::vector<std::vector<double>> f_samples;
    GridSpec cells;  // only dim_macro and n_y are used

    /// Grid segment [lo, lo+1] used for ξ (end segments extend beyond the grid).
    std::size_t segment(double xi) const {
        const std::size_t n = xi_grid.size();
        if (xi <= xi_grid.front()) return 0;
        if (xi >= xi_grid.back()) return n - 2;
        return static_cast<std::size_t>(std::upper_bound(xi_grid.begin(), xi_grid.end(), xi) -
                                        xi_grid.begin()) - 1;
    }

    double eval(std::size_t cell, double xi) const {
        const auto& v = values[cell];
        const std::size_t lo = segment(xi);
        const double t = (xi - xi_grid[lo]) / (xi_grid[lo + 1] - xi_grid[lo]);
        return (1.0 - t) * v[lo] + t * v[lo + 1];
    }

    /// True when co f = f at both ends of the segment holding ξ; between such points
    /// co f ≤ min(f, chord), so f itself may be used where it is below the chord.
    bool in_contact(std::size_t cell, double xi) const {
        const std::size_t lo = segment(xi);
        const auto& v = values[cell];
        const auto& f = f_samples[cell];
        const auto touch = [&](std::size_t i) {
            return v[i] >= f[i] - 1e-12 * (1.0 + std::abs(f[i]));
        };
        return xi >= xi_grid.front() && xi <= xi_grid.back() && touch(lo) && touch(lo + 1);
    }

    /// Largest violation of discrete convexity, relative to max|f| on the grid.
    double convexity_defect() const {
        double worst = 0.0;
        for (std::size_t c = 0; c < values.size(); ++c) {
            double scale = 0.0;
            for (double fv : f_samples[c]) scale = std::max(scale, std::abs(fv));
            scale = std::max(scale, 1e-300);
            const auto& v = values[c];
            for (std::size_t i = 1; i + 1 < v.size(); ++i) {
                const double hl = xi_grid[i] - xi_grid[i - 1];
                const double hr = xi_grid[i + 1] - xi_grid[i];
                // divided second difference scaled back to a plain difference
                const double d2 = ((v[i + 1] - v[i]) / hr - (v[i] - v[i - 1]) / hl) *
                                  0.5 * (hl + hr);
                worst = std::max(worst, -d2 / scale);
            }
        }
        return worst;
    }
};

/// Builds co f for each unit-cell midpoint of `cells`.
inline EnvelopeTable build_envelope_table(const IntegrandF& f, const GridSpec& cells,
                                          std::vector<double> xi_grid) {
    if (cells.dim_state != 1)
        throw UnsupportedDimension("convex envelopes are only available for d = 1");
    EnvelopeTable table;
    table.cells = cells;
    table.xi_grid = std::move(xi_grid);
    const auto ys = cells.unit_midpoints();
    const auto N = static_cast<std::size_t>(cells.dim_macro);
    const std::size_t nc = cells.unit_cells();
    table.values.resize(nc);
    table.f_samples.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        const auto y = std::span(ys).subspan(c * N, N);
        auto& fs = table.f_samples[c];
        fs.resize(table.xi_grid.size());
        for (std::size_t i = 0; i < fs.size(); ++i) {
            fs[i] = f(y, std::span(&table.xi_grid[i], 1));
            if (!std::isfinite(fs[i]))
                throw EvaluationFailure("build_envelope_table: non-finite sample of " + f.label);
        }
        table.values[c] = convex_envelope_1d(table.xi_grid, fs);
    }
    return table;
}

/// co f as an integrand: looks up the unit cell containing y and interpolates the
/// table, using f itself on segments where the envelope touches f.
inline IntegrandF envelope_integrand(std::shared_ptr<const EnvelopeTable> table,
                                     const IntegrandF& f) {
    IntegrandF g;
    g.growth_c = f.growth_c;
    g.p = f.p;
    g.label = "co(" + f.label + ")";
    g.window = f.window;
    g.eval = [table, local = f.eval](std::span<const double> y, std::span<const double> xi) {
        const std::size_t cell = table->cells.unit_cell_of(y);
        const double chord = table->eval(cell, xi[0]);
        if (!table->in_contact(cell, xi[0])) return chord;
        return std::min(chord, local(y, xi));
    };
    return g;
}

}  // namespace oscillab
