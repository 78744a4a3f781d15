#pragma once

// Oscillating sequences u_n on the macro grid and the pairing tests that compare
// them with a candidate two-scale Young measure.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/error.hpp"
#include "oscillab/lattice.hpp"
#include "oscillab/parallel.hpp"
#include "oscillab/ymeasure.hpp"

namespace oscillab {

/// u(x) at oscillation scale eps, written to out (d components).
using SequenceFamily = std::function<void(std::span<const double> x, double eps, std::span<double> out)>;

/// periodic_shift: u_n(x) = F + φ(x/ε_n).
/// averaging_tiles: Ω = (0,1)^N is tiled by cubes a_i + ρ_n Q with ρ_n = ε_n ⌊1/√ε_n⌋;
/// each tile carries the base sequence at scale ε_n/ρ_n rescaled to the tile, the
/// leftover set carries F. The base is `family` when set, F + φ(·/δ) otherwise.
/// custom: u_n(x) = family(x, ε_n).
struct OscillationSequence {
    enum class Kind { periodic_shift, averaging_tiles, custom };

    Kind kind = Kind::periodic_shift;
    catalog::PeriodicSampler phi;
    SequenceFamily family;
    std::vector<double> F{0.0};
    std::vector<double> eps_schedule;
    GridSpec spec;

    void validate() const {
        spec.validate();
        if (F.size() != static_cast<std::size_t>(spec.dim_state))
            throw InvalidArgument("oscillation sequence: F must have dim_state components");
        if (kind == Kind::custom && !family)
            throw InvalidArgument("custom oscillation sequence needs a family");
        if (kind != Kind::custom && !phi && !family)
            throw InvalidArgument("oscillation sequence needs a periodic profile");
        check_schedule(eps_schedule, spec);
    }

    /// Positive, strictly decreasing, and commensurable with the macro grid so that
    /// midpoints sample ⟨x/ε⟩ on a fixed lattice.
    static void check_schedule(const std::vector<double>& eps_schedule, const GridSpec& spec) {
        if (eps_schedule.empty()) throw InvalidSchedule("empty eps schedule");
        for (std::size_t n = 0; n < eps_schedule.size(); ++n) {
            const double e = eps_schedule[n];
            if (!(e > 0.0) || !std::isfinite(e))
                throw InvalidSchedule("eps values must be positive and finite");
            if (n > 0 && !(e < eps_schedule[n - 1]))
                throw InvalidSchedule("eps schedule must be strictly decreasing");
            for (int a = 0; a < spec.dim_macro; ++a) {
                const double cells_per_period = e / spec.macro_step(a);
                const double offset = spec.omega_lo[a] / e;
                if (std::abs(cells_per_period - std::round(cells_per_period)) > 1e-9 * cells_per_period ||
                    std::abs(offset - std::round(offset)) > 1e-9 * (1.0 + std::abs(offset)))
                    throw InvalidSchedule("eps = " + format_eps(e) +
                                          " is not commensurable with the macro grid");
            }
        }
    }

    static std::string format_eps(double e) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", e);
        return buf;
    }
};

struct TileLayout {
    double rho = 0.0;
    std::size_t tiles_per_axis = 0;
    double base_eps = 0.0;  // ε/ρ
};

/// ρ = ε ⌊1/√ε⌋ and the number of whole tiles along each axis of (0,1)^N.
inline TileLayout tile_layout(double eps) {
    TileLayout t;
    const double k = std::floor(1.0 / std::sqrt(eps) + 1e-12);
    t.rho = eps * k;
    if (!(t.rho > 0.0))
        throw InvalidSchedule("eps = " + OscillationSequence::format_eps(eps) +
                              " gives an empty tile size; the tile construction needs eps <= 1");
    t.tiles_per_axis = static_cast<std::size_t>(std::floor(1.0 / t.rho + 1e-9));
    t.base_eps = eps / t.rho;
    return t;
}

/// The field u_n on the macro grid, sampled at cell midpoints.
inline GridField realize(const OscillationSequence& seq, std::size_t n) {
    seq.validate();
    if (n >= seq.eps_schedule.size()) throw InvalidArgument("realize: n beyond the schedule");
    const double eps = seq.eps_schedule[n];
    const GridSpec& spec = seq.spec;
    const auto N = static_cast<std::size_t>(spec.dim_macro);
    const std::size_t d = seq.F.size();
    GridField u(spec);

    const auto base = [&](std::span<const double> x, double e, std::span<double> out,
                          std::vector<double>& t) {
        if (seq.family) {
            seq.family(x, e, out);
            return;
        }
        for (std::size_t a = 0; a < N; ++a) t[a] = x[a] / e;
        seq.phi(t, out);
        for (std::size_t c = 0; c < d; ++c) out[c] += seq.F[c];
    };

    std::optional<TileLayout> tiles;
    if (seq.kind == OscillationSequence::Kind::averaging_tiles) {
        for (int a = 0; a < spec.dim_macro; ++a)
            if (spec.omega_lo[a] != 0.0 || spec.omega_hi[a] != 1.0)
                throw InvalidArgument("averaging tiles require the unit cube as macro domain");
        tiles = tile_layout(eps);
    }

    parallel_for(spec.macro_cells(), [&](std::size_t i) {
        std::vector<double> x(N), local(N), t(N);
        spec.macro_midpoint(i, x);
        auto out = u.at(i);
        if (!tiles) {
            if (seq.kind == OscillationSequence::Kind::custom)
                seq.family(x, eps, out);
            else
                base(x, eps, out, t);
            return;
        }
        bool inside = true;
        for (std::size_t a = 0; a < N; ++a) {
            const double idx = std::floor(x[a] / tiles->rho);
            if (idx >= static_cast<double>(tiles->tiles_per_axis)) inside = false;
            local[a] = (x[a] - idx * tiles->rho) / tiles->rho;
        }
        if (!inside) {
            std::copy(seq.F.begin(), seq.F.end(), out.begin());
            return;
        }
        base(local, tiles->base_eps, out, t);
    });
    for (double v : u.values)
        if (!std::isfinite(v)) throw EvaluationFailure("realize: non-finite sample");
    return u;
}

struct NamedMacro {
    std::string label;
    MacroFunction fn;
};

struct NamedCellState {
    std::string label;
    catalog::CellStateFunction fn;
};

inline std::vector<NamedMacro> macro_battery(const std::vector<std::string>& names) {
    std::vector<NamedMacro> out;
    for (const auto& n : names) out.push_back({n, catalog::macro_test(n)});
    return out;
}

inline std::vector<NamedCellState> cell_state_battery(const std::vector<std::string>& names) {
    std::vector<NamedCellState> out;
    for (const auto& n : names) out.push_back({n, catalog::cell_state_test(n)});
    return out;
}

/// ∫_Ω z(x) ψ(⟨x/ε⟩, u(x)) dx.
inline double empirical_pairing(const GridField& u, double eps, const MacroFunction& z,
                                const catalog::CellStateFunction& psi) {
    const auto N = static_cast<std::size_t>(u.spec.dim_macro);
    const auto xs = u.spec.macro_midpoints();
    std::vector<double> terms(u.cells());
    std::vector<double> y(N);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto x = std::span(xs).subspan(i * N, N);
        for (std::size_t a = 0; a < N; ++a) y[a] = fractional_fold(x[a] / eps);
        terms[i] = z(x) * psi(y, u.at(i));
        if (std::isnan(terms[i])) throw EvaluationFailure("empirical pairing produced NaN");
    }
    return pairwise_sum(terms) * u.spec.macro_cell_volume();
}

/// ∫_Ω ∫_Q Σ_k w_k z(x) ψ(y, ξ_k) dy dx.
inline double measure_pairing(const AtomicYoungMeasure& nu, const MacroFunction& z,
                              const catalog::CellStateFunction& psi) {
    nu.validate();
    const auto N = static_cast<std::size_t>(nu.spec.dim_macro);
    const auto xs = nu.spec.macro_midpoints();
    const auto ys = nu.spec.unit_midpoints();
    const std::size_t U = nu.spec.unit_cells();
    std::vector<double> outer(nu.spec.macro_cells());
    parallel_for(outer.size(), [&](std::size_t i) {
        std::vector<double> inner(U);
        for (std::size_t j = 0; j < U; ++j) {
            const std::size_t c = nu.cell(i, j);
            double s = 0.0;
            for (std::size_t k = 0; k < nu.K; ++k)
                if (nu.weight(c, k) > 0.0) s += nu.weight(c, k) * psi(std::span(ys).subspan(j * N, N), nu.atom(c, k));
            inner[j] = s;
        }
        outer[i] = z(std::span(xs).subspan(i * N, N)) * pairwise_sum(inner) * nu.spec.unit_cell_volume();
    });
    return pairwise_sum(outer) * nu.spec.macro_cell_volume();
}

struct PairingResult {
    std::string z_label;
    std::string psi_label;
    std::vector<double> eps;
    std::vector<double> values;
    double target = 0.0;
    double rate = std::numeric_limits<double>::quiet_NaN();  // NaN with fewer than 3 points

    double error(std::size_t n) const { return std::abs(values[n] - target); }
    double final_error() const { return error(values.size() - 1); }
};

/// Least-squares slope of log|value − target| against log ε. Errors at the round-off
/// floor 1e-12 (1 + |target|) are clamped to it; when every error sits at the floor the
/// convergence is exact and the rate is +inf.
inline double convergence_rate(const std::vector<double>& eps, const std::vector<double>& values,
                               double target) {
    if (eps.size() < 3) return std::numeric_limits<double>::quiet_NaN();
    const double floor = 1e-12 * (1.0 + std::abs(target));
    bool all_floor = true;
    std::vector<double> lx, ly;
    for (std::size_t n = 0; n < eps.size(); ++n) {
        const double err = std::abs(values[n] - target);
        if (err > floor) all_floor = false;
        lx.push_back(std::log(eps[n]));
        ly.push_back(std::log(std::max(err, floor)));
    }
    if (all_floor) return std::numeric_limits<double>::infinity();
    const double n = static_cast<double>(lx.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) mx += lx[i] / n, my += ly[i] / n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

namespace detail {

/// Refuses schedules whose finest ε has fewer than 8 grid cells per period.
inline void aliasing_guard(const OscillationSequence& seq) {
    const double e = seq.eps_schedule.back();
    for (int a = 0; a < seq.spec.dim_macro; ++a) {
        if (e / seq.spec.macro_step(a) < 8.0 - 1e-9)
            throw Refused("grid under-resolves eps = " + OscillationSequence::format_eps(e) +
                          ": need at least 8 cells per period (n_x >= " +
                          std::to_string(static_cast<long long>(std::ceil(8.0 * (seq.spec.omega_hi[a] - seq.spec.omega_lo[a]) / e))) +
                          ")");
    }
}

}  // namespace detail

/// Empirical pairings of the sequence along the schedule against the measure pairing
/// of nu, for every (z, ψ) in the product of the batteries.
inline std::vector<PairingResult> test_generation(const OscillationSequence& seq,
                                                  const AtomicYoungMeasure& nu,
                                                  const std::vector<NamedMacro>& z_battery,
                                                  const std::vector<NamedCellState>& psi_battery) {
    seq.validate();
    if (z_battery.empty() || psi_battery.empty())
        throw InvalidArgument("test_generation: batteries must be nonempty");
    detail::aliasing_guard(seq);
    std::vector<GridField> fields(seq.eps_schedule.size());
    for (std::size_t n = 0; n < fields.size(); ++n) fields[n] = realize(seq, n);

    std::vector<PairingResult> out;
    for (const auto& z : z_battery)
        for (const auto& psi : psi_battery) {
            PairingResult r;
            r.z_label = z.label;
            r.psi_label = psi.label;
            r.eps = seq.eps_schedule;
            r.target = measure_pairing(nu, z.fn, psi.fn);
            for (std::size_t n = 0; n < fields.size(); ++n)
                r.values.push_back(empirical_pairing(fields[n], seq.eps_schedule[n], z.fn, psi.fn));
            r.rate = convergence_rate(r.eps, r.values, r.target);
            out.push_back(std::move(r));
        }
    return out;
}

struct NamedPeriodic {
    std::string label;
    std::function<double(std::span<const double> y)> fn;
};

inline std::vector<NamedPeriodic> periodic_battery(const std::vector<std::string>& names) {
    std::vector<NamedPeriodic> out;
    for (const auto& n : names) {
        if (n == "one")
            out.push_back({n, [](std::span<const double>) { return 1.0; }});
        else if (n == "sin")
            out.push_back({n, [](std::span<const double> y) { return std::sin(catalog::two_pi * y[0]); }});
        else if (n == "cos")
            out.push_back({n, [](std::span<const double> y) { return std::cos(catalog::two_pi * y[0]); }});
        else if (n == "sin2")
            out.push_back({n, [](std::span<const double> y) { return std::sin(2 * catalog::two_pi * y[0]); }});
        else
            throw InvalidArgument("unknown periodic test function '" + n + "' (catalog: one, sin, cos, sin2)");
    }
    return out;
}

/// Two-scale convergence u_n → u1: ∫ φ(x) ψ(⟨x/ε⟩) u_n^c dx against ∬ φ ψ u1^c for each
/// state component c. Labels carry the component when d > 1.
inline std::vector<PairingResult> test_two_scale_convergence(const OscillationSequence& seq,
                                                             const TwoScaleField& u1,
                                                             const std::vector<NamedMacro>& phi_battery,
                                                             const std::vector<NamedPeriodic>& psi_battery) {
    if (u1.spec.dim_state != seq.spec.dim_state)
        throw InvalidArgument("test_two_scale_convergence: state dimensions differ");
    std::vector<NamedCellState> tests;
    for (const auto& psi : psi_battery)
        for (int c = 0; c < u1.spec.dim_state; ++c) {
            auto label = psi.label + (u1.spec.dim_state > 1 ? "*xi_" + std::to_string(c) : "");
            tests.push_back({label, [fn = psi.fn, c](std::span<const double> y, std::span<const double> xi) {
                                 return fn(y) * xi[c];
                             }});
        }
    // a field whose atoms leave the state window is still a valid limit; widen to hold it
    TwoScaleField lifted = u1;
    double lo = lifted.spec.window.lo, hi = lifted.spec.window.hi;
    for (double v : lifted.values) lo = std::min(lo, v), hi = std::max(hi, v);
    lifted.spec.window = {lo, hi};
    return test_generation(seq, dirac_lift(lifted), phi_battery, tests);
}

struct ProductReport {
    std::vector<double> eps;
    std::vector<double> joint;
    double product_of_marginals = 0.0;
    double gap = 0.0;  // at the finest ε
};

/// ∬ θ₁(x)θ₂(x') ψ₁(⟨x/ε⟩, u_n(x)) ψ₂(⟨x'/ε⟩, u_n(x')) dx dx' against the product
/// ⟨ν, θ₁ψ₁⟩⟨ν, θ₂ψ₂⟩. The double integral of a separable integrand is evaluated as the
/// product of its two single integrals.
inline ProductReport test_product_structure(const OscillationSequence& seq,
                                            const AtomicYoungMeasure& nu, const MacroFunction& theta1,
                                            const MacroFunction& theta2,
                                            const catalog::CellStateFunction& psi1,
                                            const catalog::CellStateFunction& psi2) {
    seq.validate();
    detail::aliasing_guard(seq);
    ProductReport rep;
    rep.eps = seq.eps_schedule;
    rep.product_of_marginals = measure_pairing(nu, theta1, psi1) * measure_pairing(nu, theta2, psi2);
    for (std::size_t n = 0; n < seq.eps_schedule.size(); ++n) {
        const auto u = realize(seq, n);
        const double e = seq.eps_schedule[n];
        rep.joint.push_back(empirical_pairing(u, e, theta1, psi1) * empirical_pairing(u, e, theta2, psi2));
    }
    rep.gap = std::abs(rep.joint.back() - rep.product_of_marginals);
    return rep;
}

/// ε = 2^{-k} for k = first..last.
inline std::vector<double> dyadic_schedule(int first, int last) {
    std::vector<double> out;
    for (int k = first; k <= last; ++k) out.push_back(std::ldexp(1.0, -k));
    return out;
}

}  // namespace oscillab
