#pragma once

// Atomic two-scale Young measures: K weighted atoms per (macro cell, unit cell),
// the standard constructions on them, and the characterization checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/cellhom.hpp"
#include "oscillab/error.hpp"
#include "oscillab/integrands.hpp"
#include "oscillab/lattice.hpp"
#include "oscillab/parallel.hpp"

namespace oscillab {

/// ν_{(x,y)} = Σ_k w_k δ_{ξ_k} on every (macro cell, unit cell) pair. Cells are
/// indexed macro * unit_cells + unit.
struct AtomicYoungMeasure {
    GridSpec spec;
    std::size_t K = 1;
    std::vector<double> atoms;    // [(cell * K + k) * d + component]
    std::vector<double> weights;  // [cell * K + k]

    AtomicYoungMeasure() = default;
    AtomicYoungMeasure(GridSpec s, std::size_t k)
        : spec(std::move(s)), K(k), atoms(cells() * K * spec.dim_state, 0.0),
          weights(cells() * K, 0.0) {}

    std::size_t cells() const { return spec.macro_cells() * spec.unit_cells(); }
    std::size_t cell(std::size_t macro, std::size_t unit) const {
        return macro * spec.unit_cells() + unit;
    }
    std::size_t d() const { return static_cast<std::size_t>(spec.dim_state); }

    std::span<double> atom(std::size_t c, std::size_t k) {
        return std::span(atoms).subspan((c * K + k) * d(), d());
    }
    std::span<const double> atom(std::size_t c, std::size_t k) const {
        return std::span(atoms).subspan((c * K + k) * d(), d());
    }
    double& weight(std::size_t c, std::size_t k) { return weights[c * K + k]; }
    double weight(std::size_t c, std::size_t k) const { return weights[c * K + k]; }

    /// First violated invariant, naming the cell, or nullopt for a valid measure.
    std::optional<std::string> check() const {
        if (K < 1) return "measure has no atoms (K = 0)";
        if (atoms.size() != cells() * K * d() || weights.size() != cells() * K)
            return "atom/weight arrays do not match the grid";
        const std::size_t U = spec.unit_cells();
        for (std::size_t c = 0; c < cells(); ++c) {
            const std::string where =
                "cell (x_cell " + std::to_string(c / U) + ", y_cell " + std::to_string(c % U) + ")";
            double sum = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                const double w = weight(c, k);
                if (!std::isfinite(w) || w < 0.0) return "negative or non-finite weight at " + where;
                sum += w;
                for (double a : atom(c, k)) {
                    if (!std::isfinite(a)) return "non-finite atom at " + where;
                    if (!spec.window.contains(a)) return "atom outside the state window at " + where;
                }
            }
            if (std::abs(sum - 1.0) > 1e-12) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.17g", sum);
                return "weights sum to " + std::string(buf) + " at " + where;
            }
        }
        return std::nullopt;
    }

    void validate() const {
        if (auto msg = check()) throw InvalidArgument("AtomicYoungMeasure: " + *msg);
    }
};

namespace detail {

using AtomList = std::vector<std::pair<std::vector<double>, double>>;

inline AtomList cell_atoms(const AtomicYoungMeasure& nu, std::size_t c) {
    AtomList out;
    for (std::size_t k = 0; k < nu.K; ++k) {
        const auto a = nu.atom(c, k);
        out.emplace_back(std::vector<double>(a.begin(), a.end()), nu.weight(c, k));
    }
    return out;
}

/// Sorts atoms lexicographically, drops zero weights and merges atoms whose max-norm
/// distance is below tol into their weighted mean.
inline AtomList canonical(AtomList list, double tol) {
    std::erase_if(list, [](const auto& p) { return p.second == 0.0; });
    std::sort(list.begin(), list.end());
    AtomList out;
    for (auto& [a, w] : list) {
        if (!out.empty()) {
            auto& [b, wb] = out.back();
            double dist = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) dist = std::max(dist, std::abs(a[i] - b[i]));
            if (dist <= tol) {
                const double total = wb + w;
                for (std::size_t i = 0; i < a.size(); ++i) b[i] = (wb * b[i] + w * a[i]) / total;
                wb = total;
                continue;
            }
        }
        out.emplace_back(std::move(a), w);
    }
    return out;
}

inline bool same_atoms(const AtomList& a, const AtomList& b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i].second - b[i].second) > tol) return false;
        for (std::size_t c = 0; c < a[i].first.size(); ++c)
            if (std::abs(a[i].first[c] - b[i].first[c]) > tol) return false;
    }
    return true;
}

/// Builds a measure on a one-point macro structure from per-unit-cell atom lists,
/// broadcast over every macro cell; shorter lists are padded with zero-weight atoms.
inline AtomicYoungMeasure homogeneous_from(const GridSpec& spec, const std::vector<AtomList>& per_y) {
    std::size_t K = 1;
    for (const auto& l : per_y) K = std::max(K, l.size());
    AtomicYoungMeasure out(spec, K);
    const std::size_t U = spec.unit_cells();
    for (std::size_t i = 0; i < spec.macro_cells(); ++i)
        for (std::size_t j = 0; j < U; ++j) {
            const auto& l = per_y[j];
            const std::size_t c = out.cell(i, j);
            for (std::size_t k = 0; k < K; ++k) {
                const auto& src = l[std::min(k, l.size() - 1)];
                std::copy(src.first.begin(), src.first.end(), out.atom(c, k).begin());
                out.weight(c, k) = k < l.size() ? src.second : 0.0;
            }
        }
    return out;
}

inline double merge_tol(const GridSpec& spec) { return 1e-9 * spec.window.width(); }

}  // namespace detail

inline AtomicYoungMeasure dirac_lift(const TwoScaleField& u1) {
    for (double v : u1.values)
        if (!std::isfinite(v)) throw InvalidArgument("dirac_lift: non-finite field value");
    AtomicYoungMeasure nu(u1.spec, 1);
    nu.atoms = u1.values;
    std::fill(nu.weights.begin(), nu.weights.end(), 1.0);
    return nu;
}

/// u_1(x, y) = Σ_k w_k ξ_k.
inline TwoScaleField barycenter(const AtomicYoungMeasure& nu) {
    TwoScaleField u1(nu.spec);
    const std::size_t d = nu.d();
    for (std::size_t c = 0; c < nu.cells(); ++c)
        for (std::size_t k = 0; k < nu.K; ++k)
            for (std::size_t i = 0; i < d; ++i) u1.values[c * d + i] += nu.weight(c, k) * nu.atom(c, k)[i];
    return u1;
}

/// u(x) = ∫_Q u_1(x, y) dy.
inline GridField underlying_deformation(const AtomicYoungMeasure& nu) {
    const auto u1 = barycenter(nu);
    GridField u(nu.spec);
    const std::size_t U = nu.spec.unit_cells();
    const std::size_t d = nu.d();
    std::vector<double> terms(U);
    for (std::size_t i = 0; i < nu.spec.macro_cells(); ++i)
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t j = 0; j < U; ++j) terms[j] = u1.at(i, j)[c];
            u.at(i)[c] = pairwise_sum(terms) * nu.spec.unit_cell_volume();
        }
    return u;
}

/// ∫_Ω ∫_Q Σ_k w_k |ξ_k|^p dy dx with p = spec.p_exponent.
inline double p_moment(const AtomicYoungMeasure& nu) {
    const std::size_t U = nu.spec.unit_cells();
    std::vector<double> inner(U), outer(nu.spec.macro_cells());
    for (std::size_t i = 0; i < outer.size(); ++i) {
        for (std::size_t j = 0; j < U; ++j) {
            const std::size_t c = nu.cell(i, j);
            double s = 0.0;
            for (std::size_t k = 0; k < nu.K; ++k)
                s += nu.weight(c, k) * std::pow(euclidean_norm(nu.atom(c, k)), nu.spec.p_exponent);
            inner[j] = s;
        }
        outer[i] = pairwise_sum(inner) * nu.spec.unit_cell_volume();
    }
    return pairwise_sum(outer) * nu.spec.macro_cell_volume();
}

/// μ = Σ_{a ∈ Z^N ∩ [0,T)^N} T^{-N} δ_{F + φ(a + y)}, the same at every macro cell.
inline AtomicYoungMeasure periodic_shift_measure(const catalog::PeriodicSampler& phi,
                                                 std::span<const double> F, int T,
                                                 const GridSpec& spec,
                                                 std::size_t capacity = 64) {
    spec.validate();
    if (T < 1) throw InvalidArgument("periodic_shift_measure: T must be >= 1");
    if (F.size() != static_cast<std::size_t>(spec.dim_state))
        throw InvalidArgument("periodic_shift_measure: F has the wrong dimension");
    const std::size_t K = ipow(static_cast<std::size_t>(T), spec.dim_macro);
    if (K > capacity)
        throw Refused("periodic_shift_measure needs " + std::to_string(K) +
                      " atoms per cell, capacity is " + std::to_string(capacity));
    const auto N = static_cast<std::size_t>(spec.dim_macro);
    const std::size_t d = F.size();
    const std::size_t U = spec.unit_cells();
    const auto ys = spec.unit_midpoints();

    std::vector<double> unit_atoms(U * K * d);
    std::vector<double> t(N);
    for (std::size_t j = 0; j < U; ++j)
        for (std::size_t k = 0; k < K; ++k) {
            std::size_t rest = k;
            for (std::size_t a = 0; a < N; ++a) {
                t[a] = static_cast<double>(rest % static_cast<std::size_t>(T)) + ys[j * N + a];
                rest /= static_cast<std::size_t>(T);
            }
            auto out = std::span(unit_atoms).subspan((j * K + k) * d, d);
            phi(t, out);
            for (std::size_t c = 0; c < d; ++c) out[c] += F[c];
        }

    AtomicYoungMeasure mu(spec, K);
    const double w = 1.0 / static_cast<double>(K);
    for (std::size_t i = 0; i < spec.macro_cells(); ++i)
        for (std::size_t j = 0; j < U; ++j) {
            const std::size_t c = mu.cell(i, j);
            std::copy_n(unit_atoms.begin() + static_cast<std::ptrdiff_t>(j * K * d), K * d,
                        mu.atoms.begin() + static_cast<std::ptrdiff_t>(c * K * d));
            for (std::size_t k = 0; k < K; ++k) mu.weight(c, k) = w;
        }
    if (auto msg = mu.check()) throw InvalidArgument("periodic_shift_measure: " + *msg);
    return mu;
}

/// σ = μ on D × Q and ν elsewhere; D is a mask over macro cells. Both measures must
/// have the same underlying deformation.
inline AtomicYoungMeasure glue(const AtomicYoungMeasure& mu, const AtomicYoungMeasure& nu,
                               const std::vector<bool>& in_D) {
    if (!mu.spec.same_grid(nu.spec)) throw InvalidArgument("glue: measures live on different grids");
    if (in_D.size() != mu.spec.macro_cells())
        throw InvalidArgument("glue: the cell mask must cover every macro cell");
    mu.validate();
    nu.validate();
    const auto um = underlying_deformation(mu);
    const auto un = underlying_deformation(nu);
    for (std::size_t i = 0; i < um.values.size(); ++i)
        if (std::abs(um.values[i] - un.values[i]) > 1e-9)
            throw PreconditionViolation("glue: underlying deformations differ at macro cell " +
                                        std::to_string(i / mu.d()));
    const std::size_t K = std::max(mu.K, nu.K);
    AtomicYoungMeasure out(mu.spec, K);
    const std::size_t U = mu.spec.unit_cells();
    for (std::size_t i = 0; i < mu.spec.macro_cells(); ++i) {
        const auto& src = in_D[i] ? mu : nu;
        for (std::size_t j = 0; j < U; ++j) {
            const std::size_t c = out.cell(i, j);
            for (std::size_t k = 0; k < K; ++k) {
                const std::size_t ks = std::min(k, src.K - 1);
                const auto a = src.atom(c, ks);
                std::copy(a.begin(), a.end(), out.atom(c, k).begin());
                out.weight(c, k) = k < src.K ? src.weight(c, k) : 0.0;
            }
        }
    }
    return out;
}

/// Mask of the macro cells whose axis-0 index lies in the first fraction t of the grid.
inline std::vector<bool> slab_mask(const GridSpec& spec, double t) {
    const double cut = t * spec.n_x;
    const auto k = static_cast<std::size_t>(std::llround(cut));
    if (!(t > 0.0 && t < 1.0) || std::abs(cut - static_cast<double>(k)) > 1e-9)
        throw InvalidArgument("slab fraction t must lie in (0,1) with n_x * t an integer");
    std::vector<bool> mask(spec.macro_cells());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % static_cast<std::size_t>(spec.n_x) < k;
    return mask;
}

/// ν̄_y = ⨍_Ω ν_{(x,y)} dx, compressed by merging atoms closer than merge_tol.
inline AtomicYoungMeasure average_over_x(const AtomicYoungMeasure& nu) {
    nu.validate();
    const std::size_t U = nu.spec.unit_cells();
    const std::size_t X = nu.spec.macro_cells();
    const double share = 1.0 / static_cast<double>(X);
    std::vector<detail::AtomList> per_y(U);
    parallel_for(U, [&](std::size_t j) {
        detail::AtomList all;
        for (std::size_t i = 0; i < X; ++i)
            for (auto& [a, w] : detail::cell_atoms(nu, nu.cell(i, j)))
                all.emplace_back(std::move(a), w * share);
        per_y[j] = detail::canonical(std::move(all), detail::merge_tol(nu.spec));
    });
    auto out = detail::homogeneous_from(nu.spec, per_y);
    // renormalize away the round-off of the 1/X shares
    for (std::size_t c = 0; c < out.cells(); ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < out.K; ++k) s += out.weight(c, k);
        for (std::size_t k = 0; k < out.K; ++k) out.weight(c, k) /= s;
    }
    return out;
}

/// Homogeneous iff the canonical atom lists of every unit cell agree across macro cells
/// within tol.
inline bool is_homogeneous(const AtomicYoungMeasure& nu, double tol = 1e-12) {
    const std::size_t U = nu.spec.unit_cells();
    for (std::size_t j = 0; j < U; ++j) {
        const auto ref = detail::canonical(detail::cell_atoms(nu, nu.cell(0, j)), 0.0);
        for (std::size_t i = 1; i < nu.spec.macro_cells(); ++i)
            if (!detail::same_atoms(ref, detail::canonical(detail::cell_atoms(nu, nu.cell(i, j)), 0.0),
                                    tol))
                return false;
    }
    return true;
}

/// t ν + (1−t) μ for homogeneous ν, μ with the same deformation F, realized by gluing
/// ν on the slab (0,t) × (0,1)^{N−1} and averaging over x.
inline AtomicYoungMeasure convex_combination(const AtomicYoungMeasure& nu,
                                             const AtomicYoungMeasure& mu, double t) {
    if (!is_homogeneous(nu) || !is_homogeneous(mu))
        throw PreconditionViolation("convex_combination: both measures must be homogeneous");
    return average_over_x(glue(nu, mu, slab_mask(nu.spec, t)));
}

// Characterization

struct JensenGap {
    std::string label;
    std::size_t worst_cell = 0;
    double gap = 0.0;
    double f_hom = 0.0;  // at the worst cell
};

enum class Verdict { consistent, violated };

inline const char* to_string(Verdict v) { return v == Verdict::consistent ? "consistent" : "violated"; }

struct CharacterizationReport {
    double p_moment = 0.0;
    TwoScaleField barycenter_field;
    GridField deformation;
    std::vector<JensenGap> jensen_gaps;
    Verdict verdict = Verdict::consistent;
    std::vector<std::string> diagnostics;
};

struct CharacterizeOptions {
    std::optional<GridField> claimed_deformation;  // checked against the barycenter y-average
    double gap_tol = 1e-2;                         // relative to 1 + |f_hom|
    double deformation_tol = 1e-9;
    std::uint64_t seed = 1;
    CellSolverOptions solver{};
};

/// Checks moment, barycenter and the Jensen inequality ∫_Q Σ_k w_k f(y, ξ_k) dy ≥ f_hom(u(x))
/// per macro cell for each battery member. It can only refute: "consistent" is relative
/// to the battery.
inline CharacterizationReport characterize(const AtomicYoungMeasure& nu,
                                           const std::vector<IntegrandF>& battery,
                                           const CharacterizeOptions& opt = {}) {
    if (battery.empty()) throw InvalidArgument("characterize: empty battery");
    CharacterizationReport rep;
    if (auto msg = nu.check()) {
        rep.verdict = Verdict::violated;
        rep.diagnostics.push_back("invalid measure: " + *msg);
        return rep;
    }
    rep.p_moment = p_moment(nu);
    if (!std::isfinite(rep.p_moment)) {
        rep.verdict = Verdict::violated;
        rep.diagnostics.push_back("p-moment is not finite");
    }
    rep.barycenter_field = barycenter(nu);
    rep.deformation = underlying_deformation(nu);

    const GridField* u = &rep.deformation;
    if (opt.claimed_deformation) {
        const auto& claim = *opt.claimed_deformation;
        if (!claim.spec.same_macro_grid(nu.spec))
            throw InvalidArgument("characterize: claimed deformation lives on another grid");
        for (std::size_t i = 0; i < claim.values.size(); ++i) {
            const double diff = std::abs(claim.values[i] - rep.deformation.values[i]);
            if (diff > opt.deformation_tol * (1.0 + std::abs(claim.values[i]))) {
                char buf[160];
                std::snprintf(buf, sizeof buf,
                              "barycenter mismatch at macro cell %zu: y-average %.17g, claimed %.17g",
                              i / nu.d(), rep.deformation.values[i], claim.values[i]);
                rep.verdict = Verdict::violated;
                rep.diagnostics.emplace_back(buf);
                break;
            }
        }
        u = &claim;
    }

    const std::size_t X = nu.spec.macro_cells();
    const std::size_t U = nu.spec.unit_cells();
    const auto N = static_cast<std::size_t>(nu.spec.dim_macro);
    const auto ys = nu.spec.unit_midpoints();
    for (const auto& f : battery) {
        CofHomSolver solver(f, nu.spec.n_y, nu.spec.dim_macro, nu.spec.window, opt.seed, opt.solver);
        std::map<std::vector<double>, double> fhom_cache;
        JensenGap worst{f.label, 0, std::numeric_limits<double>::infinity(), 0.0};
        bool violated = false;
        std::vector<double> terms(U);
        for (std::size_t i = 0; i < X; ++i) {
            for (std::size_t j = 0; j < U; ++j) {
                const std::size_t c = nu.cell(i, j);
                double s = 0.0;
                for (std::size_t k = 0; k < nu.K; ++k)
                    if (nu.weight(c, k) > 0.0)
                        s += nu.weight(c, k) * f(std::span(ys).subspan(j * N, N), nu.atom(c, k));
                terms[j] = s;
            }
            const double side = pairwise_sum(terms) * nu.spec.unit_cell_volume();
            const auto ui = u->at(i);
            std::vector<double> key(ui.begin(), ui.end());
            auto it = fhom_cache.find(key);
            if (it == fhom_cache.end()) it = fhom_cache.emplace(key, solver(ui)).first;
            const double fh = it->second;
            const double gap = side - fh;
            if (gap < worst.gap) worst = {f.label, i, gap, fh};
            if (!violated && gap < -opt.gap_tol * (1.0 + std::abs(fh))) {
                violated = true;
                char buf[200];
                std::snprintf(buf, sizeof buf,
                              "Jensen inequality fails for %s at macro cell %zu: measure side %.17g < f_hom %.17g",
                              f.label.c_str(), i, side, fh);
                rep.diagnostics.emplace_back(buf);
            }
        }
        if (violated) rep.verdict = Verdict::violated;
        rep.jensen_gaps.push_back(worst);
    }
    return rep;
}

/// The convex and non-convex local densities used as the default characterization battery.
inline std::vector<IntegrandF> standard_battery() {
    return {catalog::local("quadratic"), catalog::local("weighted_quadratic"),
            catalog::local("double_well"), catalog::local("tilted_weighted")};
}

}  // namespace oscillab
