#pragma once

// The non-local functional I_ε(u) = ∬ W(x, x', ⟨x/ε⟩, ⟨x'/ε⟩, u(x), u(x')), its
// homogenized counterpart over atomic two-scale Young measures, and the Γ-limit
// experiments comparing their minima.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/cellhom.hpp"
#include "oscillab/descent.hpp"
#include "oscillab/error.hpp"
#include "oscillab/integrands.hpp"
#include "oscillab/lattice.hpp"
#include "oscillab/osclab.hpp"
#include "oscillab/parallel.hpp"
#include "oscillab/ymeasure.hpp"

namespace oscillab {

namespace detail {

struct ScalarMin {
    double arg = 0.0;
    double value = 0.0;
};

/// Grid scan of g on [lo, hi] followed by golden-section refinement around the best node.
template <class G>
ScalarMin minimize_scalar(G&& g, double lo, double hi, int points = 201, double xtol = 1e-13) {
    const auto node = [&](int i) { return lo + (hi - lo) * i / (points - 1); };
    ScalarMin best{lo, std::numeric_limits<double>::infinity()};
    int best_i = 0;
    for (int i = 0; i < points; ++i) {
        const double v = g(node(i));
        if (!std::isfinite(v)) throw EvaluationFailure("non-finite value in scalar minimization");
        if (v < best.value) best = {node(i), v}, best_i = i;
    }
    double a = node(std::max(best_i - 1, 0)), b = node(std::min(best_i + 1, points - 1));
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = g(c), fd = g(d);
    for (int it = 0; it < 200 && b - a > xtol * (1.0 + std::abs(a) + std::abs(b)); ++it) {
        if (fc < fd) {
            b = d, d = c, fd = fc;
            c = b - inv_phi * (b - a);
            fc = g(c);
        } else {
            a = c, c = d, fc = fd;
            d = a + inv_phi * (b - a);
            fd = g(d);
        }
    }
    const double x = 0.5 * (a + b);
    const double v = g(x);
    if (v < best.value) best = {x, v};
    return best;
}

inline bool at_edge(double v, const StateWindow& w) {
    const double tol = 1e-9 * w.width();
    return v - w.lo < tol || w.hi - v < tol;
}

/// Folded points ⟨x_i/ε⟩ of the macro midpoints.
inline std::vector<double> folded_points(const GridSpec& spec, double eps) {
    auto ys = spec.macro_midpoints();
    for (auto& y : ys) y = fractional_fold(y / eps);
    return ys;
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t seed, int count) {
    std::vector<std::uint64_t> out;
    for (int s = 0; s < std::max(count, 1); ++s) out.push_back(seed + static_cast<std::uint64_t>(s));
    return out;
}

}  // namespace detail

/// Double midpoint quadrature of W over Ω × Ω.
inline double eval_I_eps(const NonlocalW& W, const GridField& u, double eps) {
    u.validate();
    if (!(eps > 0.0)) throw InvalidArgument("eval_I_eps: eps must be positive");
    const GridSpec& s = u.spec;
    const auto N = static_cast<std::size_t>(s.dim_macro);
    const std::size_t X = u.cells();
    const auto xs = s.macro_midpoints();
    const auto ys = detail::folded_points(s, eps);
    std::vector<double> rows(X);
    parallel_for(X, [&](std::size_t i) {
        std::vector<double> terms(X);
        for (std::size_t j = 0; j < X; ++j) {
            terms[j] = W({std::span(xs).subspan(i * N, N), std::span(xs).subspan(j * N, N),
                          std::span(ys).subspan(i * N, N), std::span(ys).subspan(j * N, N), u.at(i),
                          u.at(j)});
            if (!std::isfinite(terms[j]))
                throw EvaluationFailure("W is not finite at macro cells (" + std::to_string(i) + ", " +
                                        std::to_string(j) + ")");
        }
        rows[i] = pairwise_sum(terms);
    });
    const double h = s.macro_cell_volume();
    return pairwise_sum(rows) * h * h;
}

struct EpsOptions {
    int starts = 8;
    double init_spread = 1.0;
    DescentOptions descent{};
    int max_doublings = 3;
    int scan_points = 201;
    /// Block means of u over the cells of this coarser grid are pinned to its values.
    std::optional<GridField> fixed_deformation;
};

struct EpsMinimum {
    GridField u;
    double value = 0.0;
    bool converged = true;
    StateWindow window{};
};

namespace detail {

/// I_ε / h^N on the cell values and its gradient. Separable densities reduce both to
/// O(n) work; the general case differentiates the row and column of each cell.
class EpsObjective {
public:
    EpsObjective(const NonlocalW& W, const GridSpec& spec, double eps)
        : W_(W), spec_(spec), N_(static_cast<std::size_t>(spec.dim_macro)),
          d_(static_cast<std::size_t>(spec.dim_state)), X_(spec.macro_cells()),
          xs_(spec.macro_midpoints()), ys_(folded_points(spec, eps)) {}

    double operator()(std::span<const double> u) const {
        std::vector<double> rows(X_);
        if (W_.separable) {
            for (std::size_t i = 0; i < X_; ++i) rows[i] = g(i, u.subspan(i * d_, d_));
            return 2.0 * spec_.omega_volume() * pairwise_sum(rows);
        }
        parallel_for(X_, [&](std::size_t i) {
            std::vector<double> terms(X_);
            for (std::size_t j = 0; j < X_; ++j) terms[j] = w(i, j, u.subspan(i * d_, d_), u.subspan(j * d_, d_));
            rows[i] = pairwise_sum(terms);
        });
        return pairwise_sum(rows) * spec_.macro_cell_volume();
    }

    void gradient(std::span<const double> u, std::span<double> grad) const {
        parallel_for(X_, [&](std::size_t i) {
            std::vector<double> ui(u.begin() + static_cast<std::ptrdiff_t>(i * d_),
                                   u.begin() + static_cast<std::ptrdiff_t>((i + 1) * d_));
            for (std::size_t k = 0; k < d_; ++k) {
                const double h = 1e-6 * (1.0 + std::abs(ui[k]));
                const double base = ui[k];
                ui[k] = base + h;
                const double fp = slice(i, ui, u);
                ui[k] = base - h;
                const double fm = slice(i, ui, u);
                ui[k] = base;
                grad[i * d_ + k] = (fp - fm) / (2.0 * h);
            }
        });
    }

private:
    double g(std::size_t i, std::span<const double> v) const {
        return (*W_.separable)(std::span(xs_).subspan(i * N_, N_), std::span(ys_).subspan(i * N_, N_), v);
    }
    double w(std::size_t i, std::size_t j, std::span<const double> a, std::span<const double> b) const {
        return W_({std::span(xs_).subspan(i * N_, N_), std::span(xs_).subspan(j * N_, N_),
                   std::span(ys_).subspan(i * N_, N_), std::span(ys_).subspan(j * N_, N_), a, b});
    }
    /// The part of the objective that depends on cell i, with u_i replaced by ui.
    double slice(std::size_t i, std::span<const double> ui, std::span<const double> u) const {
        if (W_.separable) return 2.0 * spec_.omega_volume() * g(i, ui);
        std::vector<double> terms(2 * X_);
        for (std::size_t j = 0; j < X_; ++j) {
            if (j == i) {
                terms[2 * j] = w(i, i, ui, ui);
                terms[2 * j + 1] = 0.0;
                continue;
            }
            const auto uj = u.subspan(j * d_, d_);
            terms[2 * j] = w(i, j, ui, uj);
            terms[2 * j + 1] = w(j, i, uj, ui);
        }
        return pairwise_sum(terms) * spec_.macro_cell_volume();
    }

    const NonlocalW& W_;
    const GridSpec& spec_;
    std::size_t N_, d_, X_;
    std::vector<double> xs_, ys_;
};

/// Index of the coarse macro cell containing each fine macro cell (same Ω, n_x multiple).
inline std::vector<std::size_t> block_of(const GridSpec& fine, const GridSpec& coarse) {
    if (fine.dim_macro != coarse.dim_macro || fine.omega_lo != coarse.omega_lo ||
        fine.omega_hi != coarse.omega_hi || fine.n_x % coarse.n_x != 0)
        throw InvalidArgument("fixed deformation grid must be a coarsening of the macro grid");
    const auto ratio = static_cast<std::size_t>(fine.n_x / coarse.n_x);
    const auto nf = static_cast<std::size_t>(fine.n_x), nc = static_cast<std::size_t>(coarse.n_x);
    std::vector<std::size_t> out(fine.macro_cells());
    for (std::size_t c = 0; c < out.size(); ++c) {
        std::size_t rest = c, idx = 0, stride = 1;
        for (int a = 0; a < fine.dim_macro; ++a) {
            idx += ((rest % nf) / ratio) * stride;
            rest /= nf;
            stride *= nc;
        }
        out[c] = idx;
    }
    return out;
}

}  // namespace detail

namespace detail {

inline EpsMinimum minimize_I_eps_seeds(const NonlocalW& W, double eps, GridSpec spec,
                                       const std::vector<std::uint64_t>& seeds, const EpsOptions& opt) {
    spec.validate();
    if (!(eps > 0.0)) throw InvalidArgument("minimize_I_eps: eps must be positive");
    const std::size_t d = static_cast<std::size_t>(spec.dim_state);
    const std::size_t X = spec.macro_cells();
    const std::size_t n = X * d;

    std::vector<std::size_t> block;
    std::size_t blocks = 0;
    std::vector<double> target;
    if (opt.fixed_deformation) {
        const auto& fd = *opt.fixed_deformation;
        fd.validate();
        if (fd.spec.dim_state != spec.dim_state)
            throw InvalidArgument("fixed deformation has the wrong state dimension");
        block = block_of(spec, fd.spec);
        blocks = fd.cells();
        target = fd.values;
        for (double v : target)
            if (!spec.window.contains(v))
                throw InvalidArgument("fixed deformation lies outside the state window");
    }

    for (int attempt = 0;; ++attempt) {
        const StateWindow win = spec.window;
        EpsMinimum best;
        best.value = std::numeric_limits<double>::infinity();
        bool touches = false;

        if (W.separable && d == 1 && !opt.fixed_deformation) {
            // I_ε = 2|Ω| ∫ g(x, ⟨x/ε⟩, u(x)) dx decouples into independent cells
            GridField u(spec);
            const auto xs = spec.macro_midpoints();
            const auto ys = folded_points(spec, eps);
            const auto N = static_cast<std::size_t>(spec.dim_macro);
            parallel_for(X, [&](std::size_t i) {
                const auto x = std::span(xs).subspan(i * N, N);
                const auto y = std::span(ys).subspan(i * N, N);
                const auto m = minimize_scalar(
                    [&](double v) { return (*W.separable)(x, y, std::span(&v, 1)); }, win.lo, win.hi,
                    opt.scan_points);
                u.values[i] = m.arg;
            });
            for (double v : u.values) touches = touches || at_edge(v, win);
            best.u = std::move(u);
        } else {
            EpsObjective obj(W, spec, eps);
            const auto project = [&](std::span<double> v) {
                if (!opt.fixed_deformation) {
                    for (auto& x : v) x = std::clamp(x, win.lo, win.hi);
                    return;
                }
                std::vector<std::vector<std::size_t>> members(blocks);
                for (std::size_t i = 0; i < X; ++i) members[block[i]].push_back(i);
                std::vector<double> comp;
                for (std::size_t b = 0; b < blocks; ++b)
                    for (std::size_t k = 0; k < d; ++k) {
                        comp.clear();
                        for (std::size_t i : members[b]) comp.push_back(v[i * d + k]);
                        project_box_mean(comp, win.lo, win.hi, target[b * d + k]);
                        for (std::size_t m = 0; m < members[b].size(); ++m) v[members[b][m] * d + k] = comp[m];
                    }
            };
            std::vector<double> base(n, 0.0);
            if (opt.fixed_deformation)
                for (std::size_t i = 0; i < X; ++i)
                    for (std::size_t k = 0; k < d; ++k) base[i * d + k] = target[block[i] * d + k];
            const std::size_t total = 1 + seeds.size();
            std::vector<DescentOutcome> outs(total);
            // starts run sequentially: the objective already parallelizes over cells
            for (std::size_t s = 0; s < total; ++s) {
                std::vector<double> v0 = base;
                if (s > 0) {
                    std::mt19937_64 rng(seeds[s - 1]);
                    const double spread = std::min(opt.init_spread, 0.5 * win.width());
                    std::uniform_real_distribution<double> dist(-spread, spread);
                    for (auto& x : v0) x += dist(rng);
                }
                outs[s] = projected_gradient_descent(
                    std::move(v0), [&](std::span<const double> v) { return obj(v); },
                    [&](std::span<const double> v, std::span<double> g) { obj.gradient(v, g); }, project,
                    opt.descent);
            }
            std::size_t b = 0;
            for (std::size_t s = 1; s < total; ++s)
                if (outs[s].value < outs[b].value) b = s;
            best.u = GridField(spec, outs[b].x);
            best.converged = outs[b].converged;
            for (double v : best.u.values) touches = touches || at_edge(v, win);
        }

        if (!touches || attempt >= opt.max_doublings) {
            if (touches)
                throw EvaluationFailure("minimize_I_eps: minimizer saturates the state window after " +
                                        std::to_string(opt.max_doublings) + " doublings");
            best.value = eval_I_eps(W, best.u, eps);
            best.window = win;
            return best;
        }
        spec.window = spec.window.doubled();
    }
}

}  // namespace detail

/// Minimizes I_ε over cellwise-constant u on spec's macro grid, with multi-starts seeded
/// seed, seed+1, ... The reported value is eval_I_eps at the minimizer.
inline EpsMinimum minimize_I_eps(const NonlocalW& W, double eps, const GridSpec& spec,
                                 std::uint64_t seed, const EpsOptions& opt = {}) {
    return detail::minimize_I_eps_seeds(W, eps, spec, detail::seed_range(seed, opt.starts), opt);
}

// Homogenized functional

namespace detail {

/// Atoms of a measure flattened to (x, y, ξ, mass) with mass = h_x h_y w.
struct FlatAtoms {
    std::size_t N = 1, d = 1;
    std::vector<double> x, y, xi, mass;
    std::size_t size() const { return mass.size(); }
};

inline FlatAtoms flatten(const AtomicYoungMeasure& nu, bool collapse_y) {
    FlatAtoms f;
    f.N = static_cast<std::size_t>(nu.spec.dim_macro);
    f.d = nu.d();
    const auto xs = nu.spec.macro_midpoints();
    const auto ys = nu.spec.unit_midpoints();
    const double hx = nu.spec.macro_cell_volume(), hy = nu.spec.unit_cell_volume();
    const std::size_t U = nu.spec.unit_cells();
    for (std::size_t i = 0; i < nu.spec.macro_cells(); ++i) {
        if (collapse_y) {
            // ν_{(x,y)} ⊗ dy collapses to μ_x when W ignores y
            AtomList all;
            for (std::size_t j = 0; j < U; ++j)
                for (auto& [a, w] : cell_atoms(nu, nu.cell(i, j))) all.emplace_back(std::move(a), w * hy);
            for (auto& [a, w] : canonical(std::move(all), 0.0)) {
                f.x.insert(f.x.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * f.N),
                           xs.begin() + static_cast<std::ptrdiff_t>((i + 1) * f.N));
                f.y.insert(f.y.end(), ys.begin(), ys.begin() + static_cast<std::ptrdiff_t>(f.N));
                f.xi.insert(f.xi.end(), a.begin(), a.end());
                f.mass.push_back(hx * w);
            }
            continue;
        }
        for (std::size_t j = 0; j < U; ++j) {
            const std::size_t c = nu.cell(i, j);
            for (std::size_t k = 0; k < nu.K; ++k) {
                if (nu.weight(c, k) == 0.0) continue;
                f.x.insert(f.x.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * f.N),
                           xs.begin() + static_cast<std::ptrdiff_t>((i + 1) * f.N));
                f.y.insert(f.y.end(), ys.begin() + static_cast<std::ptrdiff_t>(j * f.N),
                           ys.begin() + static_cast<std::ptrdiff_t>((j + 1) * f.N));
                const auto a = nu.atom(c, k);
                f.xi.insert(f.xi.end(), a.begin(), a.end());
                f.mass.push_back(hx * hy * nu.weight(c, k));
            }
        }
    }
    return f;
}

inline double pair_sum(const NonlocalW& W, const FlatAtoms& f) {
    const std::size_t P = f.size();
    const auto N = f.N, d = f.d;
    std::vector<double> rows(P);
    parallel_for(P, [&](std::size_t a) {
        std::vector<double> terms(P);
        for (std::size_t b = 0; b < P; ++b) {
            const double v = W({std::span(f.x).subspan(a * N, N), std::span(f.x).subspan(b * N, N),
                                 std::span(f.y).subspan(a * N, N), std::span(f.y).subspan(b * N, N),
                                 std::span(f.xi).subspan(a * d, d), std::span(f.xi).subspan(b * d, d)});
            if (!std::isfinite(v)) throw EvaluationFailure("W is not finite on the measure's atoms");
            terms[b] = f.mass[b] * v;
        }
        rows[a] = f.mass[a] * pairwise_sum(terms);
    });
    return pairwise_sum(rows);
}

}  // namespace detail

/// ∬∬ Σ_k Σ_l w_k w_l W(x, x', y, y', ξ_k, ξ'_l) over (Ω × Q)². Separable densities use
/// 2|Ω| ∫∫ Σ_k w_k g; audited y-independent densities collapse the y-quadrature.
inline double eval_I_hom_objective(const NonlocalW& W, const AtomicYoungMeasure& nu) {
    nu.validate();
    if (W.separable) {
        const auto N = static_cast<std::size_t>(nu.spec.dim_macro);
        const auto xs = nu.spec.macro_midpoints();
        const auto ys = nu.spec.unit_midpoints();
        const std::size_t U = nu.spec.unit_cells();
        std::vector<double> outer(nu.spec.macro_cells());
        std::vector<double> inner(U);
        for (std::size_t i = 0; i < outer.size(); ++i) {
            for (std::size_t j = 0; j < U; ++j) {
                const std::size_t c = nu.cell(i, j);
                double s = 0.0;
                for (std::size_t k = 0; k < nu.K; ++k)
                    if (nu.weight(c, k) > 0.0)
                        s += nu.weight(c, k) * (*W.separable)(std::span(xs).subspan(i * N, N),
                                                              std::span(ys).subspan(j * N, N), nu.atom(c, k));
                inner[j] = s;
            }
            outer[i] = pairwise_sum(inner) * nu.spec.unit_cell_volume();
        }
        const double v = 2.0 * nu.spec.omega_volume() * pairwise_sum(outer) * nu.spec.macro_cell_volume();
        if (!std::isfinite(v)) throw EvaluationFailure("W is not finite on the measure's atoms");
        return v;
    }
    return detail::pair_sum(W, detail::flatten(nu, W.y_independent));
}

struct HomOptions {
    int starts = 8;
    double init_spread = 1.0;
    DescentOptions descent{};
    int max_doublings = 3;
    bool audit = true;
    std::vector<IntegrandF> audit_battery;  // empty: standard_battery()
    std::optional<AtomicYoungMeasure> warm;  // extra start, embedded with zero-weight atoms
};

struct HomMinimum {
    AtomicYoungMeasure nu;
    double value = 0.0;
    bool converged = true;
    std::optional<CharacterizationReport> audit;
};

namespace detail {

/// J = I_hom / (h_x h_y) as a function of atoms and weights, with gradients per unit
/// mass for the atoms and per unit weight for the weights.
class HomObjective {
public:
    HomObjective(const NonlocalW& W, const GridSpec& spec, std::size_t K)
        : W_(W), spec_(spec), K_(K), N_(static_cast<std::size_t>(spec.dim_macro)),
          d_(static_cast<std::size_t>(spec.dim_state)), X_(spec.macro_cells()), U_(spec.unit_cells()),
          xs_(spec.macro_midpoints()), ys_(spec.unit_midpoints()),
          scale_(spec.macro_cell_volume() * spec.unit_cell_volume()) {}

    std::size_t atoms() const { return X_ * U_ * K_; }

    double value(std::span<const double> A, std::span<const double> w) const {
        if (W_.separable) {
            std::vector<double> t(atoms());
            for (std::size_t a = 0; a < t.size(); ++a) t[a] = w[a] == 0.0 ? 0.0 : w[a] * g(a, A.subspan(a * d_, d_));
            return 2.0 * spec_.omega_volume() * pairwise_sum(t);
        }
        std::vector<double> rows(atoms());
        parallel_for(atoms(), [&](std::size_t a) {
            std::vector<double> t(atoms());
            for (std::size_t b = 0; b < t.size(); ++b)
                t[b] = w[b] == 0.0 ? 0.0 : w[b] * pair(a, b, A.subspan(a * d_, d_), A.subspan(b * d_, d_));
            rows[a] = w[a] * pairwise_sum(t);
        });
        return scale_ * pairwise_sum(rows);
    }

    void atom_gradient(std::span<const double> A, std::span<const double> w, std::span<double> G) const {
        parallel_for(atoms(), [&](std::size_t a) {
            std::vector<double> xa(A.begin() + static_cast<std::ptrdiff_t>(a * d_),
                                   A.begin() + static_cast<std::ptrdiff_t>((a + 1) * d_));
            for (std::size_t k = 0; k < d_; ++k) {
                const double base = xa[k];
                const double h = 1e-6 * (1.0 + std::abs(base));
                xa[k] = base + h;
                const double fp = unit_slice(a, xa, A, w);
                xa[k] = base - h;
                const double fm = unit_slice(a, xa, A, w);
                xa[k] = base;
                G[a * d_ + k] = (fp - fm) / (2.0 * h);
            }
        });
    }

    void weight_gradient(std::span<const double> A, std::span<const double> w, std::span<double> H) const {
        parallel_for(atoms(), [&](std::size_t a) {
            if (W_.separable) {
                H[a] = 2.0 * spec_.omega_volume() * g(a, A.subspan(a * d_, d_));
                return;
            }
            std::vector<double> t(atoms());
            for (std::size_t b = 0; b < t.size(); ++b)
                t[b] = w[b] * (pair(a, b, A.subspan(a * d_, d_), A.subspan(b * d_, d_)) +
                               pair(b, a, A.subspan(b * d_, d_), A.subspan(a * d_, d_)));
            H[a] = scale_ * pairwise_sum(t);
        });
    }

    std::size_t macro_of(std::size_t a) const { return a / (U_ * K_); }

private:
    std::span<const double> x(std::size_t a) const { return std::span(xs_).subspan(macro_of(a) * N_, N_); }
    std::span<const double> y(std::size_t a) const { return std::span(ys_).subspan(((a / K_) % U_) * N_, N_); }
    double g(std::size_t a, std::span<const double> xi) const { return (*W_.separable)(x(a), y(a), xi); }
    double pair(std::size_t a, std::size_t b, std::span<const double> xa, std::span<const double> xb) const {
        return W_({x(a), x(b), y(a), y(b), xa, xb});
    }
    /// Derivative of J with respect to atom a's position, divided by its weight.
    double unit_slice(std::size_t a, std::span<const double> xa, std::span<const double> A,
                      std::span<const double> w) const {
        if (W_.separable) return 2.0 * spec_.omega_volume() * g(a, xa);
        std::vector<double> t(atoms());
        for (std::size_t b = 0; b < t.size(); ++b) {
            if (b == a) {
                t[b] = w[a] * pair(a, a, xa, xa);
                continue;
            }
            const auto xb = A.subspan(b * d_, d_);
            t[b] = w[b] * (pair(a, b, xa, xb) + pair(b, a, xb, xa));
        }
        return scale_ * pairwise_sum(t);
    }

    const NonlocalW& W_;
    const GridSpec& spec_;
    std::size_t K_, N_, d_, X_, U_;
    std::vector<double> xs_, ys_;
    double scale_;
};

/// Shifts the atoms of every macro cell by one constant per component so that the
/// y-average of the barycenter equals u there, clamping to the window. Without u the
/// atoms are only clamped.
inline void restore_barycenter(std::span<double> A, std::span<const double> w, const GridSpec& spec,
                               std::size_t K, const std::vector<double>* u) {
    const auto d = static_cast<std::size_t>(spec.dim_state);
    const StateWindow win = spec.window;
    if (!u) {
        for (auto& v : A) v = std::clamp(v, win.lo, win.hi);
        return;
    }
    const std::size_t per_macro = spec.unit_cells() * K;
    const double hy = spec.unit_cell_volume();
    for (std::size_t i = 0; i < spec.macro_cells(); ++i)
        for (std::size_t c = 0; c < d; ++c) {
            const auto mean_after = [&](double lam) {
                double s = 0.0;
                for (std::size_t a = i * per_macro; a < (i + 1) * per_macro; ++a)
                    s += w[a] * std::clamp(A[a * d + c] + lam, win.lo, win.hi);
                return s * hy;
            };
            const double target = (*u)[i * d + c];
            double lo = 0.0, hi = 0.0, vmin = INFINITY, vmax = -INFINITY;
            for (std::size_t a = i * per_macro; a < (i + 1) * per_macro; ++a)
                vmin = std::min(vmin, A[a * d + c]), vmax = std::max(vmax, A[a * d + c]);
            // exact shift when no atom leaves the window
            double lam = target - mean_after(0.0);
            if (vmin + lam < win.lo || vmax + lam > win.hi) {
                lo = win.lo - vmax, hi = win.hi - vmin;
                for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (mean_after(mid) < target ? lo : hi) = mid;
                }
                lam = 0.5 * (lo + hi);
            }
            for (std::size_t a = i * per_macro; a < (i + 1) * per_macro; ++a)
                A[a * d + c] = std::clamp(A[a * d + c] + lam, win.lo, win.hi);
        }
}

struct HomRun {
    std::vector<double> A, w;
    double value = 0.0;
    bool converged = false;
};

/// Alternating descent: an atom step along the per-mass gradient followed by the
/// barycenter shift, then a weight step projected onto each cell's simplex.
inline HomRun hom_descent(const HomObjective& obj, std::vector<double> A, std::vector<double> w,
                          const GridSpec& spec, std::size_t K, const std::vector<double>* u,
                          const DescentOptions& opt) {
    const auto d = static_cast<std::size_t>(spec.dim_state);
    const std::size_t P = obj.atoms();
    const std::size_t cells = spec.macro_cells() * spec.unit_cells();
    const auto project_weights = [&](std::span<double> v) {
        for (std::size_t c = 0; c < cells; ++c) project_simplex(v.subspan(c * K, K));
    };
    restore_barycenter(A, w, spec, K, u);
    double J = obj.value(A, w);
    if (!std::isfinite(J)) throw EvaluationFailure("non-finite I_hom objective at the starting measure");

    HomRun run;
    std::vector<double> G(P * d), H(P), TA(P * d), Tw(P);
    // With the barycenter pinned, moving weight onto atom a forces a shift of the whole
    // macro cell, which costs h_y ξ_a · Σ_b w_b ∇_b J at first order.
    const std::size_t per_macro = spec.unit_cells() * K;
    const double hy = spec.unit_cell_volume();
    const auto reduced_weight_gradient = [&](bool fresh_atoms) {
        obj.weight_gradient(A, w, H);
        if (!u) return;
        if (!fresh_atoms) obj.atom_gradient(A, w, G);
        for (std::size_t i = 0; i < spec.macro_cells(); ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double S = 0.0;
                for (std::size_t a = i * per_macro; a < (i + 1) * per_macro; ++a) S += w[a] * G[a * d + c];
                for (std::size_t a = i * per_macro; a < (i + 1) * per_macro; ++a) H[a] -= hy * A[a * d + c] * S;
            }
    };
    for (int it = 0; it < opt.max_iter; ++it) {
        obj.atom_gradient(A, w, G);
        for (std::size_t i = 0; i < TA.size(); ++i) TA[i] = A[i] - G[i];
        restore_barycenter(TA, w, spec, K, u);
        double rA = 0.0;
        for (std::size_t a = 0; a < P; ++a)
            for (std::size_t c = 0; c < d; ++c) rA += w[a] * (TA[a * d + c] - A[a * d + c]) * (TA[a * d + c] - A[a * d + c]);
        rA = std::sqrt(rA / static_cast<double>(cells));
        double rW = 0.0;
        if (K > 1) {
            reduced_weight_gradient(true);
            for (std::size_t a = 0; a < P; ++a) Tw[a] = w[a] - H[a];
            project_weights(Tw);
            for (std::size_t a = 0; a < P; ++a) rW += (Tw[a] - w[a]) * (Tw[a] - w[a]);
            rW = std::sqrt(rW / static_cast<double>(P));
        }
        if (std::max(rA, rW) < opt.grad_tol) {
            run.converged = true;
            break;
        }

        bool accepted = false;
        double step = opt.initial_step;
        for (int b = 0; b < opt.max_backtracks && rA >= opt.grad_tol; ++b, step *= 0.5) {
            for (std::size_t i = 0; i < TA.size(); ++i) TA[i] = A[i] - step * G[i];
            restore_barycenter(TA, w, spec, K, u);
            double sq = 0.0;
            for (std::size_t a = 0; a < P; ++a)
                for (std::size_t c = 0; c < d; ++c) sq += w[a] * (TA[a * d + c] - A[a * d + c]) * (TA[a * d + c] - A[a * d + c]);
            const double Jt = obj.value(TA, w);
            if (!std::isfinite(Jt)) throw EvaluationFailure("non-finite I_hom objective during descent");
            if (Jt <= J - opt.armijo / step * sq) {
                A.swap(TA);
                J = Jt;
                accepted = true;
                break;
            }
        }
        if (K > 1) {
            reduced_weight_gradient(false);
            step = opt.initial_step;
            for (int b = 0; b < opt.max_backtracks; ++b, step *= 0.5) {
                for (std::size_t a = 0; a < P; ++a) Tw[a] = w[a] - step * H[a];
                project_weights(Tw);
                TA = A;
                restore_barycenter(TA, Tw, spec, K, u);
                double sq = 0.0;
                for (std::size_t a = 0; a < P; ++a) sq += (Tw[a] - w[a]) * (Tw[a] - w[a]);
                if (sq == 0.0) break;
                const double Jt = obj.value(TA, Tw);
                if (!std::isfinite(Jt)) throw EvaluationFailure("non-finite I_hom objective during descent");
                if (Jt <= J - opt.armijo / step * sq) {
                    w.swap(Tw);
                    A.swap(TA);
                    J = Jt;
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted) {
            run.converged = std::max(rA, rW) < 1e3 * opt.grad_tol;
            break;
        }
    }
    run.A = std::move(A);
    run.w = std::move(w);
    run.value = J;
    return run;
}

inline HomMinimum minimize_I_hom_seeds(const NonlocalW& W, const std::optional<GridField>& u, std::size_t K,
                                       GridSpec spec, const std::vector<std::uint64_t>& seeds,
                                       const HomOptions& opt) {
    spec.validate();
    if (K < 1) throw InvalidArgument("minimize_I_hom: K must be >= 1");
    const auto d = static_cast<std::size_t>(spec.dim_state);
    std::vector<double> target;
    if (u) {
        u->validate();
        if (!u->spec.same_macro_grid(spec))
            throw InvalidArgument("minimize_I_hom: deformation lives on another macro grid");
        for (double v : u->values)
            if (!spec.window.contains(v))
                throw InvalidArgument("minimize_I_hom: deformation lies outside the state window");
        target = u->values;
    }

    // an audited y-independent density is solved with a single unit cell and broadcast
    GridSpec solve_spec = spec;
    if (W.y_independent) solve_spec.n_y = 1;

    for (int attempt = 0;; ++attempt) {
        HomObjective obj(W, solve_spec, K);
        const std::size_t P = obj.atoms();
        const std::size_t per_macro = solve_spec.unit_cells() * K;
        const StateWindow win = solve_spec.window;

        std::vector<std::vector<double>> starts_A;
        std::vector<std::vector<double>> starts_w;
        const double spread = std::min(opt.init_spread, 0.5 * win.width());
        const auto base = [&](std::size_t a, std::size_t c) { return u ? target[obj.macro_of(a) * d + c] : 0.0; };
        {
            std::vector<double> A(P * d), w(P, 1.0 / static_cast<double>(K));
            for (std::size_t a = 0; a < P; ++a)
                for (std::size_t c = 0; c < d; ++c) {
                    const double k = static_cast<double>(a % K);
                    const double offset = K > 1 ? spread * (2.0 * k / static_cast<double>(K - 1) - 1.0) : 0.0;
                    A[a * d + c] = base(a, c) + offset;
                }
            starts_A.push_back(std::move(A));
            starts_w.push_back(std::move(w));
        }
        for (auto s : seeds) {
            std::mt19937_64 rng(s);
            std::uniform_real_distribution<double> dist(-spread, spread);
            std::vector<double> A(P * d), w(P, 1.0 / static_cast<double>(K));
            for (std::size_t a = 0; a < P; ++a)
                for (std::size_t c = 0; c < d; ++c) A[a * d + c] = base(a, c) + dist(rng);
            starts_A.push_back(std::move(A));
            starts_w.push_back(std::move(w));
        }
        if (opt.warm && opt.warm->K <= K && opt.warm->spec.same_macro_grid(solve_spec) &&
            opt.warm->spec.n_y == solve_spec.n_y) {
            std::mt19937_64 rng(seeds.empty() ? 0 : seeds.front());
            std::uniform_real_distribution<double> dist(-spread, spread);
            std::vector<double> A(P * d), w(P, 0.0);
            const auto& m = *opt.warm;
            for (std::size_t c = 0; c < m.cells(); ++c)
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t a = c * K + k;
                    for (std::size_t i = 0; i < d; ++i)
                        A[a * d + i] = k < m.K ? m.atom(c, k)[i] : std::clamp(base(a, i) + dist(rng), win.lo, win.hi);
                    w[a] = k < m.K ? m.weight(c, k) : 0.0;
                }
            starts_A.push_back(std::move(A));
            starts_w.push_back(std::move(w));
        }

        std::vector<HomRun> runs(starts_A.size());
        for (std::size_t s = 0; s < runs.size(); ++s) {
            for (auto& v : starts_A[s]) v = std::clamp(v, win.lo, win.hi);
            runs[s] = hom_descent(obj, std::move(starts_A[s]), std::move(starts_w[s]), solve_spec, K,
                                  u ? &target : nullptr, opt.descent);
        }
        std::size_t best = 0;
        for (std::size_t s = 1; s < runs.size(); ++s)
            if (runs[s].value < runs[best].value) best = s;
        const auto& run = runs[best];

        bool touches = false;
        for (std::size_t a = 0; a < P; ++a)
            if (run.w[a] > 0.0)
                for (std::size_t c = 0; c < d; ++c) touches = touches || at_edge(run.A[a * d + c], win);
        if (touches && attempt < opt.max_doublings) {
            solve_spec.window = solve_spec.window.doubled();
            spec.window = solve_spec.window;
            continue;
        }
        if (touches)
            throw EvaluationFailure("minimize_I_hom: atoms saturate the state window after " +
                                    std::to_string(opt.max_doublings) + " doublings");

        HomMinimum out;
        spec.window = solve_spec.window;
        out.nu = AtomicYoungMeasure(spec, K);
        for (std::size_t i = 0; i < spec.macro_cells(); ++i)
            for (std::size_t j = 0; j < spec.unit_cells(); ++j) {
                const std::size_t src = i * solve_spec.unit_cells() + (W.y_independent ? 0 : j);
                const std::size_t dst = out.nu.cell(i, j);
                for (std::size_t k = 0; k < K; ++k) {
                    out.nu.weight(dst, k) = run.w[src * K + k];
                    for (std::size_t c = 0; c < d; ++c) out.nu.atom(dst, k)[c] = run.A[(src * K + k) * d + c];
                }
            }
        (void)per_macro;
        // simplex projection leaves sums within an ulp or two of 1
        for (std::size_t c = 0; c < out.nu.cells(); ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += out.nu.weight(c, k);
            for (std::size_t k = 0; k < K; ++k) out.nu.weight(c, k) /= s;
        }
        out.value = eval_I_hom_objective(W, out.nu);
        out.converged = run.converged;
        if (opt.audit) {
            CharacterizeOptions co;
            if (u) co.claimed_deformation = *u;
            co.deformation_tol = 1e-6;
            out.audit = characterize(out.nu, opt.audit_battery.empty() ? standard_battery() : opt.audit_battery, co);
        }
        return out;
    }
}

}  // namespace detail

/// Minimizes I_hom over K-atom measures. With u the barycenter y-average is pinned to u
/// per macro cell; without it the deformation is free. The output is audited with
/// characterize unless disabled.
inline HomMinimum minimize_I_hom(const NonlocalW& W, const std::optional<GridField>& u, std::size_t K,
                                 const GridSpec& spec, std::uint64_t seed, const HomOptions& opt = {}) {
    return detail::minimize_I_hom_seeds(W, u, K, spec, detail::seed_range(seed, opt.starts), opt);
}

/// Checks on sampled tuples that W ignores y and y' and returns it flagged.
inline NonlocalW reduce_y_independent(NonlocalW W, const GridSpec& spec = {}, std::size_t n_samples = 2000,
                                      std::uint64_t seed = 1) {
    detail::TupleSampler sampler{spec, std::mt19937_64(seed)};
    AuditWitness w;
    std::vector<double> y2, yp2;
    for (std::size_t s = 0; s < n_samples; ++s) {
        sampler.tuple(w);
        sampler.unit(y2);
        sampler.unit(yp2);
        const double a = W(detail::args_of(w));
        const double b = W({w.x, w.xp, y2, yp2, w.xi, w.xip});
        if (std::abs(a - b) > 1e-12) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s depends on y: W changes by %.3g between y = %.6g and y = %.6g",
                          W.label.c_str(), std::abs(a - b), w.y[0], y2[0]);
            throw Refused(buf);
        }
    }
    W.y_independent = true;
    return W;
}

struct GammaExperiment {
    NonlocalW W;
    std::vector<double> eps_schedule;
    GridSpec spec;      // grid for I_ε
    GridSpec hom_spec;  // grid for the homogenized problem
    std::optional<GridField> fixed_deformation;  // on hom_spec's macro grid; free when empty
    std::size_t K = 4;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
};

struct GammaReport {
    std::vector<double> eps;
    std::vector<double> min_I_eps;
    std::vector<double> gaps;
    double I_hom = 0.0;
    HomMinimum hom;
    double final_gap = 0.0;
    bool tail_nonincreasing = true;  // gaps nonincreasing up to the quadrature floor
};

/// min I_ε along the schedule against min I_hom, both with the same constraint.
inline GammaReport gamma_experiment(const GammaExperiment& exp, const EpsOptions& eps_opt = {},
                                    const HomOptions& hom_opt = {}) {
    OscillationSequence::check_schedule(exp.eps_schedule, exp.spec);
    if (exp.K < 1) throw InvalidArgument("gamma experiment needs K >= 1");
    if (exp.seeds.empty()) throw InvalidArgument("gamma experiment needs at least one seed");
    GammaReport rep;
    rep.eps = exp.eps_schedule;
    rep.hom = detail::minimize_I_hom_seeds(exp.W, exp.fixed_deformation, exp.K, exp.hom_spec, exp.seeds, hom_opt);
    rep.I_hom = rep.hom.value;
    EpsOptions eo = eps_opt;
    eo.fixed_deformation = exp.fixed_deformation;
    for (double e : exp.eps_schedule) {
        const auto m = detail::minimize_I_eps_seeds(exp.W, e, exp.spec, exp.seeds, eo);
        rep.min_I_eps.push_back(m.value);
        rep.gaps.push_back(std::abs(m.value - rep.I_hom));
    }
    const double floor = 1e-4 * (1.0 + std::abs(rep.I_hom));
    for (std::size_t n = 1; n < rep.gaps.size(); ++n)
        if (rep.gaps[n] > rep.gaps[n - 1] + floor) rep.tail_nonincreasing = false;
    rep.final_gap = rep.gaps.back();
    return rep;
}

struct SingleGammaReport {
    std::vector<double> eps;
    std::vector<double> min_F_eps;
    double min_hom = 0.0;
    double argmin_hom = 0.0;
    std::vector<double> gaps;
};

/// The convexified cell problem is convex, so one start suffices.
inline CellSolverOptions single_start_solver() {
    CellSolverOptions o;
    o.starts = 1;
    return o;
}

/// F_ε(u) = ∫ f(⟨x/ε⟩, u(x)) dx is minimized cell by cell; the limit side minimizes
/// ∫ f_hom(u) = |Ω| f_hom(ξ) over constants, f_hom from the convexified cell formula.
inline SingleGammaReport single_integral_gamma(const IntegrandF& f, const std::vector<double>& eps_schedule,
                                               const GridSpec& spec, std::uint64_t seed,
                                               const CellSolverOptions& opt = single_start_solver()) {
    spec.validate();
    if (spec.dim_state != 1) throw UnsupportedDimension("single_integral_gamma requires d = 1");
    OscillationSequence::check_schedule(eps_schedule, spec);
    SingleGammaReport rep;
    rep.eps = eps_schedule;
    const auto N = static_cast<std::size_t>(spec.dim_macro);
    for (double e : eps_schedule) {
        StateWindow win = f.window.value_or(spec.window);
        for (int attempt = 0;; ++attempt) {
            const auto ys = detail::folded_points(spec, e);
            std::vector<double> mins(spec.macro_cells()), args(spec.macro_cells());
            parallel_for(mins.size(), [&](std::size_t i) {
                const auto y = std::span(ys).subspan(i * N, N);
                const auto m = detail::minimize_scalar([&](double v) { return f(y, std::span(&v, 1)); }, win.lo, win.hi);
                mins[i] = m.value, args[i] = m.arg;
            });
            bool touches = false;
            for (double a : args) touches = touches || detail::at_edge(a, win);
            if (touches && !f.window && attempt < 3) {
                win = win.doubled();
                continue;
            }
            rep.min_F_eps.push_back(pairwise_sum(mins) * spec.macro_cell_volume());
            break;
        }
    }
    CofHomSolver solver(f, spec.n_y, spec.dim_macro, spec.window, seed, opt);
    const StateWindow win = f.window.value_or(spec.window);
    // f_hom is convex in ξ: a coarse scan brackets the minimum
    const auto m = detail::minimize_scalar([&](double v) { return solver(v); }, win.lo, win.hi, 17, 1e-7);
    rep.argmin_hom = m.arg;
    rep.min_hom = m.value * spec.omega_volume();
    for (double v : rep.min_F_eps) rep.gaps.push_back(std::abs(v - rep.min_hom));
    return rep;
}

}  // namespace oscillab
