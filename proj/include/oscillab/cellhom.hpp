#pragma once

// Homogenized density f_hom(ξ): the T-cell minimization over zero-mean cellwise
// constant competitors, its single-cell form on the convex envelope, and an
// exhaustive oracle for tiny instances.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oscillab/descent.hpp"
#include "oscillab/error.hpp"
#include "oscillab/integrands.hpp"
#include "oscillab/lattice.hpp"
#include "oscillab/parallel.hpp"

namespace oscillab {

/// inf (1/T^N) ∫_{(0,T)^N} f(⟨x⟩, ξ + v(x)) dx over v cellwise constant on the
/// (T·m)^N subcell grid with ∫ v = 0.
struct CellProblem {
    IntegrandF f;
    std::vector<double> xi;  // macroscopic state, d = xi.size()
    int T = 1;
    int m = 8;
    int dim_macro = 1;
    StateWindow window{};

    std::size_t subcells_per_axis() const { return static_cast<std::size_t>(T) * m; }
    std::size_t subcells() const { return ipow(subcells_per_axis(), dim_macro); }
    int dim_state() const { return static_cast<int>(xi.size()); }
};

struct CellSolverOptions {
    int starts = 8;
    double init_spread = 1.0;
    DescentOptions descent{};
    int max_doublings = 3;
};

struct CellSolution {
    double value = 0.0;
    std::vector<double> v;  // subcells × d, zero mean per component
    StateWindow window{};
    bool touches_window = false;
};

enum class HomStatus { converged, plateau_not_reached };

inline const char* to_string(HomStatus s) {
    return s == HomStatus::converged ? "converged" : "plateau-not-reached";
}

struct HomDensityEstimate {
    std::vector<double> xi;
    std::vector<std::pair<int, double>> per_T_values;
    double extrapolated = 0.0;
    HomStatus status = HomStatus::plateau_not_reached;
};

namespace detail {

/// Folded midpoints ⟨z_j⟩ of the subcells of (0,T)^N.
inline std::vector<double> subcell_points(const CellProblem& prob) {
    const std::size_t L = prob.subcells_per_axis();
    const auto N = static_cast<std::size_t>(prob.dim_macro);
    const std::size_t M = prob.subcells();
    std::vector<double> y(M * N);
    for (std::size_t j = 0; j < M; ++j) {
        std::size_t rest = j;
        for (std::size_t a = 0; a < N; ++a) {
            const std::size_t i = rest % L;
            rest /= L;
            y[j * N + a] = fractional_fold((static_cast<double>(i) + 0.5) / prob.m);
        }
    }
    return y;
}

class CellObjective {
public:
    CellObjective(const CellProblem& prob)
        : prob_(prob), y_(subcell_points(prob)), M_(prob.subcells()),
          N_(static_cast<std::size_t>(prob.dim_macro)),
          d_(static_cast<std::size_t>(prob.dim_state())), terms_(M_), state_(d_) {}

    double operator()(std::span<const double> v) {
        for (std::size_t j = 0; j < M_; ++j) terms_[j] = local(j, v.subspan(j * d_, d_));
        return pairwise_sum(terms_) / static_cast<double>(M_);
    }

    /// Per-subcell derivative ∂_ξ f(y_j, ξ + v_j) by central differences. This is the
    /// L² gradient of the averaged objective.
    void gradient(std::span<const double> v, std::span<double> g) {
        for (std::size_t j = 0; j < M_; ++j) {
            for (std::size_t k = 0; k < d_; ++k) {
                for (std::size_t c = 0; c < d_; ++c) state_[c] = prob_.xi[c] + v[j * d_ + c];
                const double h = 1e-6 * (1.0 + std::abs(v[j * d_ + k]));
                state_[k] += h;
                const double fp = prob_.f(y(j), state_);
                state_[k] -= 2.0 * h;
                const double fm = prob_.f(y(j), state_);
                g[j * d_ + k] = (fp - fm) / (2.0 * h);
            }
        }
    }

    void project(std::span<double> v) const {
        std::vector<double> comp(M_);
        for (std::size_t k = 0; k < d_; ++k) {
            for (std::size_t j = 0; j < M_; ++j) comp[j] = v[j * d_ + k];
            project_box_mean(comp, prob_.window.lo - prob_.xi[k], prob_.window.hi - prob_.xi[k],
                             0.0);
            for (std::size_t j = 0; j < M_; ++j) v[j * d_ + k] = comp[j];
        }
    }

    std::size_t size() const { return M_ * d_; }

private:
    std::span<const double> y(std::size_t j) const {
        return std::span(y_).subspan(j * N_, N_);
    }
    double local(std::size_t j, std::span<const double> vj) {
        for (std::size_t c = 0; c < d_; ++c) state_[c] = prob_.xi[c] + vj[c];
        return prob_.f(y(j), state_);
    }

    const CellProblem& prob_;
    std::vector<double> y_;
    std::size_t M_, N_, d_;
    std::vector<double> terms_;
    std::vector<double> state_;
};

inline bool touches(const CellProblem& prob, std::span<const double> v) {
    const double tol = 1e-9 * prob.window.width();
    const std::size_t d = prob.xi.size();
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double s = prob.xi[i % d] + v[i];
        if (s - prob.window.lo < tol || prob.window.hi - s < tol) return true;
    }
    return false;
}

inline CellSolution solve_in_window(const CellProblem& prob, std::uint64_t seed,
                                    const CellSolverOptions& opt,
                                    const std::vector<std::vector<double>>& warm) {
    const std::size_t n = prob.subcells() * prob.xi.size();
    // start 0 is v = 0, then warm starts, then seeded random starts
    const std::size_t total = 1 + warm.size() + static_cast<std::size_t>(std::max(0, opt.starts));
    std::vector<DescentOutcome> outcomes(total);
    parallel_for(total, [&](std::size_t s) {
        std::vector<double> v0(n, 0.0);
        if (s >= 1 && s < 1 + warm.size()) {
            v0 = warm[s - 1];
        } else if (s >= 1 + warm.size()) {
            std::mt19937_64 rng(seed + (s - 1 - warm.size()));
            const double spread =
                std::min(opt.init_spread, 0.5 * prob.window.width());
            std::uniform_real_distribution<double> dist(-spread, spread);
            for (auto& x : v0) x = dist(rng);
        }
        CellObjective obj(prob);
        outcomes[s] = projected_gradient_descent(
            std::move(v0), [&](std::span<const double> v) { return obj(v); },
            [&](std::span<const double> v, std::span<double> g) { obj.gradient(v, g); },
            [&](std::span<double> v) { obj.project(v); }, opt.descent);
    });
    std::size_t best = 0;
    for (std::size_t s = 1; s < total; ++s)
        if (outcomes[s].value < outcomes[best].value) best = s;
    CellSolution sol;
    sol.value = outcomes[best].value;
    sol.v = std::move(outcomes[best].x);
    sol.window = prob.window;
    sol.touches_window = touches(prob, sol.v);
    return sol;
}

}  // namespace detail

/// Full solver: multi-start projected descent with automatic window doubling when
/// the minimizer reaches the window boundary or the objective stops being finite.
/// Integrands with their own window are never widened.
inline CellSolution solve_cell_problem(CellProblem prob, std::uint64_t seed,
                                       const CellSolverOptions& opt = {},
                                       const std::vector<std::vector<double>>& warm = {}) {
    if (prob.T < 1 || prob.m < 1) throw InvalidArgument("cell problem needs T >= 1 and m >= 1");
    if (prob.xi.empty()) throw InvalidArgument("cell problem needs a state vector");
    const bool fixed_window = prob.f.window.has_value();
    if (fixed_window) prob.window = *prob.f.window;
    for (double c : prob.xi) {
        if (!std::isfinite(c)) throw InvalidArgument("cell problem state is not finite");
        while (!prob.window.contains(c)) {
            if (fixed_window)
                throw InvalidArgument("state lies outside the window of " + prob.f.label);
            prob.window = prob.window.doubled();
        }
    }
    for (int attempt = 0;; ++attempt) {
        const bool last = fixed_window || attempt >= opt.max_doublings;
        try {
            auto sol = detail::solve_in_window(prob, seed, opt, warm);
            if (!sol.touches_window || last) return sol;
        } catch (const EvaluationFailure& e) {
            if (last)
                throw EvaluationFailure("cell problem for " + prob.f.label +
                                        " stayed non-finite after window doubling");
        }
        prob.window = prob.window.doubled();
    }
}

inline double cell_infimum(const CellProblem& prob, std::uint64_t seed,
                           const CellSolverOptions& opt = {}) {
    return solve_cell_problem(prob, seed, opt).value;
}

struct OracleResult {
    double value = 0.0;
    std::vector<double> assignment;
};

/// Exhaustive minimum over assignments of value_grid entries to the subcells with
/// exactly zero mean. Limited to 8 subcells, 9 values and d = 1.
inline OracleResult brute_force_cell_oracle(const CellProblem& prob,
                                            std::span<const double> value_grid) {
    const std::size_t M = prob.subcells();
    const std::size_t G = value_grid.size();
    if (M > 8 || G > 9)
        throw CapacityExceeded("brute-force oracle handles at most 8 subcells and 9 values (got " +
                               std::to_string(M) + " subcells, " + std::to_string(G) + " values)");
    if (prob.xi.size() != 1) throw UnsupportedDimension("brute-force oracle requires d = 1");
    if (G == 0) throw InvalidArgument("brute-force oracle needs a non-empty value grid");

    const auto y = detail::subcell_points(prob);
    const auto N = static_cast<std::size_t>(prob.dim_macro);
    std::vector<double> table(M * G);
    double gmax = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < G; ++i) {
        gmax = std::max(gmax, std::abs(value_grid[i]));
        gsum += std::abs(value_grid[i]);
    }
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t i = 0; i < G; ++i) {
            const double s = prob.xi[0] + value_grid[i];
            table[j * G + i] = prob.f(std::span(y).subspan(j * N, N), std::span(&s, 1));
        }
    const double tol = 1e-12 * (1.0 + gsum * static_cast<double>(M));

    OracleResult best;
    best.value = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> pick(M);
    std::function<void(std::size_t, double, double)> dfs = [&](std::size_t j, double sum,
                                                              double acc) {
        if (std::abs(sum) > static_cast<double>(M - j) * gmax + tol) return;
        if (j == M) {
            const double v = acc / static_cast<double>(M);
            if (v < best.value) {
                best.value = v;
                best.assignment.resize(M);
                for (std::size_t k = 0; k < M; ++k) best.assignment[k] = value_grid[pick[k]];
            }
            return;
        }
        for (std::size_t i = 0; i < G; ++i) {
            pick[j] = i;
            dfs(j + 1, sum + value_grid[i], acc + table[j * G + i]);
        }
    };
    dfs(0, 0.0, 0.0);
    if (!std::isfinite(best.value))
        throw InvalidArgument("value grid admits no zero-mean assignment");
    return best;
}

namespace detail {

/// Periodic extension of a competitor from L to L' = kL subcells per axis.
inline std::vector<double> periodic_extension(std::span<const double> v, std::size_t L,
                                              std::size_t L2, int N, std::size_t d) {
    const std::size_t M2 = ipow(L2, N);
    std::vector<double> out(M2 * d);
    for (std::size_t j = 0; j < M2; ++j) {
        std::size_t rest = j, src = 0, stride = 1;
        for (int a = 0; a < N; ++a) {
            src += ((rest % L2) % L) * stride;
            rest /= L2;
            stride *= L;
        }
        for (std::size_t k = 0; k < d; ++k) out[j * d + k] = v[src * d + k];
    }
    return out;
}

}  // namespace detail

/// Runs the cell problem along an increasing T schedule. Each T is warm-started with
/// the periodic extension of the previous optimum when T divides it, so the values
/// are nonincreasing. The estimate is the last value.
inline HomDensityEstimate f_hom_estimate(const IntegrandF& f, std::vector<double> xi,
                                         const std::vector<int>& T_schedule, int m,
                                         std::uint64_t seed, const CellSolverOptions& opt = {},
                                         double rel_tol = 1e-2, int dim_macro = 1,
                                         StateWindow window = {}) {
    if (T_schedule.empty()) throw InvalidArgument("f_hom_estimate: empty T schedule");
    for (std::size_t i = 0; i < T_schedule.size(); ++i) {
        if (T_schedule[i] < 1) throw InvalidArgument("f_hom_estimate: T must be >= 1");
        if (i > 0 && T_schedule[i] <= T_schedule[i - 1])
            throw InvalidArgument("f_hom_estimate: T schedule must be increasing");
    }
    HomDensityEstimate est;
    est.xi = xi;
    std::vector<double> prev_v;
    int prev_T = 0;
    for (int T : T_schedule) {
        CellProblem prob{f, xi, T, m, dim_macro, window};
        std::vector<std::vector<double>> warm;
        if (prev_T > 0 && T % prev_T == 0)
            warm.push_back(detail::periodic_extension(prev_v, static_cast<std::size_t>(prev_T) * m,
                                                      prob.subcells_per_axis(), dim_macro,
                                                      xi.size()));
        auto sol = solve_cell_problem(prob, seed, opt, warm);
        window = sol.window;
        est.per_T_values.emplace_back(T, sol.value);
        prev_v = std::move(sol.v);
        prev_T = T;
    }
    est.extrapolated = est.per_T_values.back().second;
    if (est.per_T_values.size() >= 2) {
        const double a = est.per_T_values[est.per_T_values.size() - 2].second;
        const double b = est.extrapolated;
        est.status = std::abs(a - b) < rel_tol * (1.0 + std::abs(b)) ? HomStatus::converged
                                                                     : HomStatus::plateau_not_reached;
    }
    return est;
}

/// (co f)_hom(ξ) from the single-cell formula, with co f tabulated per unit cell on
/// the state window. Tables are cached per window, so repeated queries are cheap.
class CofHomSolver {
public:
    CofHomSolver(IntegrandF f, int m, int dim_macro = 1, StateWindow window = {},
                 std::uint64_t seed = 1, CellSolverOptions opt = {},
                 double envelope_step = 0.01)
        : f_(std::move(f)), m_(m), N_(dim_macro), window_(f_.window.value_or(window)),
          seed_(seed), opt_(opt), step_(envelope_step) {
        if (m < 1) throw InvalidArgument("cof_hom_single_cell: m must be >= 1");
    }

    double operator()(std::span<const double> xi) { return solve(xi).value; }
    double operator()(double xi) { return solve(std::span(&xi, 1)).value; }

    CellSolution solve(std::span<const double> xi) {
        if (xi.size() != 1)
            throw UnsupportedDimension("the convexified cell formula requires d = 1");
        StateWindow w = window_;
        while (!w.contains(xi[0])) {
            if (f_.window) throw InvalidArgument("state lies outside the window of " + f_.label);
            w = w.doubled();
        }
        for (int attempt = 0;; ++attempt) {
            CellProblem prob{envelope(w), {xi[0]}, 1, m_, N_, w};
            CellSolverOptions inner = opt_;
            inner.max_doublings = 0;
            auto sol = solve_cell_problem(prob, seed_, inner);
            if (!sol.touches_window || f_.window || attempt >= opt_.max_doublings) return sol;
            w = w.doubled();
        }
    }

    const IntegrandF& integrand() const { return f_; }

private:
    IntegrandF envelope(const StateWindow& w) {
        for (auto& [win, g] : cache_)
            if (win.lo == w.lo && win.hi == w.hi) return g;
        GridSpec cells;
        cells.dim_macro = N_;
        cells.omega_lo.assign(N_, 0.0);
        cells.omega_hi.assign(N_, 1.0);
        cells.n_y = m_;
        const auto points = static_cast<std::size_t>(std::llround(w.width() / step_)) + 1;
        auto table = std::make_shared<const EnvelopeTable>(
            build_envelope_table(f_, cells, uniform_grid(w.lo, w.hi, points)));
        auto g = envelope_integrand(std::move(table), f_);
        // the envelope is fixed to its table, so the cell problem must not widen it
        g.window = w;
        cache_.emplace_back(w, g);
        return g;
    }

    IntegrandF f_;
    int m_;
    int N_;
    StateWindow window_;
    std::uint64_t seed_;
    CellSolverOptions opt_;
    double step_;
    std::vector<std::pair<StateWindow, IntegrandF>> cache_;
};

inline double cof_hom_single_cell(const IntegrandF& f, std::span<const double> xi, int m,
                                  std::uint64_t seed, const CellSolverOptions& opt = {},
                                  int dim_macro = 1, StateWindow window = {}) {
    CofHomSolver solver(f, m, dim_macro, window, seed, opt);
    return solver(xi);
}

}  // namespace oscillab
