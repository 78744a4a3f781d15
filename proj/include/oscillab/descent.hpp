#pragma once

// Projected gradient descent with Armijo backtracking, and the projections the
// minimizers need (box ∩ fixed mean, probability simplex).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "oscillab/error.hpp"

namespace oscillab {

struct DescentOptions {
    double initial_step = 0.5;
    double grad_tol = 1e-8;  // RMS of the unit-step gradient mapping
    int max_iter = 5000;
    double armijo = 1e-4;
    int max_backtracks = 50;
};

struct DescentOutcome {
    std::vector<double> x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

inline double rms(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
}

/// Minimizes f over the image of `project`. Each iteration backtracks from
/// initial_step until the projected step satisfies the Armijo condition.
template <class Objective, class Gradient, class Projection>
DescentOutcome projected_gradient_descent(std::vector<double> x, Objective&& f, Gradient&& grad,
                                          Projection&& project, const DescentOptions& opt = {}) {
    project(x);
    double fx = f(x);
    if (!std::isfinite(fx)) throw EvaluationFailure("non-finite objective at the starting point");

    DescentOutcome out;
    std::vector<double> g(x.size()), trial(x.size()), diff(x.size());
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        grad(x, g);
        for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] - g[i];
        project(trial);
        for (std::size_t i = 0; i < x.size(); ++i) diff[i] = trial[i] - x[i];
        if (rms(diff) < opt.grad_tol) {
            out.converged = true;
            break;
        }

        double step = opt.initial_step;
        bool accepted = false;
        for (int b = 0; b < opt.max_backtracks; ++b, step *= 0.5) {
            for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] - step * g[i];
            project(trial);
            double sq = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                diff[i] = trial[i] - x[i];
                sq += diff[i] * diff[i];
            }
            const double ft = f(trial);
            if (!std::isfinite(ft)) throw EvaluationFailure("non-finite objective during descent");
            if (ft <= fx - opt.armijo / step * sq) {
                x.swap(trial);
                fx = ft;
                accepted = true;
                break;
            }
        }
        // no decrease at any step size: stationary up to round-off
        if (!accepted) {
            out.converged = rms(diff) < 1e3 * opt.grad_tol;
            break;
        }
    }
    out.x = std::move(x);
    out.value = fx;
    out.iterations = it;
    return out;
}

/// Euclidean projection of w onto {v : lo ≤ v_i ≤ hi, mean(v) = target}. The
/// solution is clamp(w − λ) for the scalar λ matching the mean.
inline void project_box_mean(std::span<double> w, double lo, double hi, double target) {
    const std::size_t n = w.size();
    if (n == 0) return;
    if (target < lo || target > hi)
        throw InvalidArgument("project_box_mean: prescribed mean lies outside the box");
    const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(n);
    const double shift = mean - target;
    bool inside = true;
    for (double v : w)
        if (v - shift < lo || v - shift > hi) {
            inside = false;
            break;
        }
    if (inside) {
        for (auto& v : w) v -= shift;
        return;
    }
    auto clamped_mean = [&](double lam) {
        double s = 0.0;
        for (double v : w) s += std::clamp(v - lam, lo, hi);
        return s / static_cast<double>(n);
    };
    double a = *std::min_element(w.begin(), w.end()) - hi;
    double b = *std::max_element(w.begin(), w.end()) - lo;
    for (int i = 0; i < 200 && b - a > 1e-15 * (1.0 + std::abs(a) + std::abs(b)); ++i) {
        const double mid = 0.5 * (a + b);
        if (clamped_mean(mid) > target)
            a = mid;
        else
            b = mid;
    }
    const double lam = 0.5 * (a + b);
    std::size_t free_count = 0;
    double sum = 0.0;
    for (auto& v : w) {
        v = std::clamp(v - lam, lo, hi);
        sum += v;
        if (v > lo && v < hi) ++free_count;
    }
    // remove the bisection residual from the unclamped entries
    if (free_count > 0) {
        const double fix = (sum - target * static_cast<double>(n)) / static_cast<double>(free_count);
        for (auto& v : w)
            if (v > lo && v < hi) v = std::clamp(v - fix, lo, hi);
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
inline void project_simplex(std::span<double> w) {
    const std::size_t n = w.size();
    std::vector<double> s(w.begin(), w.end());
    std::sort(s.begin(), s.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        cum += s[k];
        const double t = (cum - 1.0) / static_cast<double>(k + 1);
        if (s[k] - t > 0.0) theta = t;
    }
    double total = 0.0;
    for (auto& v : w) {
        v = std::max(v - theta, 0.0);
        total += v;
    }
    // renormalize so Σ w = 1 holds to the last bit that matters
    for (auto& v : w) v /= total;
}

}  // namespace oscillab
