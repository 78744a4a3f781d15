#pragma once

// Built-in densities and test functions, addressable by name from configs.

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "oscillab/error.hpp"
#include "oscillab/integrands.hpp"

namespace oscillab::catalog {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// a(y) = 2 + sin 2πy₁, the periodic weight used throughout the catalog.
inline double weight(std::span<const double> y) { return 2.0 + std::sin(two_pi * y[0]); }

inline double norm2(std::span<const double> xi) {
    double s = 0.0;
    for (double v : xi) s += v * v;
    return s;
}

inline const std::vector<std::string>& local_names() {
    static const std::vector<std::string> names{"quadratic", "weighted_quadratic", "double_well",
                                                "tilted_weighted", "tilted_weighted_2",
                                                "concave_window"};
    return names;
}

inline IntegrandF tilted(double tilt, std::string label) {
    IntegrandF f;
    f.label = std::move(label);
    f.p = 2.0;
    f.growth_c = 3.0 + 0.5 * std::abs(tilt);
    f.eval = [tilt](std::span<const double> y, std::span<const double> xi) {
        return weight(y) * norm2(xi) - tilt * xi[0];
    };
    return f;
}

inline IntegrandF local(const std::string& name) {
    IntegrandF f;
    f.label = name;
    if (name == "quadratic") {
        f.growth_c = 1.0;
        f.eval = [](std::span<const double>, std::span<const double> xi) { return norm2(xi); };
    } else if (name == "weighted_quadratic") {
        f.growth_c = 3.0;
        f.eval = [](std::span<const double> y, std::span<const double> xi) {
            return weight(y) * norm2(xi);
        };
    } else if (name == "double_well") {
        f.growth_c = 1.0;
        f.p = 4.0;
        f.eval = [](std::span<const double>, std::span<const double> xi) {
            const double s = norm2(xi) - 1.0;
            return s * s;
        };
    } else if (name == "tilted_weighted") {
        return tilted(1.0, name);
    } else if (name == "tilted_weighted_2") {
        return tilted(2.0, name);
    } else if (name == "concave_window") {
        // 4 − |ξ|², only meaningful on [−2, 2]; its envelope there is the zero chord
        f.growth_c = 4.0;
        f.window = StateWindow{-2.0, 2.0};
        f.eval = [](std::span<const double>, std::span<const double> xi) {
            return 4.0 - norm2(xi);
        };
    } else {
        std::string known;
        for (const auto& n : local_names()) known += (known.empty() ? "" : ", ") + n;
        throw InvalidArgument("unknown integrand '" + name + "' (catalog: " + known + ")");
    }
    return f;
}

/// W = g(y, ξ) + g(y', ξ') built from a local density.
inline NonlocalW separable_from(const IntegrandF& g) {
    NonlocalW W;
    W.label = g.label;
    W.p = g.p;
    auto local_eval = g.eval;
    W.eval = [local_eval](const NonlocalArgs& a) {
        return local_eval(a.y, a.xi) + local_eval(a.yp, a.xip);
    };
    W.separable = [local_eval](std::span<const double>, std::span<const double> y,
                               std::span<const double> xi) { return local_eval(y, xi); };
    return W;
}

inline const std::vector<std::string>& nonlocal_names() {
    static const std::vector<std::string> names{"quadratic", "weighted_quadratic", "double_well",
                                                "tilted_weighted", "coupled_quadratic"};
    return names;
}

inline NonlocalW nonlocal(const std::string& name) {
    if (name == "quadratic") {
        auto W = separable_from(local(name));
        W.c = 1.0;
        return W;
    }
    if (name == "weighted_quadratic") {
        auto W = separable_from(local(name));
        W.c = 3.0;
        return W;
    }
    if (name == "double_well") {
        auto W = separable_from(local(name));
        W.p = 4.0, W.c = 2.0, W.alpha_bound = -1.0, W.a_bound = 2.0;
        return W;
    }
    if (name == "tilted_weighted") {
        auto W = separable_from(local(name));
        W.p = 2.0, W.c = 4.0, W.alpha_bound = -1.0, W.a_bound = 1.0;
        return W;
    }
    if (name == "coupled_quadratic") {
        NonlocalW W;
        W.label = name;
        W.c = 2.0;
        W.eval = [](const NonlocalArgs& a) {
            double dot = 0.0;
            for (std::size_t k = 0; k < a.xi.size(); ++k) dot += a.xi[k] * a.xip[k];
            return norm2(a.xi) + norm2(a.xip) + 0.5 * dot;
        };
        return W;
    }
    std::string known;
    for (const auto& n : nonlocal_names()) known += (known.empty() ? "" : ", ") + n;
    throw InvalidArgument("unknown non-local density '" + name + "' (catalog: " + known + ")");
}

/// f(y, ξ) = Σ_k c_k ξ^k on y₁ ∈ [y_lo, y_hi); pieces must cover [0, 1).
struct PolynomialPiece {
    double y_lo = 0.0;
    double y_hi = 1.0;
    std::vector<double> coeffs;  // ascending powers of ξ
};

struct PiecewisePolynomial {
    std::vector<PolynomialPiece> pieces;

    void validate() const {
        if (pieces.empty()) throw InvalidArgument("piecewise polynomial has no pieces");
        double covered = 0.0;
        for (const auto& pc : pieces) {
            if (std::abs(pc.y_lo - covered) > 1e-12)
                throw InvalidArgument("piecewise polynomial pieces must tile [0,1) in order");
            if (!(pc.y_hi > pc.y_lo)) throw InvalidArgument("empty polynomial piece");
            if (pc.coeffs.empty()) throw InvalidArgument("polynomial piece without coefficients");
            covered = pc.y_hi;
        }
        if (std::abs(covered - 1.0) > 1e-12)
            throw InvalidArgument("piecewise polynomial pieces must end at y = 1");
    }

    double operator()(double y, double xi) const {
        const PolynomialPiece* piece = &pieces.back();
        for (const auto& pc : pieces)
            if (y < pc.y_hi) {
                piece = &pc;
                break;
            }
        double v = 0.0;
        for (auto it = piece->coeffs.rbegin(); it != piece->coeffs.rend(); ++it) v = v * xi + *it;
        return v;
    }
};

inline IntegrandF from_polynomial(PiecewisePolynomial poly, double p, double growth_c,
                                  std::string label) {
    poly.validate();
    IntegrandF f;
    f.label = std::move(label);
    f.p = p;
    f.growth_c = growth_c;
    f.eval = [poly = std::move(poly)](std::span<const double> y, std::span<const double> xi) {
        return poly(y[0], xi[0]);
    };
    return f;
}

// Test functions for pairing batteries.

using CellStateFunction =
    std::function<double(std::span<const double> y, std::span<const double> xi)>;

inline MacroFunction macro_test(const std::string& name) {
    if (name == "one") return [](std::span<const double>) { return 1.0; };
    if (name == "x") return [](std::span<const double> x) { return x[0]; };
    if (name == "x2") return [](std::span<const double> x) { return x[0] * x[0]; };
    if (name == "exp") return [](std::span<const double> x) { return std::exp(x[0]); };
    if (name == "sin") return [](std::span<const double> x) { return std::sin(two_pi * x[0]); };
    if (name == "cos_pi")
        return [](std::span<const double> x) { return std::cos(std::numbers::pi * x[0]); };
    throw InvalidArgument("unknown macro test function '" + name +
                          "' (catalog: one, x, x2, exp, sin, cos_pi)");
}

inline CellStateFunction cell_state_test(const std::string& name) {
    if (name == "one") return [](std::span<const double>, std::span<const double>) { return 1.0; };
    if (name == "xi") return [](std::span<const double>, std::span<const double> xi) { return xi[0]; };
    if (name == "xi2")
        return [](std::span<const double>, std::span<const double> xi) { return xi[0] * xi[0]; };
    if (name == "xi3")
        return [](std::span<const double>, std::span<const double> xi) {
            return xi[0] * xi[0] * xi[0];
        };
    if (name == "cos_y_xi")
        return [](std::span<const double> y, std::span<const double> xi) {
            return std::cos(two_pi * y[0]) * xi[0];
        };
    if (name == "sin_y_xi")
        return [](std::span<const double> y, std::span<const double> xi) {
            return std::sin(two_pi * y[0]) * xi[0];
        };
    if (name == "bounded")
        return [](std::span<const double>, std::span<const double> xi) {
            return 1.0 / (1.0 + xi[0] * xi[0]);
        };
    throw InvalidArgument("unknown cell/state test function '" + name +
                          "' (catalog: one, xi, xi2, xi3, cos_y_xi, sin_y_xi, bounded)");
}

using PeriodicSampler = std::function<void(std::span<const double> t, std::span<double> out)>;

/// Periodic profiles φ: R^N → R^d (all components equal). Returns the period T as well.
inline std::pair<PeriodicSampler, int> periodic_profile(const std::string& name) {
    if (name == "zero")
        return {[](std::span<const double>, std::span<double> out) {
                    for (auto& o : out) o = 0.0;
                },
                1};
    if (name == "sin")
        return {[](std::span<const double> t, std::span<double> out) {
                    for (auto& o : out) o = std::sin(two_pi * t[0]);
                },
                1};
    if (name == "cos")
        return {[](std::span<const double> t, std::span<double> out) {
                    for (auto& o : out) o = std::cos(two_pi * t[0]);
                },
                1};
    if (name == "square2")
        // +1 on [0,1), −1 on [1,2), period 2
        return {[](std::span<const double> t, std::span<double> out) {
                    const double r = t[0] - 2.0 * std::floor(t[0] / 2.0);
                    for (auto& o : out) o = r < 1.0 ? 1.0 : -1.0;
                },
                2};
    throw InvalidArgument("unknown periodic profile '" + name +
                          "' (catalog: zero, sin, cos, square2)");
}

}  // namespace oscillab::catalog
