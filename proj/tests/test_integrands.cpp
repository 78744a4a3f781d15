#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/integrands.hpp"

using namespace oscillab;
using Catch::Approx;

namespace {

NonlocalW make_w(std::function<double(const NonlocalArgs&)> eval, double p = 2.0, double c = 1.0,
                 double alpha = 0.0, double a = 0.0) {
    NonlocalW W;
    W.eval = std::move(eval);
    W.p = p, W.c = c, W.alpha_bound = alpha, W.a_bound = a;
    return W;
}

double sq(double v) { return v * v; }

/// Brute-force lower convex hull on a discrete set: co f(ξ_k) is the smallest
/// chord value over pairs i ≤ k ≤ j.
std::vector<double> chord_oracle(const std::vector<double>& x, const std::vector<double>& f) {
    const std::size_t n = x.size();
    std::vector<double> out(f);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t k = i; k <= j; ++k) {
                const double t = (x[k] - x[i]) / (x[j] - x[i]);
                out[k] = std::min(out[k], (1 - t) * f[i] + t * f[j]);
            }
    return out;
}

}  // namespace

TEST_CASE("audit_symmetry", "[integrands][audit]") {
    const auto sym = make_w([](const NonlocalArgs& a) { return sq(a.xi[0]) + sq(a.xip[0]); });
    CHECK(audit_symmetry(sym, 500, 3).max_violation == 0.0);

    const auto anti = make_w([](const NonlocalArgs& a) { return a.xi[0] - a.xip[0]; });
    const auto rep = audit_symmetry(anti, 500, 3);
    CHECK(rep.max_violation > 1.0);

    // swap-invariant by construction
    const double kappa = 0.7;
    const auto coupled = make_w([kappa](const NonlocalArgs& a) {
        return catalog::weight(a.y) * sq(a.xi[0]) + catalog::weight(a.yp) * sq(a.xip[0]) +
               kappa * a.xi[0] * a.xip[0];
    });
    CHECK(audit_symmetry(coupled, 500, 3).max_violation <= 1e-12);

    SECTION("reports are deterministic given the seed") {
        CHECK(audit_symmetry(anti, 100, 9).max_violation == audit_symmetry(anti, 100, 9).max_violation);
    }
    SECTION("n_samples must be positive") { CHECK_THROWS_AS(audit_symmetry(sym, 0, 1), InvalidArgument); }
}

TEST_CASE("audit_growth", "[integrands][audit]") {
    const auto quad = make_w([](const NonlocalArgs& a) { return sq(a.xi[0]) + sq(a.xip[0]); });
    auto rep = audit_growth(quad, 2000, 5);
    CHECK(rep.lower_ok);
    CHECK(rep.upper_ok);

    const auto quartic = make_w([](const NonlocalArgs& a) { return std::pow(a.xi[0], 4); });
    rep = audit_growth(quartic, 2000, 5);
    CHECK_FALSE(rep.upper_ok);
    REQUIRE(rep.upper_witness.has_value());
    CHECK(rep.upper_witness->value > rep.upper_witness->bound);
    // the witness is a genuine counterexample
    const auto& w = *rep.upper_witness;
    CHECK(std::pow(w.xi[0], 4) > 1.0 * (sq(w.xi[0]) + sq(w.xip[0])));

    SECTION("tilted weighted quadratic with α = −1, a = 1, c = 4") {
        const auto tilted = catalog::nonlocal("tilted_weighted");
        const auto r = audit_growth(tilted, 5000, 17);
        CHECK(r.lower_ok);
        CHECK(r.upper_ok);

        // grid oracle: min of W − lower bound and of upper bound − W over y, ξ, ξ'
        double lower_slack = INFINITY, upper_slack = INFINITY;
        for (int iy = 0; iy < 16; ++iy)
            for (int iyp = 0; iyp < 16; ++iyp)
                for (int i = 0; i <= 80; ++i)
                    for (int j = 0; j <= 80; ++j) {
                        const double y = (iy + 0.5) / 16, yp = (iyp + 0.5) / 16;
                        const double xi = -4 + 0.1 * i, xip = -4 + 0.1 * j;
                        const double a = 2 + std::sin(2 * M_PI * y), ap = 2 + std::sin(2 * M_PI * yp);
                        const double W = a * xi * xi - xi + ap * xip * xip - xip;
                        lower_slack = std::min(lower_slack, W - (-1.0 + xi * xi / 4.0));
                        upper_slack = std::min(upper_slack, 1.0 + 4.0 * (xi * xi + xip * xip) - W);
                    }
        CHECK(lower_slack >= 0.0);
        CHECK(upper_slack >= 0.0);
    }
}

TEST_CASE("catalog densities satisfy their declared bounds", "[integrands][catalog]") {
    for (const auto& name : catalog::nonlocal_names()) {
        const auto W = catalog::nonlocal(name);
        INFO(name);
        const auto g = audit_growth(W, 3000, 23);
        CHECK(g.lower_ok);
        CHECK(g.upper_ok);
        CHECK(audit_symmetry(W, 1000, 23).max_violation <= 1e-12);
    }
    GridSpec spec;
    for (const auto& name : catalog::local_names()) {
        INFO(name);
        const auto f = catalog::local(name);
        CHECK(audit_local_growth(f, spec, 3000, 29) <= 1.0);
    }
    CHECK_THROWS_WITH(catalog::local("nope"), Catch::Matchers::ContainsSubstring("double_well"));
}

TEST_CASE("convex_envelope_1d", "[integrands][envelope]") {
    const std::vector<double> y{0.5};

    SECTION("convex input is returned unchanged") {
        const auto grid = uniform_grid(-2.0, 2.0, 401);
        const auto f = catalog::local("quadratic");
        const auto env = convex_envelope_1d(f, y, grid);
        for (std::size_t i = 0; i < grid.size(); ++i) REQUIRE(env[i] == Approx(grid[i] * grid[i]).margin(1e-14));
    }

    SECTION("double well matches the chord-pair oracle") {
        const auto grid = uniform_grid(-2.0, 2.0, 81);
        const auto f = catalog::local("double_well");
        const auto env = convex_envelope_1d(f, y, grid);
        std::vector<double> fv(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) fv[i] = f(y, std::span(&grid[i], 1));
        const auto oracle = chord_oracle(grid, fv);
        for (std::size_t i = 0; i < grid.size(); ++i) REQUIRE(env[i] == Approx(oracle[i]).margin(1e-12));
        // co f(0) = 0, co f(2) = 9
        CHECK(env[40] == Approx(0.0).margin(1e-12));
        CHECK(env[80] == Approx(9.0));
    }

    SECTION("distance to {−1, 1}: zero in between, |ξ| − 1 outside") {
        const auto grid = uniform_grid(-2.0, 2.0, 81);
        std::vector<double> fv(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i)
            fv[i] = std::min(std::abs(grid[i] + 1), std::abs(grid[i] - 1));
        const auto env = convex_envelope_1d(grid, fv);
        const auto oracle = chord_oracle(grid, fv);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            REQUIRE(env[i] == Approx(oracle[i]).margin(1e-12));
            const double expect = std::abs(grid[i]) <= 1 ? 0.0 : std::abs(grid[i]) - 1;
            REQUIRE(env[i] == Approx(expect).margin(1e-12));
        }
    }

    SECTION("errors") {
        const std::vector<double> unsorted{0.0, 1.0, 0.5};
        const std::vector<double> vals{0.0, 0.0, 0.0};
        CHECK_THROWS_AS(convex_envelope_1d(unsorted, vals), InvalidArgument);
        const std::vector<double> single{0.0};
        CHECK_THROWS_AS(convex_envelope_1d(single, std::span(vals).first(1)), InvalidArgument);
        CHECK_THROWS_AS(convex_envelope_1d(catalog::local("quadratic"), y, uniform_grid(-1, 1, 5), 2),
                        UnsupportedDimension);
    }
}

TEST_CASE("convex envelope properties on random data", "[integrands][envelope][property]") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> val(-5.0, 5.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> grid(2 + trial % 40);
        double x = val(rng);
        for (auto& g : grid) {
            g = x;
            x += 0.05 + std::abs(val(rng)) * 0.1;
        }
        std::vector<double> fv(grid.size());
        for (auto& v : fv) v = val(rng);
        const auto env = convex_envelope_1d(grid, fv);
        double scale = 0;
        for (double v : fv) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < grid.size(); ++i) REQUIRE(env[i] <= fv[i] + 1e-12);
        for (std::size_t i = 1; i + 1 < grid.size(); ++i) {
            const double sl = (env[i] - env[i - 1]) / (grid[i] - grid[i - 1]);
            const double sr = (env[i + 1] - env[i]) / (grid[i + 1] - grid[i]);
            REQUIRE(sr - sl >= -1e-9 * scale);
        }
        // adding an affine function commutes with the envelope
        const double a = val(rng), b = val(rng);
        std::vector<double> shifted(fv);
        for (std::size_t i = 0; i < grid.size(); ++i) shifted[i] += a * grid[i] + b;
        const auto env2 = convex_envelope_1d(grid, shifted);
        for (std::size_t i = 0; i < grid.size(); ++i)
            REQUIRE(env2[i] == Approx(env[i] + a * grid[i] + b).margin(1e-9 * (1 + scale)));
    }
}

TEST_CASE("envelope tables", "[integrands][envelope]") {
    GridSpec cells;
    cells.n_y = 8;
    const auto table = build_envelope_table(catalog::local("weighted_quadratic"), cells, uniform_grid(-4, 4, 801));
    CHECK(table.convexity_defect() <= 1e-9);
    // convex input: table equals f on the grid and interpolates linearly in between
    const double y = (2 + 0.5) / 8.0;
    const double a = 2 + std::sin(2 * M_PI * y);
    CHECK(table.eval(2, 1.0) == Approx(a).epsilon(1e-12));
    CHECK(table.eval(2, 1.005) == Approx(a * 0.5 * (1.0 + 1.01 * 1.01)).epsilon(1e-12));

    const auto dw = build_envelope_table(catalog::local("double_well"), cells, uniform_grid(-4, 4, 801));
    CHECK(dw.convexity_defect() <= 1e-9);
    CHECK(dw.eval(0, 0.3) == Approx(0.0).margin(1e-12));
}

TEST_CASE("piecewise polynomial integrands", "[integrands][catalog]") {
    catalog::PiecewisePolynomial poly{{{0.0, 0.5, {0.0, 0.0, 1.0}}, {0.5, 1.0, {1.0, -1.0, 3.0}}}};
    const auto f = catalog::from_polynomial(poly, 2.0, 4.0, "two_phase");
    const std::vector<double> ylo{0.25}, yhi{0.75}, xi{2.0};
    CHECK(f(ylo, xi) == 4.0);
    CHECK(f(yhi, xi) == 1.0 - 2.0 + 12.0);

    catalog::PiecewisePolynomial gap{{{0.0, 0.4, {1.0}}, {0.5, 1.0, {1.0}}}};
    CHECK_THROWS_AS(gap.validate(), InvalidArgument);
}
