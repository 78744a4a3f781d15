#include <catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "oscillab/catalog.hpp"
#include "oscillab/nonlocal.hpp"

using namespace oscillab;
using Catch::Approx;

namespace {

const double inv_sqrt3 = 1.0 / std::sqrt(3.0);

GridSpec grid(int n_x, int n_y = 16) {
    GridSpec s;
    s.n_x = n_x;
    s.n_y = n_y;
    return s;
}

NonlocalW product_W() {
    NonlocalW W;
    W.label = "product";
    W.eval = [](const NonlocalArgs& a) { return a.xi[0] * a.xip[0]; };
    return W;
}

/// Weighted quadratic with a genuine coupling term, so the pairwise code paths run.
NonlocalW coupled_weighted() {
    NonlocalW W;
    W.label = "coupled_weighted";
    W.eval = [](const NonlocalArgs& a) {
        return catalog::weight(a.y) * a.xi[0] * a.xi[0] + catalog::weight(a.yp) * a.xip[0] * a.xip[0] +
               0.25 * a.xi[0] * a.xip[0] + 0.1 * (a.x[0] + a.xp[0]) * (a.xi[0] + a.xip[0]);
    };
    return W;
}

/// Quadrature oracle for −½∫_Q dy / a(y) on m midpoints.
double tilted_oracle(int m) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
        const double y = (j + 0.5) / m;
        s += 1.0 / (2.0 + std::sin(catalog::two_pi * y));
    }
    return -0.5 * s / m;
}

AtomicYoungMeasure random_measure(const GridSpec& s, std::size_t K, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> atom(-2.0, 2.0), weight(0.1, 1.0);
    AtomicYoungMeasure nu(s, K);
    for (std::size_t c = 0; c < nu.cells(); ++c) {
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            nu.atom(c, k)[0] = atom(rng);
            sum += nu.weight(c, k) = weight(rng);
        }
        for (std::size_t k = 0; k < K; ++k) nu.weight(c, k) /= sum;
    }
    return nu;
}

HomOptions quick_hom(int starts = 2) {
    HomOptions o;
    o.starts = starts;
    o.audit = false;
    return o;
}

}  // namespace

TEST_CASE("eval_I_eps on constant fields") {
    const auto s = grid(64);
    const double one = 1.0, c = -0.7;
    CHECK(eval_I_eps(catalog::nonlocal("quadratic"), GridField::constant(s, std::span(&one, 1)), 0.25) ==
          Approx(2.0).epsilon(1e-14));
    CHECK(eval_I_eps(product_W(), GridField::constant(s, std::span(&c, 1)), 0.25) ==
          Approx(c * c).epsilon(1e-14));

    NonlocalW weighted_one_sided;
    weighted_one_sided.eval = [](const NonlocalArgs& a) { return catalog::weight(a.y) * a.xi[0] * a.xi[0]; };
    const auto s256 = grid(256);
    CHECK(std::abs(eval_I_eps(weighted_one_sided, GridField::constant(s256, std::span(&one, 1)), 1.0 / 16) - 2.0) <
          1e-3);
}

TEST_CASE("eval_I_eps rejects non-finite values") {
    NonlocalW bad;
    bad.eval = [](const NonlocalArgs& a) { return a.xi[0] > 0.5 ? NAN : 0.0; };
    const double v = 1.0;
    CHECK_THROWS_AS(eval_I_eps(bad, GridField::constant(grid(8), std::span(&v, 1)), 0.5), EvaluationFailure);
}

TEST_CASE("minimize_I_eps on separable densities") {
    const auto s = grid(512);
    SECTION("tilted weighted quadratic") {
        const auto m = minimize_I_eps(catalog::nonlocal("tilted_weighted"), 1.0 / 64, s, 1);
        CHECK(std::abs(m.value + 0.5 * inv_sqrt3) <= 0.02 * 0.5 * inv_sqrt3);
        // pointwise oracle u(x) = 1/(2 a(x/ε))
        const auto xs = s.macro_midpoints();
        double worst = 0.0;
        for (std::size_t i = 0; i < m.u.cells(); ++i) {
            const double y = fractional_fold(xs[i] * 64.0);
            worst = std::max(worst, std::abs(m.u.values[i] - 1.0 / (2.0 * (2.0 + std::sin(catalog::two_pi * y)))));
        }
        CHECK(worst < 1e-6);
    }
    SECTION("quadratic") {
        const auto m = minimize_I_eps(catalog::nonlocal("quadratic"), 1.0 / 64, s, 1);
        CHECK(std::abs(m.value) < 1e-12);
        for (double v : m.u.values) CHECK(std::abs(v) < 1e-6);
    }
    SECTION("double well") {
        const auto m = minimize_I_eps(catalog::nonlocal("double_well"), 1.0 / 64, s, 1);
        CHECK(std::abs(m.value) < 1e-10);
        for (double v : m.u.values) CHECK(std::abs(std::abs(v) - 1.0) < 1e-5);
    }
}

TEST_CASE("minimize_I_eps descent path agrees with the pointwise path") {
    const auto s = grid(32);
    auto W = catalog::nonlocal("tilted_weighted");
    const auto pointwise = minimize_I_eps(W, 1.0 / 8, s, 1);
    auto general = W;
    general.separable.reset();
    EpsOptions o;
    o.starts = 2;
    const auto descended = minimize_I_eps(general, 1.0 / 8, s, 1, o);
    CHECK(descended.value == Approx(pointwise.value).epsilon(1e-8));
}

TEST_CASE("minimize_I_eps with pinned block means") {
    const auto s = grid(64);
    const auto coarse = grid(4);
    const double one = 1.0;
    EpsOptions o;
    o.starts = 2;
    o.fixed_deformation = GridField::constant(coarse, std::span(&one, 1));
    const auto m = minimize_I_eps(catalog::nonlocal("quadratic"), 1.0 / 16, s, 1, o);
    CHECK(m.value == Approx(2.0).epsilon(1e-8));
    o.fixed_deformation = GridField::constant(grid(5), std::span(&one, 1));
    CHECK_THROWS_AS(minimize_I_eps(catalog::nonlocal("quadratic"), 1.0 / 16, s, 1, o), InvalidArgument);
}

TEST_CASE("minimize_I_eps fails when the minimizer leaves every window") {
    NonlocalW runaway;
    runaway.eval = [](const NonlocalArgs& a) { return -a.xi[0] - a.xip[0]; };
    runaway.separable = [](auto, auto, std::span<const double> xi) { return -xi[0]; };
    CHECK_THROWS_AS(minimize_I_eps(runaway, 0.5, grid(4), 1), EvaluationFailure);
}

TEST_CASE("eval_I_hom_objective examples") {
    const auto s = grid(8, 8);
    AtomicYoungMeasure wells(s, 2);
    for (std::size_t c = 0; c < wells.cells(); ++c) {
        wells.atom(c, 0)[0] = -1.0, wells.atom(c, 1)[0] = 1.0;
        wells.weight(c, 0) = wells.weight(c, 1) = 0.5;
    }
    CHECK(std::abs(eval_I_hom_objective(catalog::nonlocal("double_well"), wells)) < 1e-15);
    CHECK(std::abs(eval_I_hom_objective(product_W(), wells)) < 1e-15);

    SECTION("Dirac lift equals the unfolded double sum") {
        const auto u1 = TwoScaleField::sample(s, [](auto x, auto y, auto out) {
            out[0] = x[0] + std::sin(catalog::two_pi * y[0]);
        });
        const auto W = coupled_weighted();
        const auto nu = dirac_lift(u1);
        const auto xs = s.macro_midpoints();
        const auto ys = s.unit_midpoints();
        double sum = 0.0;
        const double m = s.macro_cell_volume() * s.unit_cell_volume();
        for (std::size_t i = 0; i < s.macro_cells(); ++i)
            for (std::size_t j = 0; j < s.unit_cells(); ++j)
                for (std::size_t k = 0; k < s.macro_cells(); ++k)
                    for (std::size_t l = 0; l < s.unit_cells(); ++l) {
                        const double a = u1.at(i, j)[0], b = u1.at(k, l)[0];
                        sum += m * m *
                               W({std::span(&xs[i], 1), std::span(&xs[k], 1), std::span(&ys[j], 1),
                                  std::span(&ys[l], 1), std::span(&a, 1), std::span(&b, 1)});
                    }
        CHECK(eval_I_hom_objective(W, nu) == Approx(sum).epsilon(1e-12));
    }
}

TEST_CASE("eval_I_hom_objective symmetries") {
    const auto s = grid(4, 4);
    const auto W = coupled_weighted();
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto nu = random_measure(s, 3, seed);
        const double base = eval_I_hom_objective(W, nu);
        // relabel atoms by a cyclic shift in every cell
        AtomicYoungMeasure relabeled(s, 3);
        for (std::size_t c = 0; c < nu.cells(); ++c)
            for (std::size_t k = 0; k < 3; ++k) {
                relabeled.atom(c, k)[0] = nu.atom(c, (k + 1) % 3)[0];
                relabeled.weight(c, k) = nu.weight(c, (k + 1) % 3);
            }
        CHECK(std::abs(eval_I_hom_objective(W, relabeled) - base) <= 1e-12 * (1.0 + std::abs(base)));
        // (x,y) <-> (x',y') swap of the density
        NonlocalW swapped = W;
        swapped.eval = [W](const NonlocalArgs& a) { return W({a.xp, a.x, a.yp, a.y, a.xip, a.xi}); };
        CHECK(std::abs(eval_I_hom_objective(swapped, nu) - base) <= 1e-12 * (1.0 + std::abs(base)));
    }
}

TEST_CASE("minimize_I_hom examples") {
    const auto s = grid(4, 16);
    const double zero = 0.0, c = 0.6;
    SECTION("double well with zero deformation") {
        const auto m = minimize_I_hom(catalog::nonlocal("double_well"), GridField::constant(s, std::span(&zero, 1)),
                                      2, s, 1);
        CHECK(m.value <= 5e-2);
        for (std::size_t cell = 0; cell < m.nu.cells(); ++cell)
            for (std::size_t k = 0; k < 2; ++k) {
                CHECK(std::abs(std::abs(m.nu.atom(cell, k)[0]) - 1.0) < 0.05);
                CHECK(std::abs(m.nu.weight(cell, k) - 0.5) < 0.05);
            }
        REQUIRE(m.audit);
        CHECK(m.audit->verdict == Verdict::consistent);
    }
    SECTION("quadratic is Dirac optimal") {
        for (std::size_t K : {1u, 2u, 4u}) {
            const auto m = minimize_I_hom(catalog::nonlocal("quadratic"), GridField::constant(s, std::span(&c, 1)),
                                          K, s, 1, quick_hom());
            CHECK(m.value == Approx(2 * c * c).epsilon(1e-6));
        }
    }
    SECTION("tilted weighted quadratic with free deformation") {
        const auto m = minimize_I_hom(catalog::nonlocal("tilted_weighted"), std::nullopt, 1, s, 1);
        CHECK(m.value == Approx(tilted_oracle(16)).epsilon(1e-8));
        const auto ys = s.unit_midpoints();
        for (std::size_t j = 0; j < s.unit_cells(); ++j)
            CHECK(m.nu.atom(m.nu.cell(0, j), 0)[0] ==
                  Approx(1.0 / (2.0 * (2.0 + std::sin(catalog::two_pi * ys[j])))).margin(1e-6));
        REQUIRE(m.audit);
        CHECK(m.audit->verdict == Verdict::consistent);
    }
    SECTION("deformation outside the window") {
        const double far = 100.0;
        CHECK_THROWS_AS(minimize_I_hom(catalog::nonlocal("quadratic"), GridField::constant(s, std::span(&far, 1)), 1,
                                       s, 1),
                        InvalidArgument);
    }
}

TEST_CASE("minimize_I_hom keeps the barycenter on the deformation") {
    const auto s = grid(4, 8);
    const auto u = GridField(s, {-0.5, 0.25, 0.0, 1.0});
    const auto m = minimize_I_hom(catalog::nonlocal("double_well"), u, 3, s, 2, quick_hom());
    const auto bar = underlying_deformation(m.nu);
    for (std::size_t i = 0; i < u.cells(); ++i) CHECK(std::abs(bar.values[i] - u.values[i]) < 1e-9);
}

TEST_CASE("Jensen: convex W gains nothing from extra atoms") {
    const auto s = grid(4, 8);
    const auto W = coupled_weighted();
    const auto u = GridField(s, {-0.5, 0.25, 0.0, 1.0});
    const auto k1 = minimize_I_hom(W, u, 1, s, 1, quick_hom());
    const auto k3 = minimize_I_hom(W, u, 3, s, 1, quick_hom());
    CHECK(k3.value == Approx(k1.value).epsilon(1e-6));
}

TEST_CASE("best value is nonincreasing in K") {
    const auto s = grid(2, 8);
    const auto W = catalog::nonlocal("double_well");
    const double half = 0.3;
    const auto u = GridField::constant(s, std::span(&half, 1));
    std::optional<AtomicYoungMeasure> previous;
    double last = INFINITY;
    for (std::size_t K : {1u, 2u, 4u}) {
        auto o = quick_hom();
        o.warm = previous;
        const auto m = minimize_I_hom(W, u, K, s, 3, o);
        CHECK(m.value <= last + 1e-8);
        last = m.value;
        previous = m.nu;
    }
    CHECK(last < 1e-6);
}

TEST_CASE("relaxation inequality along oscillating sequences") {
    // u_n = ±1 on alternating ε-cells converges weakly to 0; the relaxed energy at 0 never exceeds it
    const auto s = grid(256);
    const auto W = catalog::nonlocal("double_well");
    const double zero = 0.0;
    const auto hom = minimize_I_hom(W, GridField::constant(grid(4, 8), std::span(&zero, 1)), 2, grid(4, 8), 1,
                                    quick_hom());
    double tail_min = INFINITY;
    for (double e : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
        GridField un(s);
        const auto xs = s.macro_midpoints();
        for (std::size_t i = 0; i < un.cells(); ++i) un.values[i] = fractional_fold(xs[i] / e) < 0.5 ? -1.0 : 1.0;
        const std::vector<MacroFunction> battery{catalog::macro_test("one"), catalog::macro_test("x"),
                                                 catalog::macro_test("exp")};
        CHECK(weak_lp_norm_gap(un, GridField::constant(s, std::span(&zero, 1)), battery) < 4 * e);
        tail_min = std::min(tail_min, eval_I_eps(W, un, e));
    }
    CHECK(hom.value <= tail_min + 1e-9);

    const auto quad = catalog::nonlocal("weighted_quadratic");
    const double c = 0.5;
    const auto qhom = minimize_I_hom(quad, GridField::constant(grid(4, 16), std::span(&c, 1)), 1, grid(4, 16), 1,
                                     quick_hom());
    tail_min = INFINITY;
    for (double e : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
        GridField un(s);
        const auto xs = s.macro_midpoints();
        for (std::size_t i = 0; i < un.cells(); ++i) un.values[i] = c + 0.3 * std::sin(catalog::two_pi * xs[i] / e);
        tail_min = std::min(tail_min, eval_I_eps(quad, un, e));
    }
    CHECK(qhom.value <= tail_min + 1e-9);
}

TEST_CASE("reduce_y_independent") {
    const auto s = grid(4, 8);
    const auto flagged = reduce_y_independent(catalog::nonlocal("quadratic"));
    CHECK(flagged.y_independent);
    CHECK_THROWS_AS(reduce_y_independent(catalog::nonlocal("weighted_quadratic")), Refused);

    SECTION("collapse leaves I_hom unchanged") {
        auto plain = coupled_weighted();
        plain.eval = [](const NonlocalArgs& a) {
            return a.xi[0] * a.xi[0] + a.xip[0] * a.xip[0] + 0.3 * a.xi[0] * a.xip[0] * a.x[0];
        };
        const auto reduced = reduce_y_independent(plain);
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const auto nu = random_measure(s, 2, seed);
            const double a = eval_I_hom_objective(plain, nu), b = eval_I_hom_objective(reduced, nu);
            CHECK(std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a)));
        }
    }
    SECTION("double well is solved faster with the same value") {
        auto W = catalog::nonlocal("double_well");
        W.separable.reset();
        const auto reduced = reduce_y_independent(W);
        const double zero = 0.0;
        const auto u = GridField::constant(s, std::span(&zero, 1));
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        const auto full = minimize_I_hom(W, u, 2, s, 1, quick_hom(1));
        const auto t1 = clock::now();
        const auto fast = minimize_I_hom(reduced, u, 2, s, 1, quick_hom(1));
        const auto t2 = clock::now();
        CHECK(fast.value == Approx(full.value).margin(1e-6));
        CHECK(t2 - t1 < t1 - t0);
    }
}

TEST_CASE("gamma_experiment examples") {
    SECTION("tilted weighted quadratic, free") {
        GammaExperiment exp;
        exp.W = catalog::nonlocal("tilted_weighted");
        exp.eps_schedule = {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64};
        exp.spec = grid(512);
        exp.hom_spec = grid(4, 64);
        exp.K = 1;
        const auto rep = gamma_experiment(exp);
        CHECK(rep.final_gap <= 0.02 * std::abs(rep.I_hom));
        CHECK(rep.I_hom == Approx(-0.5 * inv_sqrt3).epsilon(1e-6));
        CHECK(rep.tail_nonincreasing);
        REQUIRE(rep.hom.audit);
        CHECK(rep.hom.audit->verdict == Verdict::consistent);
    }
    SECTION("double well, free") {
        GammaExperiment exp;
        exp.W = reduce_y_independent(catalog::nonlocal("double_well"));
        exp.eps_schedule = {1.0 / 8, 1.0 / 16};
        exp.spec = grid(64);
        exp.hom_spec = grid(4, 8);
        exp.K = 2;
        exp.seeds = {1, 2};
        const auto rep = gamma_experiment(exp);
        CHECK(std::abs(rep.I_hom) < 5e-2);
        for (double v : rep.min_I_eps) CHECK(std::abs(v) < 5e-2);
    }
    SECTION("quadratic with fixed deformation") {
        GammaExperiment exp;
        exp.W = catalog::nonlocal("quadratic");
        exp.eps_schedule = {1.0 / 8, 1.0 / 16};
        exp.spec = grid(64);
        exp.hom_spec = grid(4, 8);
        const double one = 1.0;
        exp.fixed_deformation = GridField::constant(exp.hom_spec, std::span(&one, 1));
        exp.K = 2;
        exp.seeds = {1, 2};
        const auto rep = gamma_experiment(exp);
        CHECK(rep.I_hom == Approx(2.0).epsilon(1e-8));
        for (double v : rep.min_I_eps) CHECK(v == Approx(2.0).epsilon(1e-8));
    }
    SECTION("schedule errors") {
        GammaExperiment exp;
        exp.W = catalog::nonlocal("quadratic");
        exp.eps_schedule = {1.0 / 16, 1.0 / 8};
        exp.spec = grid(64);
        exp.hom_spec = grid(4, 8);
        CHECK_THROWS_AS(gamma_experiment(exp), InvalidSchedule);
        exp.eps_schedule = {1.0 / 8};
        exp.K = 0;
        CHECK_THROWS_AS(gamma_experiment(exp), InvalidArgument);
    }
}

TEST_CASE("single_integral_gamma examples") {
    auto s = grid(1024, 32);
    SECTION("tilted with slope two") {
        const auto rep = single_integral_gamma(catalog::local("tilted_weighted_2"), {1.0 / 32, 1.0 / 128}, s, 1);
        CHECK(std::abs(rep.min_F_eps.back() + inv_sqrt3) <= 0.01 * inv_sqrt3);
        CHECK(std::abs(rep.min_hom + inv_sqrt3) <= 0.01 * inv_sqrt3);
        CHECK(rep.argmin_hom == Approx(inv_sqrt3).margin(1e-2));
    }
    SECTION("no oscillation") {
        const auto rep = single_integral_gamma(catalog::local("quadratic"), {1.0 / 32}, s, 1);
        CHECK(std::abs(rep.min_F_eps[0]) < 1e-12);
        CHECK(std::abs(rep.min_hom) < 1e-6);
    }
    SECTION("double well") {
        const auto rep = single_integral_gamma(catalog::local("double_well"), {1.0 / 32}, s, 1);
        CHECK(std::abs(rep.min_F_eps[0]) < 1e-10);
        CHECK(std::abs(rep.min_hom) < 1e-3);
    }
}
