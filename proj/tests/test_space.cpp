#include <catch2/catch_amalgamated.hpp>

#include "subflow/space.hpp"
#include "support/corpus.hpp"
#include "support/test_support.hpp"

using namespace subflow;
using namespace subflow::testing;

TEST_CASE("membership oracle on the worked geometries") {
    CHECK(contains(*half_line(), Vec{0.5}, 1e-9));
    CHECK(contains(*half_line(), Vec{0.0}, 1e-9));
    CHECK_FALSE(contains(*half_line(), Vec{-0.3}, 1e-9));

    CHECK(contains(*circle(), Vec{1, 0}, 1e-9));
    CHECK_FALSE(contains(*circle(), Vec{1.1, 0}, 1e-9));

    CHECK(contains(*axes_cross(), Vec{0, 3}, 1e-9));
    CHECK(contains(*axes_cross(), Vec{-2, 0}, 1e-9));
    CHECK_FALSE(contains(*axes_cross(), Vec{0.5, 0.5}, 1e-9));

    CHECK(contains(*l_corner(), Vec{-1, 0}, 1e-9));
    CHECK(contains(*l_corner(), Vec{0, -1}, 1e-9));
    CHECK(contains(*l_corner(), Vec{0, 0}, 1e-9));
    CHECK_FALSE(contains(*l_corner(), Vec{1, 0}, 1e-9));
    CHECK_FALSE(contains(*l_corner(), Vec{0.3, 0.3}, 1e-9));

    auto pt = make_space(2, {}, {Vec{0, 1}});
    CHECK(contains(*pt, Vec{0, 1}, 1e-9));
    CHECK_FALSE(contains(*pt, Vec{0, 1.001}, 1e-9));
}

TEST_CASE("residual matches hand values") {
    CHECK(residual(*circle(), Vec{1, 0}) == 0.0);
    CHECK(residual(*circle(), Vec{1.1, 0}) == Catch::Approx(0.21).margin(1e-15));
    CHECK(residual(*half_line(), Vec{-0.3}) == Catch::Approx(0.3).margin(1e-15));
    CHECK(residual(*half_line(), Vec{0.7}) == 0.0);
    CHECK(residual(*l_corner(), Vec{0.5, 0.5}) == 0.5);

    auto pt = make_space(2, {}, {Vec{0, 1}});
    CHECK(residual(*pt, Vec{3, 1}) == Catch::Approx(3.0));
}

TEST_CASE("contains and residual agree across tolerances") {
    Rng rng(11);
    for (const SpacePtr& s : {half_line(), circle(), axes_cross(), l_corner()}) {
        for (int trial = 0; trial < 200; ++trial) {
            Vec x(static_cast<std::size_t>(s->ambient_dim));
            for (double& c : x) c = rng.uniform(-2, 2);
            double r = residual(*s, x);
            for (double tol : {1e-9, 1e-6, 1e-2, 0.5}) {
                bool member = contains(*s, x, tol);
                if (r <= tol * (1 - 1e-12)) CHECK(member);
                if (r > tol * (1 + 1e-12)) CHECK_FALSE(member);
            }
        }
    }
}

TEST_CASE("adding a piece never removes members") {
    auto base = make_space(2, {ConstraintPiece{{parse("x1*x1 + x2*x2 - 1", 2)}, {}}});
    auto extended = make_space(2, {ConstraintPiece{{parse("x1*x1 + x2*x2 - 1", 2)}, {}},
                                   ConstraintPiece{{parse("x2", 2)}, {}}});
    Rng rng(12);
    for (int trial = 0; trial < 300; ++trial) {
        Vec x{rng.uniform(-2, 2), rng.uniform(-2, 2)};
        for (double tol : {1e-9, 1e-3, 0.3})
            if (contains(*base, x, tol)) CHECK(contains(*extended, x, tol));
        CHECK(residual(*extended, x) <= residual(*base, x) + 1e-15);
    }
}

TEST_CASE("sample returns on-space points, reproducibly") {
    auto pts = sample(*half_line(), 10, 77, Box{{-2}, {2}});
    REQUIRE(pts.size() == 10);
    for (const Vec& p : pts) CHECK(p[0] >= -1e-9);

    auto cpts = sample(*circle(), 10, 77);
    REQUIRE(cpts.size() == 10);
    for (const Vec& p : cpts) CHECK(std::abs(p[0] * p[0] + p[1] * p[1] - 1) <= 1e-9);

    auto only = make_space(2, {}, {Vec{0, 1}});
    auto opts = sample(*only, 5, 3);
    REQUIRE_FALSE(opts.empty());
    for (const Vec& p : opts) CHECK(p == Vec{0, 1});

    // bit-for-bit reproducibility
    auto again = sample(*circle(), 10, 77);
    REQUIRE(again.size() == cpts.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i] == cpts[i]);
    auto other = sample(*circle(), 10, 78);
    CHECK(other != cpts);
}

TEST_CASE("sampling covers strata of stratified spaces") {
    auto pts = sample(*l_corner(), 64, 5);
    REQUIRE(pts.size() >= 32);
    int horiz = 0, vert = 0;
    for (const Vec& p : pts) {
        if (std::abs(p[1]) <= 1e-9) ++horiz;
        if (std::abs(p[0]) <= 1e-9) ++vert;
    }
    CHECK(horiz > 0);
    CHECK(vert > 0);
}

TEST_CASE("restrict_to checks arity and evaluation checks membership") {
    SmoothFunction f = restrict_to(half_line(), parse("x1^2", 1));
    CHECK(value_on(f, Vec{2}) == 4.0);
    CHECK_THROWS_AS(value_on(f, Vec{-1}), PreconditionError);
    CHECK_THROWS_AS(restrict_to(half_line(), parse("x1 + x2", 2)), ArityError);

    // widened tolerance admits band points
    CHECK(value_on(f, Vec{-1e-7}, 1e-6) == Catch::Approx(1e-14));
}

TEST_CASE("smooth maps evaluate and validate") {
    // projection of the circle to the line
    SmoothMap proj = make_smooth_map(circle(), line(), {parse("x1", 2)});
    CHECK(map_eval(proj, Vec{0, 1}) == Vec{0});

    // identity inclusion of the circle into the plane
    SmoothMap incl = make_smooth_map(circle(), plane(), {parse("x1", 2), parse("x2", 2)});
    CHECK(map_eval(incl, Vec{1, 0}) == Vec{1, 0});

    // parametrization of the circle by angle
    SmoothMap param = make_smooth_map(line(), circle(), {parse("cos(x1)", 1), parse("sin(x1)", 1)});
    Vec y = map_eval(param, Vec{3.14159265358979323846 / 2});
    CHECK(std::abs(y[0] - 0) <= 1e-12);
    CHECK(std::abs(y[1] - 1) <= 1e-12);

    CHECK_THROWS_AS(map_eval(proj, Vec{2, 2}), PreconditionError);
    // invalid map: image misses the target
    CHECK_THROWS(make_smooth_map(line(), circle(), {parse("x1", 1), parse("x1", 1)}));
}

TEST_CASE("map images stay on the target for sampled sources") {
    SmoothMap param = make_smooth_map(line(), circle(), {parse("cos(x1)", 1), parse("sin(x1)", 1)});
    for (const Vec& x : sample(*line(), 50, 9))
        CHECK(residual(*circle(), map_eval(param, x)) <= param.validation_tol);
}
