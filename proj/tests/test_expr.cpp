#include <catch2/catch_amalgamated.hpp>

#include "subflow/expr.hpp"
#include "support/test_support.hpp"

using namespace subflow;
using namespace subflow::testing;

TEST_CASE("parse produces the expected tree shapes") {
    ScalarExpr e = parse("x1*x1 + x2", 2);
    REQUIRE(e.root->kind == NodeKind::Add);
    REQUIRE(e.root->lhs->kind == NodeKind::Mul);
    REQUIRE(e.root->lhs->lhs->kind == NodeKind::Variable);
    REQUIRE(e.root->lhs->lhs->index == 1);
    REQUIRE(e.root->lhs->rhs->index == 1);
    REQUIRE(e.root->rhs->kind == NodeKind::Variable);
    REQUIRE(e.root->rhs->index == 2);

    CHECK(structurally_equal(parse("x1 + x2*x3", 3),
                             ScalarExpr{ast::add(ast::var(1), ast::mul(ast::var(2), ast::var(3))), 3}));

    // ^ binds tighter than unary minus and associates right
    CHECK(structurally_equal(parse("-x1^2", 1),
                             ScalarExpr{ast::neg(ast::pow_const(ast::var(1), 2.0)), 1}));
    CHECK(structurally_equal(parse("2^3", 1), ScalarExpr{ast::lit(8.0), 1}) == false);
    ScalarExpr p = parse("x1^-2", 1);
    REQUIRE(p.root->kind == NodeKind::PowConst);
    CHECK(p.root->literal == -2.0);
}

TEST_CASE("parse errors carry positions and arity information") {
    try {
        parse("x1 +", 1);
        FAIL("expected ParseError");
    } catch (const ParseError& err) {
        CHECK(err.offset == 4);
    }

    CHECK_THROWS_WITH(parse("x3", 2), Catch::Matchers::ContainsSubstring("exceeds arity"));
    CHECK_THROWS_AS(parse("x3", 2), ParseError);
    CHECK_THROWS_AS(parse("sin(x1", 1), ParseError);
    CHECK_THROWS_AS(parse("foo(x1)", 1), ParseError);
    CHECK_THROWS_AS(parse("x1 ^ x1", 1), ParseError); // non-constant exponent
    CHECK_THROWS_AS(parse("", 1), ParseError);
    CHECK_THROWS_AS(parse("x0", 1), ParseError);
}

TEST_CASE("eval matches hand values and reports domain violations") {
    CHECK(eval(parse("x1*x1 + x2", 2), Vec{3, 2}) == 11.0);
    CHECK(eval(parse("sin(x1)", 1), Vec{0}) == 0.0);
    CHECK(eval(parse("2 + 3*4", 1), Vec{0}) == 14.0);
    CHECK(eval(parse("2^3^2", 1), Vec{0}) == 512.0); // right associative

    CHECK_THROWS_AS(eval(parse("log(x1)", 1), Vec{-1}), EvalError);
    CHECK_THROWS_AS(eval(parse("sqrt(x1)", 1), Vec{-0.5}), EvalError);
    CHECK_THROWS_AS(eval(parse("1/x1", 1), Vec{0}), EvalError);
    CHECK_THROWS_AS(eval(parse("x1^0.5", 1), Vec{-2}), EvalError);
    CHECK_THROWS_WITH(eval(parse("x2 + log(x1 - 1)", 2), Vec{0.5, 1.0}),
                      Catch::Matchers::ContainsSubstring("log"));

    // integer exponents accept any base
    CHECK(eval(parse("x1^2", 1), Vec{-3}) == 9.0);
    CHECK(eval(parse("x1^-1", 1), Vec{-4}) == -0.25);
}

TEST_CASE("partials match hand-differentiated oracles") {
    CHECK(partial(parse("x1*x1 + x2", 2), 1, Vec{3, 2}) == 6.0); // 2*x1
    CHECK(partial(parse("x1", 1), 1, Vec{0.37}) == 1.0);
    CHECK(partial(parse("x1*x1 + x2", 2), 2, Vec{3, 2}) == 1.0);

    ScalarExpr e = parse("exp(x1)*sin(x1)", 1);
    double ad = partial(e, 1, Vec{0.7});
    double fd = central_diff(e, 1, Vec{0.7});
    CHECK(std::abs(ad - fd) <= 1e-6 * (1 + std::abs(ad)));
    // closed form e^x(sin x + cos x)
    double closed = std::exp(0.7) * (std::sin(0.7) + std::cos(0.7));
    CHECK(ad == Catch::Approx(closed).epsilon(1e-14));
}

TEST_CASE("gradient computes all partials in one pass") {
    Vec g = gradient(parse("x1*x2", 2), Vec{2, 3});
    CHECK(g == Vec{3, 2});
    CHECK(gradient(parse("5", 3), Vec{1, 2, 3}) == Vec{0, 0, 0});
    CHECK(gradient(parse("x1 + x2", 2), Vec{-0.3, 11}) == Vec{1, 1});

    for (const auto& [src, arity] : smooth_corpus()) {
        ScalarExpr e = parse(src, arity);
        Rng rng(7);
        Vec x = random_point(rng, arity);
        Vec grad = gradient(e, x);
        for (int i = 1; i <= arity; ++i)
            CHECK(grad[static_cast<std::size_t>(i - 1)] == partial(e, i, x));
    }
}

TEST_CASE("AD agrees with central finite differences over the corpus") {
    Rng rng(42);
    for (const auto& [src, arity] : smooth_corpus()) {
        ScalarExpr e = parse(src, arity);
        for (int trial = 0; trial < 100; ++trial) {
            Vec x = random_point(rng, arity);
            for (int i = 1; i <= arity; ++i) {
                double ad = partial(e, i, x);
                double fd = central_diff(e, i, x);
                REQUIRE(std::abs(ad - fd) <= 1e-6 * (1 + std::abs(ad)));
            }
        }
    }
}

TEST_CASE("product rule holds to within 1e-12 relative") {
    Rng rng(43);
    const auto& corpus = smooth_corpus();
    for (int trial = 0; trial < 200; ++trial) {
        const auto& c1 = corpus[static_cast<std::size_t>(rng.uniform_int(0, (int)corpus.size() - 1))];
        const auto& c2 = corpus[static_cast<std::size_t>(rng.uniform_int(0, (int)corpus.size() - 1))];
        int arity = std::max(c1.arity, c2.arity);
        ScalarExpr e1 = parse(c1.source, arity);
        ScalarExpr e2 = parse(c2.source, arity);
        ScalarExpr prod{ast::mul(e1.root, e2.root), arity};
        Vec x = random_point(rng, arity);
        for (int i = 1; i <= arity; ++i) {
            double lhs = partial(prod, i, x);
            double rhs = partial(e1, i, x) * eval(e2, x) + eval(e1, x) * partial(e2, i, x);
            double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
            REQUIRE(std::abs(lhs - rhs) <= 1e-12 * scale);
        }
    }
}

TEST_CASE("compose substitutes argument trees") {
    ScalarExpr F = parse("x1*x2", 2);
    ScalarExpr f = parse("x1", 1);
    ScalarExpr composed = compose(F, {f, f});
    CHECK(structurally_equal(composed, parse("x1*x1", 1)));

    ScalarExpr id = parse("x1", 1);
    ScalarExpr e = parse("sin(x1) + x1^2", 1);
    CHECK(structurally_equal(compose(id, {e}), e));

    CHECK_THROWS_AS(compose(F, {f}), ArityError);
    CHECK_THROWS_AS(compose(F, {parse("x1", 1), parse("x1", 2)}), ArityError);
}

TEST_CASE("compose-then-differentiate matches the chain-rule formula") {
    Rng rng(44);
    const auto& corpus = smooth_corpus();
    int checked = 0;
    while (checked < 100) {
        int k = rng.uniform_int(1, 3);
        int n = rng.uniform_int(1, 3);
        // outer function over R^k
        std::vector<const CorpusExpr*> pool;
        for (const auto& c : corpus)
            if (c.arity <= k) pool.push_back(&c);
        const auto& Fc = *pool[static_cast<std::size_t>(rng.uniform_int(0, (int)pool.size() - 1))];
        ScalarExpr F = parse(Fc.source, k);
        std::vector<ScalarExpr> fs;
        for (int i = 0; i < k; ++i) {
            const auto& fc = corpus[static_cast<std::size_t>(rng.uniform_int(0, (int)corpus.size() - 1))];
            if (fc.arity > n) continue;
            fs.push_back(parse(fc.source, n));
        }
        if ((int)fs.size() != k) continue;

        ScalarExpr composed = compose(F, fs);
        Vec x = random_point(rng, n);
        Vec lhs = gradient(composed, x);

        Vec y(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) y[static_cast<std::size_t>(i)] = eval(fs[static_cast<std::size_t>(i)], x);
        Vec rhs(static_cast<std::size_t>(n), 0.0);
        for (int i = 1; i <= k; ++i) {
            double w = partial(F, i, y);
            Vec gi = gradient(fs[static_cast<std::size_t>(i - 1)], x);
            for (int j = 0; j < n; ++j) rhs[static_cast<std::size_t>(j)] += w * gi[static_cast<std::size_t>(j)];
        }
        for (int j = 0; j < n; ++j) {
            double a = lhs[static_cast<std::size_t>(j)], b = rhs[static_cast<std::size_t>(j)];
            REQUIRE(std::abs(a - b) <= 1e-10 * std::max({1.0, std::abs(a), std::abs(b)}));
        }
        ++checked;
    }
}

TEST_CASE("emit round-trips and preserves precedence") {
    CHECK(emit(ScalarExpr{ast::add(ast::var(1), ast::lit(2)), 1}) == "x1 + 2");

    for (const auto& [src, arity] : smooth_corpus()) {
        ScalarExpr e = parse(src, arity);
        ScalarExpr back = parse(emit(e), arity);
        REQUIRE(structurally_equal(e, back));
        REQUIRE(emit(back) == emit(e));
    }

    // shapes that need parentheses to survive
    ScalarExpr tricky{ast::mul(ast::add(ast::var(1), ast::lit(1)),
                               ast::sub(ast::var(1), ast::lit(1))), 1};
    CHECK(structurally_equal(parse(emit(tricky), 1), tricky));
    ScalarExpr nested{ast::pow_const(ast::neg(ast::var(1)), 2.0), 1};
    CHECK(structurally_equal(parse(emit(nested), 1), nested));
    ScalarExpr divd{ast::div(ast::var(1), ast::div(ast::lit(2), ast::var(1))), 1};
    CHECK(structurally_equal(parse(emit(divd), 1), divd));
}

TEST_CASE("emit round-trip holds on 1000 generated expressions") {
    Rng rng(45);
    for (int trial = 0; trial < 1000; ++trial) {
        int arity = rng.uniform_int(1, 4);
        ScalarExpr e = random_expr(rng, arity, rng.uniform_int(1, 5));
        std::string text = emit(e);
        ScalarExpr back = parse(text, arity);
        REQUIRE(structurally_equal(e, back));
    }
}

TEST_CASE("differentiate yields exact derivative expressions") {
    ScalarExpr e = parse("x1^2*x2", 2);
    ScalarExpr d1 = differentiate(e, 1);
    CHECK(eval(d1, Vec{3, 5}) == 30.0); // 2*x1*x2
    // nesting: d^2/dx1^2 (x1^2*x2) = 2*x2
    CHECK(eval(differentiate(d1, 1), Vec{3, 5}) == 10.0);
    // mixed second derivative
    CHECK(eval(differentiate(d1, 2), Vec{3, 5}) == 6.0);
    // gradient through a derivative node
    Vec g = gradient(d1, Vec{3, 5});
    CHECK(g[0] == 10.0);
    CHECK(g[1] == 6.0);

    CHECK_THROWS_AS(compose(d1, {parse("x1", 1), parse("x1", 1)}), EvalError);
}

TEST_CASE("derivative nesting depth is bounded") {
    ScalarExpr e = parse("tanh(x1)", 1);
    for (int i = 0; i < 6; ++i) e = differentiate(e, 1);
    CHECK_NOTHROW(eval(e, Vec{0.3}));
    e = differentiate(e, 1);
    CHECK_THROWS_AS(eval(e, Vec{0.3}), EvalError);
}

TEST_CASE("evaluation is deterministic") {
    ScalarExpr e = parse("tanh(x1*x2) + exp(tanh(x1) - x2^2)/sqrt(1 + x1^2 + x2^2)", 2);
    Vec x{0.7331, -1.1317};
    double v1 = eval(e, x);
    double v2 = eval(parse(emit(e), 2), x);
    CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
    Vec g1 = gradient(e, x);
    Vec g2 = gradient(e, x);
    CHECK(g1 == g2);
}
