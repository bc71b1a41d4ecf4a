#pragma once

// Property sweeps over a loaded model: every algebraic law the library
// claims, evaluated on every named derivation/function/map, with per-law
// maxima against pinned tolerances. Backs the `props` CLI command.

#include <map>
#include <string>
#include <vector>

#include "subflow/common.hpp"
#include "subflow/deriv.hpp"
#include "subflow/model.hpp"

namespace subflow {

struct LawResult {
    std::string law;
    int cases = 0;
    double max_residual = 0; // absolute
    double max_rel = 0;      // residual / scale
    double tolerance = 0;    // on the relative value
    bool pass = true;
};

struct PropsReport {
    std::vector<LawResult> laws;
    std::vector<std::string> warnings;
    bool pass = true;
    std::uint64_t seed = 0;
    int samples = 0;
};

// Test-harness hook: lets the CLI demonstrate that a corrupted
// computation path is caught by the suite.
enum class FaultInjection { None, ChainRuleSign };

namespace detail {

struct LawAccum {
    LawResult r;
    void add(const Residual& res) {
        ++r.cases;
        r.max_residual = std::max(r.max_residual, res.value);
        r.max_rel = std::max(r.max_rel, res.rel());
    }
    void add_exact(bool ok, double magnitude = 1.0) {
        ++r.cases;
        if (!ok) {
            r.max_residual = std::max(r.max_residual, magnitude);
            r.max_rel = std::max(r.max_rel, magnitude);
        }
    }
    LawResult finish() {
        r.pass = r.max_rel <= r.tolerance;
        return r;
    }
};

inline Residual corrupted_chain_residual(const PointDerivation& v, const ScalarExpr& F,
                                         const std::vector<SmoothFunction>& fs) {
    std::vector<ScalarExpr> inner;
    for (const auto& f : fs) inner.push_back(f.ambient);
    double lhs = act_ambient(v, compose(F, inner));
    Vec y(fs.size());
    for (std::size_t i = 0; i < fs.size(); ++i) y[i] = eval(fs[i].ambient, v.base);
    double rhs = 0, maxterm = std::abs(lhs);
    for (std::size_t i = 0; i < fs.size(); ++i) {
        double t = partial(F, static_cast<int>(i) + 1, y) * act_ambient(v, fs[i].ambient);
        if (i + 1 == fs.size()) t = -t; // injected sign fault
        rhs = (i == 0) ? t : rhs + t;
        maxterm = std::max(maxterm, std::abs(t));
    }
    return Residual{std::abs(lhs - rhs), 1 + maxterm};
}

} // namespace detail

inline PropsReport run_props(const ModelFile& model, std::uint64_t seed, int samples,
                             FaultInjection fault = FaultInjection::None) {
    PropsReport rep;
    rep.seed = seed;
    rep.samples = samples;

    // per-space sampled points, derivations, functions
    struct SpaceCtx {
        SpacePtr space;
        std::vector<Vec> points;
        std::vector<const GlobalDerivation*> derivations;
        std::vector<const SmoothFunction*> functions;
    };
    std::map<std::string, SpaceCtx> ctx;
    std::uint64_t salt = 0;
    for (const auto& [name, s] : model.spaces) {
        SpaceCtx c;
        c.space = s;
        c.points = sample(*s, samples, seed + (++salt));
        if (c.points.empty())
            rep.warnings.push_back("no sample points found for space '" + name + "'");
        ctx.emplace(name, std::move(c));
    }
    for (const auto& [name, d] : model.derivations)
        ctx[model.space_name(d.space)].derivations.push_back(&d);
    for (const auto& [name, f] : model.functions)
        ctx[model.space_name(f.space)].functions.push_back(&f);
    for (const auto& [name, c] : ctx) {
        if (c.functions.empty())
            rep.warnings.push_back("no test functions for space '" + name + "'");
        if (c.derivations.empty())
            rep.warnings.push_back("no derivations for space '" + name + "'");
    }

    detail::LawAccum value_at_law{{"value-at-consistency", 0, 0, 0, 1e-12}};
    detail::LawAccum leibniz_law{{"leibniz", 0, 0, 0, 1e-10}};
    detail::LawAccum chain_law{{"chain-rule", 0, 0, 0, 1e-10}};
    detail::LawAccum push_law{{"pushforward", 0, 0, 0, 1e-10}};
    detail::LawAccum push_base_law{{"pushforward-base", 0, 0, 0, 0.0}};
    detail::LawAccum bracket_law{{"bracket-agreement", 0, 0, 0, 1e-10}};
    detail::LawAccum anti_law{{"bracket-antisymmetry", 0, 0, 0, 1e-9}};
    detail::LawAccum jacobi_law{{"bracket-jacobi", 0, 0, 0, 1e-9}};
    detail::LawAccum module_law{{"module-identity", 0, 0, 0, 1e-9}};
    detail::LawAccum section_law{{"section-laws", 0, 0, 0, 1e-12}};

    static const std::vector<std::vector<std::string>> outer_pool = {
        {"sin(x1)", "x1^2", "exp(tanh(x1))"},
        {"x1*x2", "sin(x1) + x2^2", "x1/(2 + x2^2)"},
        {"x1*x2 + x3^2", "tanh(x1 + x2*x3)", "sin(x1)*x2 + x3"},
    };

    Rng rng(seed ^ 0xC0FFEEull);
    auto rand_vector = [&rng](int n) {
        Vec v(static_cast<std::size_t>(n));
        for (double& c : v) c = rng.uniform(-2, 2);
        return v;
    };

    for (const auto& [sname, c] : ctx) {
        int n = c.space->ambient_dim;
        for (const Vec& x : c.points) {
            for (const GlobalDerivation* X : c.derivations) {
                PointDerivation vx = value_at(*X, x);
                for (const SmoothFunction* f : c.functions) {
                    double lhs = act(vx, *f);
                    double rhs = eval(apply(*X, *f).ambient, x);
                    double scale = 1 + std::max(std::abs(lhs), std::abs(rhs));
                    value_at_law.add(Residual{std::abs(lhs - rhs), scale});
                }
            }
            // Leibniz and chain rule act through arbitrary tangent vectors.
            PointDerivation v{c.space, x, rand_vector(n)};
            for (std::size_t i = 0; i < c.functions.size(); ++i)
                for (std::size_t j = i; j < c.functions.size(); ++j)
                    leibniz_law.add(leibniz_residual(v, *c.functions[i], *c.functions[j]));
            if (!c.functions.empty()) {
                for (int k = 1; k <= 3; ++k) {
                    const auto& pool = outer_pool[static_cast<std::size_t>(k - 1)];
                    ScalarExpr F = parse(
                        pool[static_cast<std::size_t>(rng.uniform_int(0, (int)pool.size() - 1))], k);
                    std::vector<SmoothFunction> fs;
                    for (int i = 0; i < k; ++i)
                        fs.push_back(*c.functions[static_cast<std::size_t>(
                            rng.uniform_int(0, (int)c.functions.size() - 1))]);
                    chain_law.add(fault == FaultInjection::ChainRuleSign
                                      ? detail::corrupted_chain_residual(v, F, fs)
                                      : chain_rule_residual(v, F, fs));
                }
            }
            for (const SmoothFunction* g : c.functions) {
                for (std::size_t i = 0; i < c.derivations.size(); ++i)
                    for (std::size_t j = 0; j < c.derivations.size(); ++j) {
                        const GlobalDerivation& X = *c.derivations[i];
                        const GlobalDerivation& Y = *c.derivations[j];
                        bracket_law.add(bracket_agreement_residual(X, Y, *g, x));
                        // [X,Y] + [Y,X] evaluated coefficientwise
                        GlobalDerivation XY = lie_bracket(X, Y);
                        GlobalDerivation YX = lie_bracket(Y, X);
                        double worst = 0;
                        for (int d = 0; d < n; ++d) {
                            double a = eval(XY.coefficients[static_cast<std::size_t>(d)], x);
                            double b = eval(YX.coefficients[static_cast<std::size_t>(d)], x);
                            worst = std::max(worst, std::abs(a + b) / (1 + std::abs(a)));
                        }
                        anti_law.add(Residual{worst, 1.0});
                    }
            }
            if (!c.derivations.empty() && !c.functions.empty()) {
                const SmoothFunction& g = *c.functions.front();
                const GlobalDerivation& X = *c.derivations.front();
                const GlobalDerivation& Y = *c.derivations.back();
                const GlobalDerivation& Z =
                    *c.derivations[c.derivations.size() / 2];
                double a = eval(apply(lie_bracket(lie_bracket(X, Y), Z), g).ambient, x);
                double b = eval(apply(lie_bracket(lie_bracket(Y, Z), X), g).ambient, x);
                double cc = eval(apply(lie_bracket(lie_bracket(Z, X), Y), g).ambient, x);
                double scale = 1 + std::max({std::abs(a), std::abs(b), std::abs(cc)});
                jacobi_law.add(Residual{std::abs(a + b + cc), scale});

                if (c.functions.size() >= 2 && c.derivations.size() >= 2) {
                    const SmoothFunction& f1 = *c.functions.front();
                    const SmoothFunction& f2 = *c.functions.back();
                    module_law.add(module_identity_residual(f1, f2, X, Y, g, x));
                }
            }
            for (const GlobalDerivation* X : c.derivations) {
                Section xi = section_from_derivation(*X);
                for (const SmoothFunction* f : c.functions) {
                    double tau_lhs = section_pullback_tau(xi, *f, x);
                    double tau_rhs = eval(f->ambient, x);
                    section_law.add(
                        Residual{std::abs(tau_lhs - tau_rhs), 1 + std::abs(tau_rhs)});
                    double df_lhs = section_pullback_df(xi, *f, x);
                    double df_rhs = eval(apply(*X, *f).ambient, x);
                    section_law.add(Residual{std::abs(df_lhs - df_rhs), 1 + std::abs(df_rhs)});
                }
                GlobalDerivation back = derivation_from_section(xi);
                bool same = back.coefficients.size() == X->coefficients.size();
                for (std::size_t i = 0; same && i < back.coefficients.size(); ++i)
                    same = structurally_equal(back.coefficients[i], X->coefficients[i]);
                section_law.add_exact(same);
            }
        }
    }

    for (const auto& [mname, m] : model.maps) {
        const auto src_name = model.space_name(m.source);
        const auto tgt_name = model.space_name(m.target);
        const auto& src_pts = ctx[src_name].points;
        const auto& tgt_funcs = ctx[tgt_name].functions;
        if (tgt_funcs.empty())
            rep.warnings.push_back("map '" + mname + "': no functions on target space to test against");
        for (const Vec& x : src_pts) {
            PointDerivation v{m.source, x, rand_vector(m.source->ambient_dim)};
            Vec img = map_eval(m, x);
            PointDerivation tv = pushforward(m, v);
            bool base_ok = tv.base == img;
            push_base_law.add_exact(base_ok, base_ok ? 1.0 : dist2(tv.base, img));
            for (const SmoothFunction* f : tgt_funcs)
                push_law.add(pushforward_residual(m, v, *f));
        }
    }

    for (detail::LawAccum* law : {&value_at_law, &leibniz_law, &chain_law, &push_law,
                                  &push_base_law, &bracket_law, &anti_law, &jacobi_law,
                                  &module_law, &section_law}) {
        LawResult r = law->finish();
        rep.pass = rep.pass && r.pass;
        rep.laws.push_back(std::move(r));
    }
    return rep;
}

} // namespace subflow
