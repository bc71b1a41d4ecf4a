#pragma once

// Derivations of the smooth-function algebra of an embedded space:
// point derivations (tangent vectors), global derivations in the
// coefficient normal form sum_i F^i d/dx^i, pushforwards, Lie brackets,
// sections of the tangent bundle, and numerical verifiers for the
// algebraic identities they satisfy (Leibniz, chain rule, module
// identity, section laws, locality).

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "subflow/common.hpp"
#include "subflow/expr.hpp"
#include "subflow/space.hpp"

namespace subflow {

inline constexpr double kDefaultAgreementTol = 1e-7;

// A tangent vector (x, v) acting on smooth functions by v(f) = grad f(x) . v.
struct PointDerivation {
    SpacePtr space;
    Vec base;
    Vec vector;
};

// Same data viewed as an element of TS, carrying the two tautological
// function evaluations tau*f and df.
struct TangentPair {
    SpacePtr space;
    Vec base;
    Vec vector;
};

struct AtlasEntry {
    ConstraintPiece region;
    std::vector<ScalarExpr> coefficients;
};

struct GlobalDerivation {
    SpacePtr space;
    std::vector<ScalarExpr> coefficients; // F^1..F^n
    std::vector<AtlasEntry> atlas;        // region-local coefficient sets for flow restarts
};

// x -> (x, xi(x)); tau composed with the section is the identity by
// construction.
struct Section {
    SpacePtr space;
    std::vector<ScalarExpr> assignment;
};

// Absolute defect together with the magnitude scale it should be judged
// against (1 + the largest participating term).
struct Residual {
    double value = 0.0;
    double scale = 1.0;
    double rel() const { return value / scale; }
    bool within(double tol) const { return value <= tol * scale; }
};

inline PointDerivation make_point_derivation(SpacePtr space, Vec base, Vec vector,
                                             double tol = -1.0) {
    if (tol < 0) tol = space->membership_tol;
    if (static_cast<int>(base.size()) != space->ambient_dim ||
        static_cast<int>(vector.size()) != space->ambient_dim)
        throw ArityError("point derivation dimension mismatch");
    if (!contains(*space, base, tol))
        throw PreconditionError("derivation base point is off the space");
    return PointDerivation{std::move(space), std::move(base), std::move(vector)};
}

inline void check_same_space(const SpacePtr& a, const SpacePtr& b) {
    if (a != b) throw PreconditionError("objects live on different spaces");
}

// v(f) for an ambient expression; the action of a tangent vector.
inline double act_ambient(const PointDerivation& v, const ScalarExpr& ambient) {
    return dot(gradient(ambient, v.base), v.vector);
}

inline double act(const PointDerivation& v, const SmoothFunction& f) {
    check_same_space(v.space, f.space);
    return act_ambient(v, f.ambient);
}

// ---------------------------------------------------------------------------
// Global derivations

namespace detail {

struct AgreementReport {
    bool ok = true;
    double worst = 0.0;
    Vec worst_point;
};

inline AgreementReport agreement_report(const EmbeddedSpace& s, const ScalarExpr& e1,
                                        const ScalarExpr& e2, double tol, int samples,
                                        std::uint64_t seed,
                                        const ConstraintPiece* region = nullptr) {
    AgreementReport rep;
    for (const Vec& p : sample(s, samples, seed)) {
        if (region && piece_residual(*region, p) > s.membership_tol) continue;
        double d;
        try {
            d = std::abs(eval(e1, p) - eval(e2, p));
        } catch (const EvalError&) {
            d = std::numeric_limits<double>::infinity();
        }
        if (d > rep.worst) {
            rep.worst = d;
            rep.worst_point = p;
        }
    }
    rep.ok = rep.worst <= tol;
    return rep;
}

} // namespace detail

// Sampling check that two ambient expressions restrict to the same
// function on S. A screen, not a proof.
inline bool agree_on_space(const EmbeddedSpace& s, const ScalarExpr& e1, const ScalarExpr& e2,
                           double tol = kDefaultAgreementTol, int samples = 512,
                           std::uint64_t seed = 0xA93EEull) {
    if (e1.arity != s.ambient_dim || e2.arity != s.ambient_dim) return false;
    return detail::agreement_report(s, e1, e2, tol, samples, seed).ok;
}

// Validates that every atlas entry agrees with the default coefficients
// on sampled points of S within its region.
inline GlobalDerivation make_global_derivation(SpacePtr space, std::vector<ScalarExpr> coefficients,
                                               std::vector<AtlasEntry> atlas = {},
                                               double agreement_tol = kDefaultAgreementTol) {
    int n = space->ambient_dim;
    if (static_cast<int>(coefficients.size()) != n)
        throw ArityError("derivation needs one coefficient per ambient dimension");
    for (const auto& c : coefficients)
        if (c.arity != n) throw ArityError("derivation coefficient arity mismatch");
    for (std::size_t a = 0; a < atlas.size(); ++a) {
        const AtlasEntry& entry = atlas[a];
        if (static_cast<int>(entry.coefficients.size()) != n)
            throw ArityError("atlas entry " + std::to_string(a) + " coefficient count mismatch");
        for (const auto& c : entry.coefficients)
            if (c.arity != n) throw ArityError("atlas entry coefficient arity mismatch");
        for (int i = 0; i < n; ++i) {
            auto rep = detail::agreement_report(*space, coefficients[static_cast<std::size_t>(i)],
                                                entry.coefficients[static_cast<std::size_t>(i)],
                                                agreement_tol, 512, 0xA93EEull, &entry.region);
            if (!rep.ok) {
                std::string pt = "(";
                for (std::size_t j = 0; j < rep.worst_point.size(); ++j)
                    pt += (j ? "," : "") + format_double(rep.worst_point[j]);
                pt += ")";
                throw Error("atlas entry " + std::to_string(a) + " disagrees with default coefficient " +
                            std::to_string(i + 1) + " on the space: |diff| = " + format_double(rep.worst) +
                            " at sample point " + pt);
            }
        }
    }
    return GlobalDerivation{std::move(space), std::move(coefficients), std::move(atlas)};
}

// X(f) = sum_i F^i d_i f, restricted to the space.
inline SmoothFunction apply(const GlobalDerivation& X, const SmoothFunction& f) {
    check_same_space(X.space, f.space);
    int n = X.space->ambient_dim;
    NodePtr acc;
    for (int i = 1; i <= n; ++i) {
        NodePtr term = ast::mul(X.coefficients[static_cast<std::size_t>(i - 1)].root,
                                ast::diff(f.ambient.root, i));
        acc = acc ? ast::add(std::move(acc), std::move(term)) : std::move(term);
    }
    return SmoothFunction{ScalarExpr{std::move(acc), n}, X.space};
}

// The value of X at x: the point derivation (x, (F^1(x),...,F^n(x))).
inline PointDerivation value_at(const GlobalDerivation& X, std::span<const double> x,
                                double tol = -1.0) {
    if (tol < 0) tol = X.space->membership_tol;
    if (!contains(*X.space, x, tol))
        throw PreconditionError("value_at: point is off the space");
    Vec v(X.coefficients.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = eval(X.coefficients[i], x);
    return PointDerivation{X.space, Vec(x.begin(), x.end()), std::move(v)};
}

// (f X) with a smooth scalar factor; used by the module identity.
inline GlobalDerivation scale_derivation(const SmoothFunction& f, const GlobalDerivation& X) {
    check_same_space(f.space, X.space);
    std::vector<ScalarExpr> coeffs;
    coeffs.reserve(X.coefficients.size());
    for (const auto& c : X.coefficients)
        coeffs.push_back(ScalarExpr{ast::mul(f.ambient.root, c.root), c.arity});
    return GlobalDerivation{X.space, std::move(coeffs), {}};
}

// ---------------------------------------------------------------------------
// Identity verifiers. LHS and RHS always go through independent
// computation paths.

// |v(f1 f2) - (v(f1) f2(x) + f1(x) v(f2))|
inline Residual leibniz_residual(const PointDerivation& v, const SmoothFunction& f1,
                                 const SmoothFunction& f2) {
    check_same_space(f1.space, f2.space);
    check_same_space(v.space, f1.space);
    ScalarExpr prod{ast::mul(f1.ambient.root, f2.ambient.root), f1.ambient.arity};
    double lhs = act_ambient(v, prod);
    double t1 = act_ambient(v, f1.ambient) * eval(f2.ambient, v.base);
    double t2 = eval(f1.ambient, v.base) * act_ambient(v, f2.ambient);
    double rhs = t1 + t2;
    double scale = 1 + std::max({std::abs(lhs), std::abs(t1), std::abs(t2)});
    return Residual{std::abs(lhs - rhs), scale};
}

// |v(F(f1..fk)) - sum_i dF_i(f(x)) v(f_i)|; the left side composes then
// differentiates, the right side sums k separate actions.
inline Residual chain_rule_residual(const PointDerivation& v, const ScalarExpr& F,
                                    const std::vector<SmoothFunction>& fs) {
    if (fs.empty()) throw ArityError("chain rule needs at least one inner function");
    for (const auto& f : fs) check_same_space(v.space, f.space);
    std::vector<ScalarExpr> inner;
    inner.reserve(fs.size());
    for (const auto& f : fs) inner.push_back(f.ambient);
    ScalarExpr composed = compose(F, inner);
    double lhs = act_ambient(v, composed);

    Vec y(fs.size());
    for (std::size_t i = 0; i < fs.size(); ++i) y[i] = eval(fs[i].ambient, v.base);
    double rhs = 0.0;
    double maxterm = std::abs(lhs);
    for (std::size_t i = 0; i < fs.size(); ++i) {
        double t = partial(F, static_cast<int>(i) + 1, y) * act_ambient(v, fs[i].ambient);
        rhs = (i == 0) ? t : rhs + t;
        maxterm = std::max(maxterm, std::abs(t));
    }
    return Residual{std::abs(lhs - rhs), 1 + maxterm};
}

// T phi(v): base moves by phi, the vector by the component Jacobian.
inline PointDerivation pushforward(const SmoothMap& phi, const PointDerivation& v) {
    check_same_space(phi.source, v.space);
    Vec image = map_eval(phi, v.base);
    Vec w(phi.components.size(), 0.0);
    for (std::size_t j = 0; j < phi.components.size(); ++j)
        w[j] = dot(gradient(phi.components[j], v.base), v.vector);
    return PointDerivation{phi.target, std::move(image), std::move(w)};
}

// |T phi(v) f - v(phi* f)|, the defining property of the pushforward.
inline Residual pushforward_residual(const SmoothMap& phi, const PointDerivation& v,
                                     const SmoothFunction& f) {
    check_same_space(f.space, phi.target);
    PointDerivation tv = pushforward(phi, v);
    double lhs = act(tv, f);
    std::vector<ScalarExpr> comps = phi.components;
    ScalarExpr pullback = compose(f.ambient, comps);
    double rhs = act_ambient(v, pullback);
    double scale = 1 + std::max(std::abs(lhs), std::abs(rhs));
    return Residual{std::abs(lhs - rhs), scale};
}

// [X,Y]^i = sum_j (F^j d_j G^i - G^j d_j F^i), built as expressions.
inline GlobalDerivation lie_bracket(const GlobalDerivation& X, const GlobalDerivation& Y) {
    check_same_space(X.space, Y.space);
    int n = X.space->ambient_dim;
    std::vector<ScalarExpr> coeffs;
    coeffs.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        NodePtr acc;
        for (int j = 0; j < n; ++j) {
            NodePtr term = ast::sub(
                ast::mul(X.coefficients[static_cast<std::size_t>(j)].root,
                         ast::diff(Y.coefficients[static_cast<std::size_t>(i)].root, j + 1)),
                ast::mul(Y.coefficients[static_cast<std::size_t>(j)].root,
                         ast::diff(X.coefficients[static_cast<std::size_t>(i)].root, j + 1)));
            acc = acc ? ast::add(std::move(acc), std::move(term)) : std::move(term);
        }
        coeffs.push_back(ScalarExpr{std::move(acc), n});
    }
    return GlobalDerivation{X.space, std::move(coeffs), {}};
}

// Symbolic bracket coefficients against nested applications at one point:
// |[X,Y](g)(x) - (X(Y(g)) - Y(X(g)))(x)|
inline Residual bracket_agreement_residual(const GlobalDerivation& X, const GlobalDerivation& Y,
                                           const SmoothFunction& g, std::span<const double> x) {
    GlobalDerivation B = lie_bracket(X, Y);
    double lhs = eval(apply(B, g).ambient, x);
    double t1 = eval(apply(X, apply(Y, g)).ambient, x);
    double t2 = eval(apply(Y, apply(X, g)).ambient, x);
    double rhs = t1 - t2;
    double scale = 1 + std::max({std::abs(lhs), std::abs(t1), std::abs(t2)});
    return Residual{std::abs(lhs - rhs), scale};
}

// |[f1 X1, f2 X2](g)(x) - (f1 f2 [X1,X2] + f1 X1(f2) X2 - f2 X2(f1) X1)(g)(x)|
inline Residual module_identity_residual(const SmoothFunction& f1, const SmoothFunction& f2,
                                         const GlobalDerivation& X1, const GlobalDerivation& X2,
                                         const SmoothFunction& g, std::span<const double> x) {
    check_same_space(f1.space, X1.space);
    check_same_space(f2.space, X2.space);
    check_same_space(X1.space, X2.space);
    check_same_space(g.space, X1.space);

    GlobalDerivation lhs_bracket = lie_bracket(scale_derivation(f1, X1), scale_derivation(f2, X2));
    double lhs = eval(apply(lhs_bracket, g).ambient, x);

    double a1 = eval(f1.ambient, x);
    double a2 = eval(f2.ambient, x);
    double t1 = a1 * a2 * eval(apply(lie_bracket(X1, X2), g).ambient, x);
    double t2 = a1 * eval(apply(X1, f2).ambient, x) * eval(apply(X2, g).ambient, x);
    double t3 = -a2 * eval(apply(X2, f1).ambient, x) * eval(apply(X1, g).ambient, x);
    double rhs = (t1 + t2) + t3;
    double scale = 1 + std::max({std::abs(lhs), std::abs(t1), std::abs(t2), std::abs(t3)});
    return Residual{std::abs(lhs - rhs), scale};
}

// Locality screen: when f and g agree on sampled points of S within
// `radius` of x, X(f) and X(g) must agree at x.
inline bool locality_check(const GlobalDerivation& X, const SmoothFunction& f,
                           const SmoothFunction& g, std::span<const double> x, double radius,
                           std::uint64_t seed = 0x10CA1ull) {
    check_same_space(X.space, f.space);
    check_same_space(f.space, g.space);
    const EmbeddedSpace& s = *X.space;
    Box ball;
    ball.lo.assign(x.begin(), x.end());
    ball.hi.assign(x.begin(), x.end());
    for (std::size_t i = 0; i < ball.lo.size(); ++i) {
        ball.lo[i] -= radius;
        ball.hi[i] += radius;
    }
    Vec xc(x.begin(), x.end());
    for (const Vec& p : sample(s, 128, seed, ball)) {
        if (dist2(p, xc) > radius) continue;
        double df = std::abs(eval(f.ambient, p) - eval(g.ambient, p));
        if (df > 1e-12)
            throw PreconditionError("locality_check: inputs differ by " + format_double(df) +
                                    " at an on-space point within the radius (not a locality "
                                    "failure)");
    }
    double a = eval(apply(X, f).ambient, x);
    double b = eval(apply(X, g).ambient, x);
    double scale = 1 + std::max(std::abs(a), std::abs(b));
    return std::abs(a - b) <= 1e-9 * scale;
}

// ---------------------------------------------------------------------------
// Tangent bundle functions and sections

// (tau* f, df) at the pair: (f(x), v(f)).
inline std::pair<double, double> tangent_pair_eval(const TangentPair& p, const SmoothFunction& f) {
    check_same_space(p.space, f.space);
    PointDerivation v{p.space, p.base, p.vector};
    return {value_on(f, p.base), act_ambient(v, f.ambient)};
}

inline Section section_from_derivation(const GlobalDerivation& X) {
    return Section{X.space, X.coefficients};
}

inline GlobalDerivation derivation_from_section(const Section& xi) {
    return GlobalDerivation{xi.space, xi.assignment, {}};
}

inline TangentPair section_value(const Section& xi, std::span<const double> x) {
    if (!contains(*xi.space, x, xi.space->membership_tol))
        throw PreconditionError("section evaluated off the space");
    Vec v(xi.assignment.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = eval(xi.assignment[i], x);
    return TangentPair{xi.space, Vec(x.begin(), x.end()), std::move(v)};
}

// xi*(tau* f)(x) = f(x): the first section law, by construction.
inline double section_pullback_tau(const Section& xi, const SmoothFunction& f,
                                   std::span<const double> x) {
    return tangent_pair_eval(section_value(xi, x), f).first;
}

// xi*(df)(x) = xi(x) f: the second section law.
inline double section_pullback_df(const Section& xi, const SmoothFunction& f,
                                  std::span<const double> x) {
    return tangent_pair_eval(section_value(xi, x), f).second;
}

// ---------------------------------------------------------------------------
// Tangency probe

enum class Tangency { Tangent, Obstructed };

// Numerical screen for whether (x, v) admits a curve in S: residual of
// x + t v along halved steps, divided by |t|. Tangent directions show the
// ratio contracting toward zero; obstructed ones plateau. A screen for
// curve feasibility only; derivation-hood is not decided here.
struct TangencyReport {
    std::vector<double> ratios; // max over both signs, per halving
    Tangency classification = Tangency::Obstructed;
};

inline TangencyReport tangency_probe(const EmbeddedSpace& s, std::span<const double> x,
                                     std::span<const double> v, int steps = 8,
                                     double t0 = 1e-2) {
    check_space_point(s, x);
    if (v.size() != x.size()) throw ArityError("probe vector dimension mismatch");
    TangencyReport rep;
    double t = t0;
    for (int k = 0; k < steps; ++k, t *= 0.5) {
        double worst = 0.0;
        for (double sgn : {1.0, -1.0}) {
            Vec y(x.begin(), x.end());
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += sgn * t * v[i];
            double r;
            try {
                r = residual(s, y);
            } catch (const EvalError&) {
                r = std::numeric_limits<double>::infinity();
            }
            worst = std::max(worst, r / t);
        }
        rep.ratios.push_back(worst);
    }
    bool contracting = true;
    for (std::size_t k = 0; k + 1 < rep.ratios.size(); ++k) {
        if (!(rep.ratios[k + 1] <= rep.ratios[k] / 1.5 + 1e-18)) {
            contracting = false;
            break;
        }
    }
    rep.classification = contracting ? Tangency::Tangent : Tangency::Obstructed;
    return rep;
}

} // namespace subflow
