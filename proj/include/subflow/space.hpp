#pragma once

// Embedded subcartesian spaces: subsets of R^n encoded as finite unions
// of constraint pieces {h_k = 0, g_j >= 0} plus explicit points, with a
// tolerance-based membership oracle. Smooth functions and maps are
// restrictions of ambient expressions.

#include <array>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "subflow/common.hpp"
#include "subflow/expr.hpp"

namespace subflow {

// One piece {x : h_k(x) = 0 for all k, g_j(x) >= 0 for all j}. Empty
// constraint lists make the piece all of R^n.
struct ConstraintPiece {
    std::vector<ScalarExpr> equalities;
    std::vector<ScalarExpr> inequalities;
};

struct Box {
    Vec lo, hi;
};

struct EmbeddedSpace {
    int ambient_dim = 0;
    std::vector<ConstraintPiece> pieces;
    std::vector<Vec> points;
    double membership_tol = 1e-9;
    Box default_box; // used when a caller does not supply a sampling box
    std::string name;
};

using SpacePtr = std::shared_ptr<const EmbeddedSpace>;

inline Box default_box_for(int dim, const std::vector<Vec>& points) {
    Box b{Vec(static_cast<std::size_t>(dim), -2.0), Vec(static_cast<std::size_t>(dim), 2.0)};
    for (const Vec& p : points)
        for (int i = 0; i < dim; ++i) {
            b.lo[static_cast<std::size_t>(i)] = std::min(b.lo[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(i)] - 0.5);
            b.hi[static_cast<std::size_t>(i)] = std::max(b.hi[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(i)] + 0.5);
        }
    return b;
}

inline SpacePtr make_space(int dim, std::vector<ConstraintPiece> pieces, std::vector<Vec> points = {},
                           double membership_tol = 1e-9, std::optional<Box> box = std::nullopt,
                           std::string name = {}) {
    if (dim < 1) throw ArityError("ambient dimension must be positive");
    if (pieces.empty() && points.empty())
        throw Error("space needs at least one piece or explicit point");
    for (const auto& pc : pieces) {
        for (const auto& e : pc.equalities)
            if (e.arity != dim) throw ArityError("piece equality arity mismatch");
        for (const auto& e : pc.inequalities)
            if (e.arity != dim) throw ArityError("piece inequality arity mismatch");
    }
    for (const auto& p : points)
        if (static_cast<int>(p.size()) != dim) throw ArityError("explicit point dimension mismatch");
    auto s = std::make_shared<EmbeddedSpace>();
    s->ambient_dim = dim;
    s->pieces = std::move(pieces);
    s->points = std::move(points);
    s->membership_tol = membership_tol;
    s->default_box = box ? *box : default_box_for(dim, s->points);
    s->name = std::move(name);
    return s;
}

// max(|h_k|) together with one-sided inequality defect; 0 on the piece.
inline double piece_residual(const ConstraintPiece& pc, std::span<const double> x) {
    double r = 0.0;
    for (const auto& h : pc.equalities) r = std::max(r, std::abs(eval(h, x)));
    for (const auto& g : pc.inequalities) r = std::max(r, std::max(0.0, -eval(g, x)));
    return r;
}

inline void check_space_point(const EmbeddedSpace& s, std::span<const double> x) {
    if (static_cast<int>(x.size()) != s.ambient_dim)
        throw ArityError("point dimension " + std::to_string(x.size()) +
                         " does not match ambient dimension " + std::to_string(s.ambient_dim));
}

// Nonnegative defect of membership; zero (up to float) iff x lies in S.
inline double residual(const EmbeddedSpace& s, std::span<const double> x) {
    check_space_point(s, x);
    double r = std::numeric_limits<double>::infinity();
    for (const auto& pc : s.pieces) r = std::min(r, piece_residual(pc, x));
    for (const auto& p : s.points) {
        double d = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) d += sq(x[i] - p[i]);
        r = std::min(r, std::sqrt(d));
    }
    return r;
}

inline bool contains(const EmbeddedSpace& s, std::span<const double> x, double tol) {
    check_space_point(s, x);
    for (const auto& pc : s.pieces) {
        bool ok = true;
        for (const auto& h : pc.equalities)
            if (std::abs(eval(h, x)) > tol) { ok = false; break; }
        if (ok)
            for (const auto& g : pc.inequalities)
                if (eval(g, x) < -tol) { ok = false; break; }
        if (ok) return true;
    }
    for (const auto& p : s.points) {
        double d = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) d += sq(x[i] - p[i]);
        if (std::sqrt(d) <= tol) return true;
    }
    return false;
}

inline bool contains(const EmbeddedSpace& s, std::span<const double> x) {
    return contains(s, x, s.membership_tol);
}

namespace detail {

// residual() with expression domain errors treated as non-membership.
inline double residual_or_inf(const EmbeddedSpace& s, const Vec& x) {
    try {
        return residual(s, x);
    } catch (const EvalError&) {
        return std::numeric_limits<double>::infinity();
    }
}

// Greedy per-coordinate pattern descent on the membership residual.
inline bool descend_residual(const EmbeddedSpace& s, Vec& x, double eps, double step,
                             int max_sweeps = 200) {
    double r = residual_or_inf(s, x);
    for (int sweep = 0; sweep < max_sweeps && r > eps; ++sweep) {
        bool improved = false;
        for (std::size_t i = 0; i < x.size(); ++i) {
            for (double sgn : {1.0, -1.0}) {
                Vec y = x;
                y[i] += sgn * step;
                double ry = residual_or_inf(s, y);
                if (ry < r) {
                    x = std::move(y);
                    r = ry;
                    improved = true;
                }
            }
        }
        if (!improved) {
            step *= 0.5;
            if (step < 1e-14) break;
        }
    }
    return r <= eps;
}

} // namespace detail

// Deterministic rejection sampling with local residual descent. Returns at
// most `count` points, each with residual <= the space tolerance; never
// fabricates off-space points.
inline std::vector<Vec> sample(const EmbeddedSpace& s, int count, std::uint64_t seed, const Box& box) {
    if (box.lo.size() != static_cast<std::size_t>(s.ambient_dim) || box.hi.size() != box.lo.size())
        throw ArityError("sampling box dimension mismatch");
    Rng rng(seed);
    std::vector<Vec> out;
    double eps = s.membership_tol;
    double span = 0.0;
    for (std::size_t i = 0; i < box.lo.size(); ++i) span = std::max(span, box.hi[i] - box.lo[i]);
    int attempts = count * 40;
    for (int a = 0; a < attempts && static_cast<int>(out.size()) < count; ++a) {
        Vec x(static_cast<std::size_t>(s.ambient_dim));
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(box.lo[i], box.hi[i]);
        if (!detail::descend_residual(s, x, eps, 0.25 * span)) continue;
        // Snap onto an explicit point when that branch is the active one.
        for (const Vec& p : s.points) {
            if (dist2(x, p) <= eps) {
                x = p;
                break;
            }
        }
        out.push_back(std::move(x));
    }
    return out;
}

inline std::vector<Vec> sample(const EmbeddedSpace& s, int count, std::uint64_t seed) {
    return sample(s, count, seed, s.default_box);
}

// ---------------------------------------------------------------------------
// Smooth functions and maps as restrictions of ambient expressions

struct SmoothFunction {
    ScalarExpr ambient;
    SpacePtr space;
};

inline SmoothFunction restrict_to(const SpacePtr& s, const ScalarExpr& e) {
    if (e.arity != s->ambient_dim)
        throw ArityError("expression arity " + std::to_string(e.arity) +
                         " does not match ambient dimension " + std::to_string(s->ambient_dim));
    return SmoothFunction{e, s};
}

// Evaluation is only defined on the space; off-space input violates the
// restriction contract. `tol` widens the membership check for callers
// working inside an integrator band.
inline double value_on(const SmoothFunction& f, std::span<const double> x, double tol = -1.0) {
    if (tol < 0) tol = f.space->membership_tol;
    if (!contains(*f.space, x, tol))
        throw PreconditionError("point is not on space '" + f.space->name +
                                "' (residual " + format_double(residual(*f.space, x)) + ")");
    return eval(f.ambient, x);
}

struct SmoothMap {
    SpacePtr source;
    SpacePtr target;
    std::vector<ScalarExpr> components;
    double validation_tol = 1e-8;
};

inline Vec map_image(const SmoothMap& m, std::span<const double> x) {
    Vec y(m.components.size());
    for (std::size_t i = 0; i < m.components.size(); ++i) y[i] = eval(m.components[i], x);
    return y;
}

// Validates on construction that sampled source points land in the target.
inline SmoothMap make_smooth_map(SpacePtr source, SpacePtr target, std::vector<ScalarExpr> components,
                                 double validation_tol = 1e-8, int validation_samples = 32,
                                 std::uint64_t seed = 0x5eedu) {
    if (static_cast<int>(components.size()) != target->ambient_dim)
        throw ArityError("map component count does not match target dimension");
    for (const auto& c : components)
        if (c.arity != source->ambient_dim)
            throw ArityError("map component arity does not match source dimension");
    SmoothMap m{std::move(source), std::move(target), std::move(components), validation_tol};
    for (const Vec& x : sample(*m.source, validation_samples, seed)) {
        Vec y = map_image(m, x);
        if (!contains(*m.target, y, validation_tol))
            throw Error("smooth map validation failed: image of sampled source point misses the "
                        "target (residual " + format_double(residual(*m.target, y)) + ")");
    }
    return m;
}

inline Vec map_eval(const SmoothMap& m, std::span<const double> x) {
    if (!contains(*m.source, x, m.source->membership_tol))
        throw PreconditionError("map input is off the source space");
    Vec y = map_image(m, x);
    if (!contains(*m.target, y, m.validation_tol))
        throw Error("smooth map image is off the target space beyond validation tolerance");
    return y;
}

} // namespace subflow
