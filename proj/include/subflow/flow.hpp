#pragma once

// Maximal lifted integral curves of a global derivation, built by the
// extend-integrate-restrict-restart procedure: integrate the ambient ODE
// x' = Y(x) with an embedded Dormand-Prince 5(4) pair while the
// trajectory stays inside the on-space band, locate the exit parameter by
// bisection on the membership residual, then try to continue from the
// limit point with another coefficient set (atlas extension) or stop,
// tagging why each end of the domain terminated. Flow maps e^{tX} and
// their local one-parameter-group residuals sit on top.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "subflow/common.hpp"
#include "subflow/deriv.hpp"
#include "subflow/expr.hpp"
#include "subflow/space.hpp"

namespace subflow {

struct FlowSettings {
    double rtol = 1e-9;
    double atol = 1e-12;
    double band_tol = 1e-6;        // on-space acceptance band for steps
    double exit_bisect_tol = 1e-10; // parameter tolerance for exit location
    double t_budget = 100.0;       // max |t| per direction
    int max_restarts = 16;
    double probe_h = 1e-8;         // Euler probe step for blocked-direction tests
    double max_step = 0.02;        // keeps stored samples dense enough for interpolation
    bool reproject = false;        // pull accepted samples back onto S (changes the curve)

    FlowSettings refined(double factor = 100.0) const {
        FlowSettings s = *this;
        s.rtol /= factor;
        s.atol /= factor;
        s.band_tol /= factor;
        s.exit_bisect_tol /= factor;
        return s;
    }

    void validate() const {
        if (rtol <= 0 || atol <= 0 || band_tol <= 0 || exit_bisect_tol <= 0 || t_budget <= 0 ||
            probe_h <= 0 || max_step <= 0 || max_restarts < 0)
            throw Error("flow settings must be positive");
        if (exit_bisect_tol >= probe_h)
            throw Error("exit_bisect_tol must be smaller than probe_h");
    }
};

enum class Termination { Budget, ExitNoLimit, ExitLimitExhausted, FixedPointConvergence };

inline std::string to_string(Termination t) {
    switch (t) {
    case Termination::Budget: return "BUDGET";
    case Termination::ExitNoLimit: return "EXIT_NO_LIMIT";
    case Termination::ExitLimitExhausted: return "EXIT_LIMIT_EXHAUSTED";
    case Termination::FixedPointConvergence: return "FIXED_POINT_CONVERGENCE";
    }
    return "?";
}

enum class DomainKind { Point, Interval };

inline std::string to_string(DomainKind k) {
    return k == DomainKind::Point ? "POINT" : "INTERVAL";
}

// One ambient ODE solve under a single coefficient set. Samples are the
// accepted integrator steps, strictly increasing in t, endpoints included.
struct CurveSegment {
    double t_start = 0;
    double t_end = 0;
    std::vector<std::pair<double, Vec>> samples;
    int extension_id = -1; // -1 default coefficients, >= 0 atlas index
};

struct DomainEnd {
    double t = 0;
    bool closed = true; // closed iff the maximal curve attains this endpoint
    Termination termination = Termination::Budget;
    int restarts = 0; // attempted restarts in this direction
    int handoffs = 0; // successful switches to a different extension
};

struct IntegralCurve {
    Vec start;
    std::vector<CurveSegment> segments; // contiguous in t, junction points shared
    DomainKind domain_kind = DomainKind::Interval;
    DomainEnd left, right;
};

struct LiftedSample {
    double t;
    Vec point;
    Vec tangent; // X(c(t)), always the derivation's own coefficients
    int segment;
    int extension_id;
};

struct LiftedCurve {
    SpacePtr space;
    IntegralCurve curve;
    std::vector<LiftedSample> samples; // flattened, junction duplicates removed
    double max_onspace_residual = 0;
};

struct OutOfDomainError : PreconditionError {
    double left, right;
    OutOfDomainError(double t, double l, double r)
        : PreconditionError("parameter " + format_double(t) + " is outside the curve domain [" +
                            format_double(l) + ", " + format_double(r) + "]"),
          left(l), right(r) {}
};

// ---------------------------------------------------------------------------
// Engine internals

enum class LocalOutcome { Budget, Exit, NoLimit, FixedPoint };

namespace detail {

inline constexpr double kFixedPointSpeed = 1e-13;
inline constexpr double kDivergenceNorm = 1e12;

inline double norm_inf(const Vec& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Membership defect of S together with the active extension's region.
inline double combined_residual(const EmbeddedSpace& s, const ConstraintPiece* region,
                                const Vec& x) {
    double r = residual(s, x);
    if (region) r = std::max(r, piece_residual(*region, x));
    return r;
}

inline bool eval_field(const std::vector<ScalarExpr>& coeffs, int dir, const Vec& x, Vec& out) {
    out.resize(coeffs.size());
    try {
        for (std::size_t i = 0; i < coeffs.size(); ++i)
            out[i] = dir * eval(coeffs[i], x);
    } catch (const EvalError&) {
        return false;
    }
    return true;
}

struct RawResult {
    std::vector<double> taus; // ascending local times, taus[0] == 0
    std::vector<Vec> pts;
    LocalOutcome outcome = LocalOutcome::Budget;
};

// Dormand-Prince 5(4) with PI step-size control, FSAL, and dense output
// used to bisect the band-exit parameter. The exit time itself is then
// polished down to the residual noise floor: the band crossing sits
// band_tol/|exit speed| past the true exit, the floor crossing does not.
inline RawResult integrate_raw(const EmbeddedSpace& s, const ConstraintPiece* region,
                               const std::vector<ScalarExpr>& coeffs, const Vec& x0, int dir,
                               double budget, const FlowSettings& st) {
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                            a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
    static constexpr double safe = 0.9, beta = 0.04;
    static constexpr double expo1 = 0.2 - beta * 0.75;
    static constexpr double facc1 = 5.0, facc2 = 0.1; // 1/0.2 and 1/10

    const std::size_t n = x0.size();
    RawResult out;
    out.taus = {0.0};
    out.pts = {x0};

    Vec y = x0;
    double tau = 0;
    Vec k1;
    if (!eval_field(coeffs, dir, y, k1)) {
        out.outcome = LocalOutcome::NoLimit;
        return out;
    }
    if (norm_inf(k1) < kFixedPointSpeed) {
        out.taus.push_back(budget);
        out.pts.push_back(y);
        out.outcome = LocalOutcome::FixedPoint;
        return out;
    }

    std::vector<double> recent = {combined_residual(s, region, y)};
    auto recent_max = [&recent] {
        double m = 0;
        for (double r : recent) m = std::max(m, r);
        return m;
    };

    double h = std::min({st.max_step, budget, 0.01 * (1 + norm_inf(y)) / (1 + norm_inf(k1))});
    double facold = 1e-4;
    bool rejected = false;
    int fp_count = 0;
    Vec k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), y5(n);

    for (;;) {
        if (budget - tau <= 1e-14 * (1 + std::abs(tau))) {
            out.outcome = LocalOutcome::Budget;
            return out;
        }
        bool last = false;
        if (tau + 1.01 * h >= budget) {
            h = budget - tau;
            last = true;
        }
        if (h < 1e-14 * (1 + std::abs(tau))) {
            out.outcome = LocalOutcome::NoLimit; // step-size underflow
            return out;
        }

        bool eval_ok = true;
        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a21 * k1[i]);
        eval_ok = eval_field(coeffs, dir, ytmp, k2);
        if (eval_ok) {
            for (std::size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
            eval_ok = eval_field(coeffs, dir, ytmp, k3);
        }
        if (eval_ok) {
            for (std::size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
            eval_ok = eval_field(coeffs, dir, ytmp, k4);
        }
        if (eval_ok) {
            for (std::size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            eval_ok = eval_field(coeffs, dir, ytmp, k5);
        }
        if (eval_ok) {
            for (std::size_t i = 0; i < n; ++i)
                ytmp[i] = y[i] +
                          h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
            eval_ok = eval_field(coeffs, dir, ytmp, k6);
        }
        if (eval_ok) {
            for (std::size_t i = 0; i < n; ++i)
                y5[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] +
                                    a76 * k6[i]);
            eval_ok = eval_field(coeffs, dir, y5, k7);
        }
        if (!eval_ok) {
            out.outcome = LocalOutcome::NoLimit;
            return out;
        }

        double err = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                            e7 * k7[i]);
            double sk = st.atol + st.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
            err += sq(e / sk);
        }
        err = std::sqrt(err / static_cast<double>(n));

        double fac11 = err > 0 ? std::pow(err, expo1) : 0.0;
        if (err > 1.0) {
            h /= std::min(facc1, fac11 / safe);
            rejected = true;
            continue;
        }

        // accepted
        double fac = std::clamp(fac11 / std::pow(facold, beta) / safe, facc2, facc1);
        double hnew = h / fac;
        if (rejected) hnew = std::min(hnew, h);
        facold = std::max(err, 1e-4);
        rejected = false;

        if (norm_inf(y5) > kDivergenceNorm) {
            out.outcome = LocalOutcome::NoLimit;
            return out;
        }
        double r_new;
        try {
            r_new = combined_residual(s, region, y5);
        } catch (const EvalError&) {
            out.outcome = LocalOutcome::NoLimit;
            return out;
        }

        if (r_new <= st.band_tol) {
            tau = last ? budget : tau + h;
            if (st.reproject) {
                Vec proj = y5;
                if (detail::descend_residual(s, proj, s.membership_tol, 4 * r_new + 1e-12))
                    y5 = proj;
            }
            y = y5;
            out.taus.push_back(tau);
            out.pts.push_back(y);
            recent.push_back(r_new);
            if (recent.size() > 5) recent.erase(recent.begin());
            k1 = k7;

            if (norm_inf(k7) < kFixedPointSpeed) {
                if (++fp_count >= 3) {
                    if (budget - tau > 1e-14) {
                        out.taus.push_back(budget);
                        out.pts.push_back(y);
                    }
                    out.outcome = LocalOutcome::FixedPoint;
                    return out;
                }
            } else {
                fp_count = 0;
            }
            h = std::min(hnew, st.max_step);
            continue;
        }

        // Off the band: dense-output bisection for the exit parameter.
        std::vector<Vec> rc(5, Vec(n));
        for (std::size_t i = 0; i < n; ++i) {
            double ydiff = y5[i] - y[i];
            double bspl = h * k1[i] - ydiff;
            rc[0][i] = y[i];
            rc[1][i] = ydiff;
            rc[2][i] = bspl;
            rc[3][i] = ydiff - h * k7[i] - bspl;
            rc[4][i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] +
                            d7 * k7[i]);
        }
        auto dense = [&](double th) {
            Vec p(n);
            for (std::size_t i = 0; i < n; ++i) {
                double th1 = 1 - th;
                p[i] = rc[0][i] +
                       th * (rc[1][i] + th1 * (rc[2][i] + th * (rc[3][i] + th1 * rc[4][i])));
            }
            return p;
        };
        auto resid_at = [&](double th) {
            try {
                return combined_residual(s, region, dense(th));
            } catch (const EvalError&) {
                return std::numeric_limits<double>::infinity();
            }
        };

        auto bisect = [&](double threshold, double hi0) {
            double lo = 0, hi = hi0;
            while ((hi - lo) * h > st.exit_bisect_tol) {
                double mid = 0.5 * (lo + hi);
                if (resid_at(mid) > threshold)
                    hi = mid;
                else
                    lo = mid;
            }
            return lo;
        };
        double theta_band = bisect(st.band_tol, 1.0);
        double floor = std::min(std::max(s.membership_tol, 4 * recent_max()), st.band_tol);
        double theta = bisect(floor, std::min(1.0, theta_band + st.exit_bisect_tol / h));

        double t_exit = tau + theta * h;
        Vec limit = dense(theta);
        if (t_exit > out.taus.back() + 1e-15) {
            out.taus.push_back(t_exit);
            out.pts.push_back(limit);
        }
        out.outcome = LocalOutcome::Exit;
        return out;
    }
}

// The blocked-direction screen: Euler probes at probe_h, probe_h/2,
// probe_h/4. Blocked means every probe sits above the residual floor and
// the residual/step ratio fails to contract by 1.5x per halving. The
// floor adapts to the base point's own residual so integrator drift does
// not read as an obstruction.
inline bool probe_blocked(const EmbeddedSpace& s, const ConstraintPiece* region,
                          const std::vector<ScalarExpr>& coeffs, const Vec& x, int dir,
                          const FlowSettings& st) {
    Vec v;
    if (!eval_field(coeffs, dir, x, v)) return true;
    double r0;
    try {
        r0 = combined_residual(s, region, x);
    } catch (const EvalError&) {
        return true;
    }
    double threshold = std::max(s.membership_tol, 2 * r0);
    double ratios[3];
    double h = st.probe_h;
    for (int j = 0; j < 3; ++j, h *= 0.5) {
        Vec p = x;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += h * v[i];
        double r;
        try {
            r = combined_residual(s, region, p);
        } catch (const EvalError&) {
            r = std::numeric_limits<double>::infinity();
        }
        if (r <= threshold) return false;
        ratios[j] = r / h;
    }
    bool contracting = ratios[1] <= ratios[0] / 1.5 + 1e-18 && ratios[2] <= ratios[1] / 1.5 + 1e-18;
    return !contracting;
}

struct Extension {
    const std::vector<ScalarExpr>* coeffs;
    const ConstraintPiece* region;
    int id; // -1 default, >= 0 atlas index
};

// Deterministic restart selection: first atlas entry (declaration order)
// whose region contains x and whose probe is unblocked, then the default
// coefficients.
inline std::optional<Extension> select_extension(const GlobalDerivation& X, const Vec& x, int dir,
                                                 const FlowSettings& st) {
    const EmbeddedSpace& s = *X.space;
    for (std::size_t a = 0; a < X.atlas.size(); ++a) {
        const AtlasEntry& entry = X.atlas[a];
        bool in_region;
        try {
            in_region = piece_residual(entry.region, x) <= st.band_tol;
        } catch (const EvalError&) {
            in_region = false;
        }
        if (in_region && !probe_blocked(s, &entry.region, entry.coefficients, x, dir, st))
            return Extension{&entry.coefficients, &entry.region, static_cast<int>(a)};
    }
    if (!probe_blocked(s, nullptr, X.coefficients, x, dir, st))
        return Extension{&X.coefficients, nullptr, -1};
    return std::nullopt;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Public operations

struct LocalIntegration {
    CurveSegment segment; // samples ascending in global t (t0 = 0)
    LocalOutcome outcome = LocalOutcome::Budget;
    double t_exit = 0;  // signed parameter where the segment ends
    Vec limit_point;    // candidate restart point when outcome == Exit
};

// One ODE solve from x0 under the given coefficient set, advancing while
// the trajectory stays within band_tol of S (and of `region`, if given).
inline LocalIntegration integrate_local(const SpacePtr& space,
                                        const std::vector<ScalarExpr>& coeffs, const Vec& x0,
                                        int direction, const FlowSettings& st,
                                        const ConstraintPiece* region = nullptr,
                                        double budget = -1.0) {
    st.validate();
    if (direction != 1 && direction != -1) throw Error("direction must be +1 or -1");
    check_space_point(*space, x0);
    if (detail::combined_residual(*space, region, x0) > st.band_tol)
        throw PreconditionError("integration start point is off the space band");
    if (budget < 0) budget = st.t_budget;

    detail::RawResult raw =
        detail::integrate_raw(*space, region, coeffs, x0, direction, budget, st);
    LocalIntegration out;
    out.outcome = raw.outcome;
    out.t_exit = direction * raw.taus.back();
    out.limit_point = raw.pts.back();
    CurveSegment& seg = out.segment;
    seg.extension_id = -1;
    seg.samples.reserve(raw.taus.size());
    for (std::size_t i = 0; i < raw.taus.size(); ++i)
        seg.samples.emplace_back(direction * raw.taus[i], raw.pts[i]);
    if (direction < 0) std::reverse(seg.samples.begin(), seg.samples.end());
    seg.t_start = seg.samples.front().first;
    seg.t_end = seg.samples.back().first;
    return out;
}

// Per-direction blocked-at-zero test: true means no extension (atlas or
// default) admits even an Euler probe into the band from x0.
inline std::pair<bool, bool> point_curve_probe(const GlobalDerivation& X, const Vec& x0,
                                               const FlowSettings& st) {
    st.validate();
    check_space_point(*X.space, x0);
    bool fwd = !detail::select_extension(X, x0, +1, st).has_value();
    bool back = !detail::select_extension(X, x0, -1, st).has_value();
    return {fwd, back};
}

// The maximal-curve construction: integrate, locate the exit, restart
// from the limit point, concatenate. Budgets may override
// settings.t_budget per direction (used by the CLI's --t-max/--t-min).
inline LiftedCurve maximal_curve(const GlobalDerivation& X, const Vec& x0, const FlowSettings& st,
                                 double forward_budget = -1.0, double backward_budget = -1.0) {
    st.validate();
    const EmbeddedSpace& s = *X.space;
    check_space_point(s, x0);
    if (residual(s, x0) > st.band_tol)
        throw PreconditionError("curve start point is off the space band");
    if (forward_budget < 0) forward_budget = st.t_budget;
    if (backward_budget < 0) backward_budget = st.t_budget;

    struct DirOutcome {
        std::vector<CurveSegment> segments; // in integration order
        DomainEnd end;
        bool blocked_at_zero = false;
    };

    auto run_direction = [&](int dir, double budget) {
        DirOutcome res;
        Vec cur = x0;
        double consumed = 0;
        int restarts = 0, handoffs = 0;
        auto finish = [&](Termination term, bool closed) {
            double t = dir * consumed;
            if (t == 0) t = 0.0; // canonicalize -0
            res.end = DomainEnd{t, closed, term, restarts, handoffs};
        };
        auto sel = detail::select_extension(X, cur, dir, st);
        if (!sel) {
            // The direction is blocked at t = 0 regardless of the budget;
            // this is what makes single-point domains detectable.
            res.blocked_at_zero = true;
            finish(Termination::ExitLimitExhausted, true);
            return res;
        }
        if (budget <= 0) {
            finish(Termination::Budget, false);
            return res;
        }
        for (;;) {
            detail::RawResult raw = detail::integrate_raw(s, sel->region, *sel->coeffs, cur, dir,
                                                          budget - consumed, st);
            if (raw.taus.size() >= 2) {
                CurveSegment seg;
                seg.extension_id = sel->id;
                seg.samples.reserve(raw.taus.size());
                for (std::size_t i = 0; i < raw.taus.size(); ++i) {
                    double t = dir * (consumed + raw.taus[i]);
                    if (t == 0) t = 0.0;
                    seg.samples.emplace_back(t, raw.pts[i]);
                }
                if (dir < 0) std::reverse(seg.samples.begin(), seg.samples.end());
                seg.t_start = seg.samples.front().first;
                seg.t_end = seg.samples.back().first;
                res.segments.push_back(std::move(seg));
            }
            consumed += raw.taus.back();
            cur = raw.pts.back();
            switch (raw.outcome) {
            case LocalOutcome::Budget:
                finish(Termination::Budget, false);
                return res;
            case LocalOutcome::FixedPoint:
                consumed = budget; // constant tail appended by the integrator
                finish(Termination::FixedPointConvergence, false);
                return res;
            case LocalOutcome::NoLimit:
                finish(Termination::ExitNoLimit, false);
                return res;
            case LocalOutcome::Exit: {
                if (restarts >= st.max_restarts) {
                    finish(Termination::Budget, false); // restart budget exhausted
                    return res;
                }
                ++restarts;
                auto next = detail::select_extension(X, cur, dir, st);
                if (!next) {
                    finish(Termination::ExitLimitExhausted, true);
                    return res;
                }
                if (next->id != sel->id) ++handoffs;
                sel = next;
                break;
            }
            }
        }
    };

    DirOutcome fwd = run_direction(+1, forward_budget);
    DirOutcome back = run_direction(-1, backward_budget);

    LiftedCurve out;
    out.space = X.space;
    out.curve.start = x0;
    out.curve.left = back.end;
    out.curve.right = fwd.end;
    bool point_domain = fwd.blocked_at_zero && back.blocked_at_zero;
    out.curve.domain_kind = point_domain ? DomainKind::Point : DomainKind::Interval;

    if (!point_domain) {
        for (auto it = back.segments.rbegin(); it != back.segments.rend(); ++it)
            out.curve.segments.push_back(std::move(*it));
        for (auto& seg : fwd.segments) out.curve.segments.push_back(std::move(seg));
    }

    auto tangent_at = [&X](const Vec& p) {
        Vec v(X.coefficients.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = eval(X.coefficients[i], p);
        return v;
    };

    if (out.curve.segments.empty()) {
        out.samples.push_back(LiftedSample{0.0, x0, tangent_at(x0), -1, -1});
        out.max_onspace_residual = residual(s, x0);
        return out;
    }

    for (std::size_t si = 0; si < out.curve.segments.size(); ++si) {
        const CurveSegment& seg = out.curve.segments[si];
        for (const auto& [t, p] : seg.samples) {
            if (!out.samples.empty() && t == out.samples.back().t) continue;
            out.samples.push_back(
                LiftedSample{t, p, tangent_at(p), static_cast<int>(si), seg.extension_id});
            out.max_onspace_residual = std::max(out.max_onspace_residual, residual(s, p));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense evaluation and flow maps

// Cubic Hermite between stored samples using the stored lifted tangents.
inline Vec curve_eval(const LiftedCurve& c, double t) {
    if (c.curve.domain_kind == DomainKind::Point) {
        if (t == 0.0) return c.curve.start;
        throw OutOfDomainError(t, 0.0, 0.0);
    }
    double lo = c.curve.left.t, hi = c.curve.right.t;
    double slack = 1e-12 * (1 + std::abs(t));
    if (t < lo - slack || t > hi + slack) throw OutOfDomainError(t, lo, hi);
    t = std::clamp(t, lo, hi);

    const auto& ss = c.samples;
    auto it = std::lower_bound(ss.begin(), ss.end(), t,
                               [](const LiftedSample& a, double tv) { return a.t < tv; });
    if (it == ss.end()) return ss.back().point;
    if (it->t == t) return it->point;
    if (it == ss.begin()) return ss.front().point;
    const LiftedSample& s1 = *it;
    const LiftedSample& s0 = *(it - 1);
    double h = s1.t - s0.t;
    double th = (t - s0.t) / h;
    double h00 = (1 + 2 * th) * sq(1 - th);
    double h10 = th * sq(1 - th);
    double h01 = sq(th) * (3 - 2 * th);
    double h11 = sq(th) * (th - 1);
    Vec p(s0.point.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        p[i] = h00 * s0.point[i] + h10 * h * s0.tangent[i] + h01 * s1.point[i] +
               h11 * h * s1.tangent[i];
    return p;
}

// e^{tX}(x0) via the maximal curve.
inline Vec flow_map(const GlobalDerivation& X, const Vec& x0, double t, const FlowSettings& st) {
    LiftedCurve c = maximal_curve(X, x0, st);
    return curve_eval(c, t);
}

// |e^{sX}(e^{tX}(x0)) - e^{(s+t)X}(x0)|
inline double local_group_residual(const GlobalDerivation& X, const Vec& x0, double s_par,
                                   double t_par, const FlowSettings& st) {
    Vec inner = flow_map(X, x0, t_par, st);
    Vec lhs = flow_map(X, inner, s_par, st);
    Vec rhs = flow_map(X, x0, s_par + t_par, st);
    return dist2(lhs, rhs);
}

// ---------------------------------------------------------------------------
// Numerical verifiers

struct UniquenessReport {
    DomainKind kind_coarse = DomainKind::Interval;
    DomainKind kind_refined = DomainKind::Interval;
    bool kinds_match = true;
    double sup_distance = 0;      // over the common domain, at coarse sample times
    double left_endpoint_diff = 0;
    double right_endpoint_diff = 0;
};

// Refinement-agreement surrogate for global uniqueness: the same curve
// recomputed at tolerances/100 must coincide.
inline UniquenessReport uniqueness_probe(const GlobalDerivation& X, const Vec& x0,
                                         const FlowSettings& st, double forward_budget = -1.0,
                                         double backward_budget = -1.0) {
    LiftedCurve coarse = maximal_curve(X, x0, st, forward_budget, backward_budget);
    LiftedCurve fine = maximal_curve(X, x0, st.refined(), forward_budget, backward_budget);
    UniquenessReport rep;
    rep.kind_coarse = coarse.curve.domain_kind;
    rep.kind_refined = fine.curve.domain_kind;
    rep.kinds_match = rep.kind_coarse == rep.kind_refined;
    if (!rep.kinds_match) {
        rep.sup_distance = std::numeric_limits<double>::infinity();
        return rep;
    }
    if (rep.kind_coarse == DomainKind::Point) return rep;

    rep.left_endpoint_diff = std::abs(coarse.curve.left.t - fine.curve.left.t);
    rep.right_endpoint_diff = std::abs(coarse.curve.right.t - fine.curve.right.t);
    double lo = std::max(coarse.curve.left.t, fine.curve.left.t);
    double hi = std::min(coarse.curve.right.t, fine.curve.right.t);
    for (const LiftedSample& smp : coarse.samples) {
        if (smp.t < lo || smp.t > hi) continue;
        rep.sup_distance = std::max(rep.sup_distance, dist2(smp.point, curve_eval(fine, smp.t)));
    }
    return rep;
}

// max over interior samples of |d/dt f(c(t)) - X(f)(c(t))| with a
// three-point nonuniform finite difference on the stored samples.
inline double ode_residual(const GlobalDerivation& X, const LiftedCurve& c,
                           const SmoothFunction& f, const FlowSettings& st) {
    check_same_space(X.space, f.space);
    if (c.curve.domain_kind == DomainKind::Point)
        throw PreconditionError("ode_residual needs an interval curve");
    SmoothFunction Xf = apply(X, f);
    double worst = 0;
    for (const CurveSegment& seg : c.curve.segments) {
        for (std::size_t i = 1; i + 1 < seg.samples.size(); ++i) {
            const auto& [t0, p0] = seg.samples[i - 1];
            const auto& [t1, p1] = seg.samples[i];
            const auto& [t2, p2] = seg.samples[i + 1];
            double w0 = (t1 - t2) / ((t0 - t1) * (t0 - t2));
            double w1 = (2 * t1 - t0 - t2) / ((t1 - t0) * (t1 - t2));
            double w2 = (t1 - t0) / ((t2 - t0) * (t2 - t1));
            double dfdt =
                w0 * eval(f.ambient, p0) + w1 * eval(f.ambient, p1) + w2 * eval(f.ambient, p2);
            double rhs = eval(Xf.ambient, p1);
            worst = std::max(worst, std::abs(dfdt - rhs));
        }
    }
    (void)st;
    return worst;
}

// ---------------------------------------------------------------------------
// Trajectory CSV

// Header `t,x1,...,xn,v1,...,vn,segment,extension_id`, one row per stored
// sample, strictly increasing in t, followed by a `# end=...` comment
// block with the termination metadata.
inline std::string trajectory_csv(const LiftedCurve& c) {
    std::string out = "t";
    int n = c.space->ambient_dim;
    for (int i = 1; i <= n; ++i) out += ",x" + std::to_string(i);
    for (int i = 1; i <= n; ++i) out += ",v" + std::to_string(i);
    out += ",segment,extension_id\n";
    for (const LiftedSample& s : c.samples) {
        out += format_double(s.t);
        for (double x : s.point) out += "," + format_double(x);
        for (double v : s.tangent) out += "," + format_double(v);
        out += "," + std::to_string(s.segment) + "," + std::to_string(s.extension_id) + "\n";
    }
    auto end_line = [](const char* side, const DomainEnd& e) {
        std::string line = std::string("# end=") + side + " t=" + format_double(e.t) +
                           " closed=" + (e.closed ? "1" : "0") +
                           " termination=" + to_string(e.termination) +
                           " restarts=" + std::to_string(e.restarts) +
                           " handoffs=" + std::to_string(e.handoffs) + "\n";
        return line;
    };
    out += "# domain_kind=" + to_string(c.curve.domain_kind) + "\n";
    out += end_line("left", c.curve.left);
    out += end_line("right", c.curve.right);
    out += "# max_onspace_residual=" + format_double(c.max_onspace_residual) + "\n";
    return out;
}

} // namespace subflow
