#pragma once

// Scalar expression language for smooth ambient functions on R^n.
//
// Grammar (EBNF, whitespace insignificant):
//
//   expr     = term { ("+" | "-") term } ;
//   term     = unary { ("*" | "/") unary } ;
//   unary    = "-" unary | power ;
//   power    = primary [ "^" unary ] ;          (* right associative *)
//   primary  = number | variable | name "(" expr ")" | "(" expr ")" ;
//   variable = "x" digit { digit } ;            (* x1 .. x99 *)
//   name     = "sin" | "cos" | "exp" | "log" | "sqrt" | "tanh" ;
//   number   = digit { digit } [ "." digit { digit } ]
//              [ ("e" | "E") [ "+" | "-" ] digit { digit } ] ;
//
// "^" binds tighter than unary minus (-x1^2 is -(x1^2)) and its exponent
// must be a constant sub-expression; it is folded to a literal at parse
// time. Every primitive is smooth on its domain, so every parsable
// expression is C-infinity where it is defined. First partials are exact
// (dual-number forward mode, no truncation error). Derivative nodes
// created by differentiate() evaluate through nested dual passes; they
// are not part of the surface grammar.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "subflow/common.hpp"

namespace subflow {

enum class NodeKind { Literal, Variable, Add, Sub, Mul, Div, PowConst, Neg, Call, Diff };
enum class Func { Sin, Cos, Exp, Log, Sqrt, Tanh };

inline constexpr double kDivisorFloor = 1e-300;

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
    NodeKind kind = NodeKind::Literal;
    double literal = 0.0; // Literal value; PowConst exponent
    int index = 0;        // Variable index or Diff direction, 1-based
    Func func = Func::Sin;
    NodePtr lhs, rhs;
};

// A parsed formula over x1..x_arity. Immutable; sub-trees are shared
// freely between expressions.
struct ScalarExpr {
    NodePtr root;
    int arity = 0;
};

namespace ast {

inline NodePtr lit(double v) {
    Node n;
    n.literal = v;
    return std::make_shared<Node>(std::move(n));
}
inline NodePtr var(int i) {
    Node n;
    n.kind = NodeKind::Variable;
    n.index = i;
    return std::make_shared<Node>(std::move(n));
}
inline NodePtr binary(NodeKind k, NodePtr a, NodePtr b) {
    Node n;
    n.kind = k;
    n.lhs = std::move(a);
    n.rhs = std::move(b);
    return std::make_shared<Node>(std::move(n));
}
inline NodePtr add(NodePtr a, NodePtr b) { return binary(NodeKind::Add, std::move(a), std::move(b)); }
inline NodePtr sub(NodePtr a, NodePtr b) { return binary(NodeKind::Sub, std::move(a), std::move(b)); }
inline NodePtr mul(NodePtr a, NodePtr b) { return binary(NodeKind::Mul, std::move(a), std::move(b)); }
inline NodePtr div(NodePtr a, NodePtr b) { return binary(NodeKind::Div, std::move(a), std::move(b)); }
inline NodePtr neg(NodePtr a) {
    Node n;
    n.kind = NodeKind::Neg;
    n.lhs = std::move(a);
    return std::make_shared<Node>(std::move(n));
}
inline NodePtr pow_const(NodePtr base, double expo) {
    Node n;
    n.kind = NodeKind::PowConst;
    n.literal = expo;
    n.lhs = std::move(base);
    return std::make_shared<Node>(std::move(n));
}
inline NodePtr call(Func f, NodePtr a) {
    Node n;
    n.kind = NodeKind::Call;
    n.func = f;
    n.lhs = std::move(a);
    return std::make_shared<Node>(std::move(n));
}
inline NodePtr diff(NodePtr a, int i) {
    Node n;
    n.kind = NodeKind::Diff;
    n.index = i;
    n.lhs = std::move(a);
    return std::make_shared<Node>(std::move(n));
}

} // namespace ast

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

struct Lexer {
    std::string_view src;
    std::size_t pos = 0;

    void skip_ws() {
        while (pos < src.size() && (src[pos] == ' ' || src[pos] == '\t' ||
                                    src[pos] == '\n' || src[pos] == '\r'))
            ++pos;
    }
    bool eof() {
        skip_ws();
        return pos >= src.size();
    }
    char peek() {
        skip_ws();
        return pos < src.size() ? src[pos] : '\0';
    }
    bool consume(char c) {
        if (peek() == c) {
            ++pos;
            return true;
        }
        return false;
    }
};

class Parser {
public:
    Parser(std::string_view src, int arity) : lex_{src}, arity_(arity) {}

    NodePtr parse() {
        NodePtr e = parse_expr();
        if (!lex_.eof())
            throw ParseError(lex_.pos, "unexpected trailing input");
        return e;
    }

private:
    Lexer lex_;
    int arity_;

    NodePtr parse_expr() {
        NodePtr e = parse_term();
        for (;;) {
            if (lex_.consume('+'))
                e = ast::add(std::move(e), parse_term());
            else if (lex_.consume('-'))
                e = ast::sub(std::move(e), parse_term());
            else
                return e;
        }
    }

    NodePtr parse_term() {
        NodePtr e = parse_unary();
        for (;;) {
            if (lex_.consume('*'))
                e = ast::mul(std::move(e), parse_unary());
            else if (lex_.consume('/'))
                e = ast::div(std::move(e), parse_unary());
            else
                return e;
        }
    }

    NodePtr parse_unary() {
        if (lex_.consume('-'))
            return ast::neg(parse_unary());
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_primary();
        if (lex_.consume('^')) {
            std::size_t expo_at = lex_.pos;
            NodePtr expo = parse_unary();
            if (!is_constant(*expo))
                throw ParseError(expo_at, "power exponent must be constant");
            double c = fold_constant(*expo);
            if (!std::isfinite(c))
                throw ParseError(expo_at, "power exponent does not fold to a finite value");
            base = ast::pow_const(std::move(base), c);
        }
        return base;
    }

    NodePtr parse_primary() {
        char c = lex_.peek();
        std::size_t at = lex_.pos;
        if (c == '(') {
            ++lex_.pos;
            NodePtr e = parse_expr();
            if (!lex_.consume(')'))
                throw ParseError(lex_.pos, "expected ')'");
            return e;
        }
        if (c >= '0' && c <= '9')
            return parse_number();
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'))
            return parse_name(at);
        throw ParseError(at, c == '\0' ? "unexpected end of input"
                                       : std::string("unexpected character '") + c + "'");
    }

    NodePtr parse_number() {
        std::size_t start = lex_.pos;
        auto digits = [&] {
            bool any = false;
            while (lex_.pos < lex_.src.size() && lex_.src[lex_.pos] >= '0' &&
                   lex_.src[lex_.pos] <= '9') {
                ++lex_.pos;
                any = true;
            }
            return any;
        };
        digits();
        if (lex_.pos < lex_.src.size() && lex_.src[lex_.pos] == '.') {
            ++lex_.pos;
            if (!digits())
                throw ParseError(lex_.pos, "expected digits after decimal point");
        }
        if (lex_.pos < lex_.src.size() &&
            (lex_.src[lex_.pos] == 'e' || lex_.src[lex_.pos] == 'E')) {
            ++lex_.pos;
            if (lex_.pos < lex_.src.size() &&
                (lex_.src[lex_.pos] == '+' || lex_.src[lex_.pos] == '-'))
                ++lex_.pos;
            if (!digits())
                throw ParseError(lex_.pos, "expected exponent digits");
        }
        double v = 0;
        auto sv = lex_.src.substr(start, lex_.pos - start);
        auto [p, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
        if (ec != std::errc{} || p != sv.data() + sv.size())
            throw ParseError(start, "malformed number");
        return ast::lit(v);
    }

    NodePtr parse_name(std::size_t at) {
        std::size_t start = lex_.pos;
        while (lex_.pos < lex_.src.size() &&
               ((lex_.src[lex_.pos] >= 'a' && lex_.src[lex_.pos] <= 'z') ||
                (lex_.src[lex_.pos] >= 'A' && lex_.src[lex_.pos] <= 'Z') ||
                (lex_.src[lex_.pos] >= '0' && lex_.src[lex_.pos] <= '9')))
            ++lex_.pos;
        std::string_view name = lex_.src.substr(start, lex_.pos - start);

        if (name.size() >= 2 && name[0] == 'x' && name[1] >= '0' && name[1] <= '9') {
            int idx = 0;
            for (char d : name.substr(1)) {
                if (d < '0' || d > '9')
                    throw ParseError(at, "malformed variable '" + std::string(name) + "'");
                idx = idx * 10 + (d - '0');
            }
            if (idx < 1 || idx > 99)
                throw ParseError(at, "variable index out of range: " + std::string(name));
            if (idx > arity_)
                throw ParseError(at, "variable x" + std::to_string(idx) +
                                         " exceeds arity " + std::to_string(arity_));
            return ast::var(idx);
        }

        Func f;
        if (name == "sin") f = Func::Sin;
        else if (name == "cos") f = Func::Cos;
        else if (name == "exp") f = Func::Exp;
        else if (name == "log") f = Func::Log;
        else if (name == "sqrt") f = Func::Sqrt;
        else if (name == "tanh") f = Func::Tanh;
        else throw ParseError(at, "unknown function '" + std::string(name) + "'");

        if (!lex_.consume('('))
            throw ParseError(lex_.pos, "expected '(' after function name");
        NodePtr arg = parse_expr();
        if (!lex_.consume(')'))
            throw ParseError(lex_.pos, "expected ')'");
        return ast::call(f, std::move(arg));
    }

    static bool is_constant(const Node& n) {
        switch (n.kind) {
        case NodeKind::Literal: return true;
        case NodeKind::Variable:
        case NodeKind::Diff: return false;
        case NodeKind::Neg:
        case NodeKind::Call:
        case NodeKind::PowConst: return is_constant(*n.lhs);
        default: return is_constant(*n.lhs) && is_constant(*n.rhs);
        }
    }

    static double fold_constant(const Node& n);
};

} // namespace detail

inline ScalarExpr parse(std::string_view source, int arity) {
    if (arity < 1)
        throw ArityError("expression arity must be positive");
    detail::Parser p(source, arity);
    return ScalarExpr{p.parse(), arity};
}

// ---------------------------------------------------------------------------
// Generic dual arithmetic.
//
// DualN<T> carries a value and its partials with respect to the seed
// directions of one differentiation pass. An empty partials vector means
// identically zero. Nesting DualN<DualN<...>> realizes higher derivatives
// as nested first-derivative passes; the depth is bounded at compile time.

template <class T>
struct DualN {
    using value_type = T;
    T v{};
    std::vector<T> d;
};

template <class T>
inline constexpr int dual_depth_v = 0;
template <class T>
inline constexpr int dual_depth_v<DualN<T>> = dual_depth_v<T> + 1;

inline constexpr int kMaxDualDepth = 6;

inline double scalar_value(double x) { return x; }
template <class T>
double scalar_value(const DualN<T>& x) { return scalar_value(x.v); }

template <class T>
T num_const(double c) {
    if constexpr (std::is_same_v<T, double>) {
        return c;
    } else {
        return T{num_const<typename T::value_type>(c), {}};
    }
}

namespace detail {

// c1*d1 + c2*d2 over the "empty means zero" convention.
template <class T>
std::vector<T> dcomb(const T& c1, const std::vector<T>& d1, const T& c2,
                     const std::vector<T>& d2) {
    if (d1.empty() && d2.empty()) return {};
    std::vector<T> out(std::max(d1.size(), d2.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (i < d1.size() && i < d2.size())
            out[i] = c1 * d1[i] + c2 * d2[i];
        else if (i < d1.size())
            out[i] = c1 * d1[i];
        else
            out[i] = c2 * d2[i];
    }
    return out;
}

template <class T>
std::vector<T> dscale(const T& c, const std::vector<T>& d) {
    std::vector<T> out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = c * d[i];
    return out;
}

template <class T>
std::vector<T> dlincomb1(const std::vector<T>& a, const std::vector<T>& b, bool subtract) {
    if (a.empty() && b.empty()) return {};
    std::vector<T> out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        T av = i < a.size() ? a[i] : T{};
        T bv = i < b.size() ? b[i] : T{};
        out[i] = subtract ? av - bv : av + bv;
    }
    return out;
}

} // namespace detail

template <class T>
DualN<T> operator+(const DualN<T>& a, const DualN<T>& b) {
    return {a.v + b.v, detail::dlincomb1(a.d, b.d, false)};
}
template <class T>
DualN<T> operator-(const DualN<T>& a, const DualN<T>& b) {
    return {a.v - b.v, detail::dlincomb1(a.d, b.d, true)};
}
template <class T>
DualN<T> operator-(const DualN<T>& a) {
    std::vector<T> d(a.d.size());
    for (std::size_t i = 0; i < a.d.size(); ++i) d[i] = -a.d[i];
    return {-a.v, std::move(d)};
}
template <class T>
DualN<T> operator*(const DualN<T>& a, const DualN<T>& b) {
    return {a.v * b.v, detail::dcomb(b.v, a.d, a.v, b.d)};
}
template <class T>
DualN<T> operator/(const DualN<T>& a, const DualN<T>& b) {
    T q = a.v / b.v;
    T inv = num_const<T>(1.0) / b.v;
    return {q, detail::dcomb(inv, a.d, -(q * inv), b.d)};
}

inline double sf_sin(double x) { return std::sin(x); }
inline double sf_cos(double x) { return std::cos(x); }
inline double sf_exp(double x) { return std::exp(x); }
inline double sf_log(double x) { return std::log(x); }
inline double sf_sqrt(double x) { return std::sqrt(x); }
inline double sf_tanh(double x) { return std::tanh(x); }
inline double sf_pow(double x, double c) { return std::pow(x, c); }

template <class T>
DualN<T> sf_sin(const DualN<T>& a) {
    return {sf_sin(a.v), detail::dscale(sf_cos(a.v), a.d)};
}
template <class T>
DualN<T> sf_cos(const DualN<T>& a) {
    return {sf_cos(a.v), detail::dscale(-sf_sin(a.v), a.d)};
}
template <class T>
DualN<T> sf_exp(const DualN<T>& a) {
    T e = sf_exp(a.v);
    return {e, detail::dscale(e, a.d)};
}
template <class T>
DualN<T> sf_log(const DualN<T>& a) {
    return {sf_log(a.v), detail::dscale(num_const<T>(1.0) / a.v, a.d)};
}
template <class T>
DualN<T> sf_sqrt(const DualN<T>& a) {
    T s = sf_sqrt(a.v);
    return {s, detail::dscale(num_const<T>(0.5) / s, a.d)};
}
template <class T>
DualN<T> sf_tanh(const DualN<T>& a) {
    T t = sf_tanh(a.v);
    return {t, detail::dscale(num_const<T>(1.0) - t * t, a.d)};
}
template <class T>
DualN<T> sf_pow(const DualN<T>& a, double c) {
    if (c == 0.0) return num_const<DualN<T>>(1.0);
    if (c == 1.0) return a;
    T coeff = num_const<T>(c) * sf_pow(a.v, c - 1.0);
    return {sf_pow(a.v, c), detail::dscale(coeff, a.d)};
}

// ---------------------------------------------------------------------------
// Evaluation

std::string emit(const ScalarExpr& e);
namespace detail {
std::string emit_node(const Node& n);
}

namespace detail {

inline bool is_integer_exponent(double c) {
    return c == std::floor(c) && std::abs(c) <= 1e9;
}

[[noreturn]] inline void domain_error(const std::string& what, const Node& n) {
    throw EvalError(what + " in sub-expression '" + emit_node(n) + "'");
}

template <class T>
T eval_node(const Node& n, std::span<const T> vars) {
    switch (n.kind) {
    case NodeKind::Literal:
        return num_const<T>(n.literal);
    case NodeKind::Variable:
        return vars[static_cast<std::size_t>(n.index - 1)];
    case NodeKind::Add:
        return eval_node<T>(*n.lhs, vars) + eval_node<T>(*n.rhs, vars);
    case NodeKind::Sub:
        return eval_node<T>(*n.lhs, vars) - eval_node<T>(*n.rhs, vars);
    case NodeKind::Mul:
        return eval_node<T>(*n.lhs, vars) * eval_node<T>(*n.rhs, vars);
    case NodeKind::Div: {
        T a = eval_node<T>(*n.lhs, vars);
        T b = eval_node<T>(*n.rhs, vars);
        if (std::abs(scalar_value(b)) < kDivisorFloor)
            domain_error("division by (near-)zero", n);
        return a / b;
    }
    case NodeKind::Neg:
        return -eval_node<T>(*n.lhs, vars);
    case NodeKind::PowConst: {
        T base = eval_node<T>(*n.lhs, vars);
        double bv = scalar_value(base);
        if (is_integer_exponent(n.literal)) {
            if (n.literal < 0 && std::abs(bv) < kDivisorFloor)
                domain_error("negative power of (near-)zero", n);
        } else if (bv <= 0.0) {
            domain_error("non-integer power of non-positive base", n);
        }
        return sf_pow(base, n.literal);
    }
    case NodeKind::Call: {
        T a = eval_node<T>(*n.lhs, vars);
        double av = scalar_value(a);
        switch (n.func) {
        case Func::Sin: return sf_sin(a);
        case Func::Cos: return sf_cos(a);
        case Func::Exp: return sf_exp(a);
        case Func::Log:
            if (av <= 0.0) domain_error("log of non-positive value", n);
            return sf_log(a);
        case Func::Sqrt:
            if (av <= 0.0) domain_error("sqrt of non-positive value", n);
            return sf_sqrt(a);
        case Func::Tanh: return sf_tanh(a);
        }
        domain_error("unknown function", n);
    }
    case NodeKind::Diff: {
        if constexpr (dual_depth_v<T> >= kMaxDualDepth) {
            throw EvalError("derivative nesting exceeds supported depth");
        } else {
            using D = DualN<T>;
            std::vector<D> dvars(vars.size());
            for (std::size_t i = 0; i < vars.size(); ++i) {
                dvars[i].v = vars[i];
                if (static_cast<int>(i) == n.index - 1)
                    dvars[i].d = {num_const<T>(1.0)};
            }
            D r = eval_node<D>(*n.lhs, std::span<const D>(dvars));
            return r.d.empty() ? T{} : r.d[0];
        }
    }
    }
    throw EvalError("corrupt expression node");
}

} // namespace detail

inline void check_point_arity(const ScalarExpr& e, std::span<const double> x) {
    if (static_cast<int>(x.size()) != e.arity)
        throw ArityError("point dimension " + std::to_string(x.size()) +
                         " does not match expression arity " + std::to_string(e.arity));
}

inline double eval(const ScalarExpr& e, std::span<const double> x) {
    check_point_arity(e, x);
    return detail::eval_node<double>(*e.root, x);
}

// Exact first partial via a single-direction dual pass.
inline double partial(const ScalarExpr& e, int i, std::span<const double> x) {
    check_point_arity(e, x);
    if (i < 1 || i > e.arity)
        throw ArityError("partial index " + std::to_string(i) + " out of range");
    std::vector<DualN<double>> vars(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        vars[k].v = x[k];
        if (static_cast<int>(k) == i - 1) vars[k].d = {1.0};
    }
    DualN<double> r =
        detail::eval_node<DualN<double>>(*e.root, std::span<const DualN<double>>(vars));
    return r.d.empty() ? 0.0 : r.d[0];
}

// All first partials in one dual pass seeded with the n coordinate directions.
inline Vec gradient(const ScalarExpr& e, std::span<const double> x) {
    check_point_arity(e, x);
    std::size_t n = x.size();
    std::vector<DualN<double>> vars(n);
    for (std::size_t k = 0; k < n; ++k) {
        vars[k].v = x[k];
        vars[k].d.assign(n, 0.0);
        vars[k].d[k] = 1.0;
    }
    DualN<double> r =
        detail::eval_node<DualN<double>>(*e.root, std::span<const DualN<double>>(vars));
    Vec g(n, 0.0);
    for (std::size_t k = 0; k < r.d.size(); ++k) g[k] = r.d[k];
    return g;
}

// ---------------------------------------------------------------------------
// Composition, derivative expressions, structural equality

namespace detail {

inline bool contains_diff(const Node& n) {
    if (n.kind == NodeKind::Diff) return true;
    if (n.lhs && contains_diff(*n.lhs)) return true;
    if (n.rhs && contains_diff(*n.rhs)) return true;
    return false;
}

inline NodePtr substitute(const NodePtr& n, const std::vector<NodePtr>& args) {
    switch (n->kind) {
    case NodeKind::Literal: return n;
    case NodeKind::Variable: return args[static_cast<std::size_t>(n->index - 1)];
    case NodeKind::Neg: return ast::neg(substitute(n->lhs, args));
    case NodeKind::PowConst: return ast::pow_const(substitute(n->lhs, args), n->literal);
    case NodeKind::Call: return ast::call(n->func, substitute(n->lhs, args));
    case NodeKind::Diff:
        throw EvalError("cannot compose through a derivative node");
    default:
        return ast::binary(n->kind, substitute(n->lhs, args), substitute(n->rhs, args));
    }
}

} // namespace detail

// F(f1,...,fk): substitutes the argument trees for F's variables.
inline ScalarExpr compose(const ScalarExpr& F, const std::vector<ScalarExpr>& args) {
    if (static_cast<int>(args.size()) != F.arity)
        throw ArityError("compose expects " + std::to_string(F.arity) + " arguments, got " +
                         std::to_string(args.size()));
    if (args.empty())
        throw ArityError("compose needs at least one argument");
    int n = args.front().arity;
    std::vector<NodePtr> roots;
    roots.reserve(args.size());
    for (const ScalarExpr& a : args) {
        if (a.arity != n)
            throw ArityError("compose arguments must share one ambient arity");
        roots.push_back(a.root);
    }
    if (detail::contains_diff(*F.root))
        throw EvalError("cannot compose through a derivative node");
    return ScalarExpr{detail::substitute(F.root, roots), n};
}

// d/dx_i of e as an expression; evaluation runs a nested dual pass.
inline ScalarExpr differentiate(const ScalarExpr& e, int i) {
    if (i < 1 || i > e.arity)
        throw ArityError("derivative index " + std::to_string(i) + " out of range");
    return ScalarExpr{ast::diff(e.root, i), e.arity};
}

inline bool structurally_equal(const Node& a, const Node& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
    case NodeKind::Literal: return a.literal == b.literal;
    case NodeKind::Variable: return a.index == b.index;
    case NodeKind::PowConst:
        return a.literal == b.literal && structurally_equal(*a.lhs, *b.lhs);
    case NodeKind::Neg: return structurally_equal(*a.lhs, *b.lhs);
    case NodeKind::Call: return a.func == b.func && structurally_equal(*a.lhs, *b.lhs);
    case NodeKind::Diff: return a.index == b.index && structurally_equal(*a.lhs, *b.lhs);
    default:
        return structurally_equal(*a.lhs, *b.lhs) && structurally_equal(*a.rhs, *b.rhs);
    }
}

inline bool structurally_equal(const ScalarExpr& a, const ScalarExpr& b) {
    return a.arity == b.arity && structurally_equal(*a.root, *b.root);
}

// ---------------------------------------------------------------------------
// Emission. Parenthesization preserves tree shape through re-parse.

namespace detail {

// Binding strength: additive 1, multiplicative 2, unary minus 3, power 4, atom 5.
inline int node_level(const Node& n) {
    switch (n.kind) {
    case NodeKind::Add:
    case NodeKind::Sub: return 1;
    case NodeKind::Mul:
    case NodeKind::Div: return 2;
    case NodeKind::Neg: return 3;
    case NodeKind::PowConst: return 4;
    default: return 5;
    }
}

inline void emit_rec(const Node& n, int ctx, std::string& out) {
    int lvl = node_level(n);
    bool paren = lvl < ctx;
    if (paren) out += '(';
    switch (n.kind) {
    case NodeKind::Literal:
        out += format_double(n.literal);
        break;
    case NodeKind::Variable:
        out += 'x';
        out += std::to_string(n.index);
        break;
    case NodeKind::Add:
        emit_rec(*n.lhs, 1, out);
        out += " + ";
        emit_rec(*n.rhs, 2, out);
        break;
    case NodeKind::Sub:
        emit_rec(*n.lhs, 1, out);
        out += " - ";
        emit_rec(*n.rhs, 2, out);
        break;
    case NodeKind::Mul:
        emit_rec(*n.lhs, 2, out);
        out += '*';
        emit_rec(*n.rhs, 3, out);
        break;
    case NodeKind::Div:
        emit_rec(*n.lhs, 2, out);
        out += '/';
        emit_rec(*n.rhs, 3, out);
        break;
    case NodeKind::Neg:
        out += '-';
        emit_rec(*n.lhs, 3, out);
        break;
    case NodeKind::PowConst: {
        emit_rec(*n.lhs, 5, out);
        out += '^';
        double c = n.literal;
        if (c < 0) {
            out += '-';
            out += format_double(-c);
        } else {
            out += format_double(c);
        }
        break;
    }
    case NodeKind::Call: {
        switch (n.func) {
        case Func::Sin: out += "sin"; break;
        case Func::Cos: out += "cos"; break;
        case Func::Exp: out += "exp"; break;
        case Func::Log: out += "log"; break;
        case Func::Sqrt: out += "sqrt"; break;
        case Func::Tanh: out += "tanh"; break;
        }
        out += '(';
        emit_rec(*n.lhs, 1, out);
        out += ')';
        break;
    }
    case NodeKind::Diff:
        // Not in the surface grammar; informational rendering only.
        out += "d/dx";
        out += std::to_string(n.index);
        out += '[';
        emit_rec(*n.lhs, 1, out);
        out += ']';
        break;
    }
    if (paren) out += ')';
}

inline std::string emit_node(const Node& n) {
    std::string out;
    emit_rec(n, 1, out);
    return out;
}

} // namespace detail

inline std::string emit(const ScalarExpr& e) { return detail::emit_node(*e.root); }

inline double detail::Parser::fold_constant(const Node& n) {
    return eval_node<double>(n, std::span<const double>{});
}

} // namespace subflow
