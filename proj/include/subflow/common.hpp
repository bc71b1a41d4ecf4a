#pragma once

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace subflow {

using Vec = std::vector<double>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed expression source; offset is a 0-based byte position.
struct ParseError : Error {
    std::size_t offset;
    ParseError(std::size_t off, const std::string& msg)
        : Error(msg + " (at offset " + std::to_string(off) + ")"), offset(off) {}
};

// Dimension disagreement between expressions, points, spaces or maps.
struct ArityError : Error {
    using Error::Error;
};

// Evaluation outside a primitive's domain (log/sqrt of non-positive
// values, vanishing divisor, non-integer power of a non-positive base).
struct EvalError : Error {
    using Error::Error;
};

// Violated runtime precondition (off-space point, parameter outside a
// curve's domain). The CLI maps these to exit code 3.
struct PreconditionError : Error {
    using Error::Error;
};

// Deterministic uniform source. mt19937_64 output is fixed by the
// standard; the double extraction avoids the implementation-defined
// std::uniform_real_distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

private:
    std::mt19937_64 gen_;
};

// Shortest representation that round-trips through parsing.
inline std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

inline double sq(double x) { return x * x; }

inline double norm2(const Vec& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dist2(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += sq(a[i] - b[i]);
    return std::sqrt(s);
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace subflow
