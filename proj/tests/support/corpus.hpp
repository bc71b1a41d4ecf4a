#pragma once

// The worked geometries used across the test suites: half-line, circle,
// axes cross, L-corner, and the trivial full plane/line.

#include "subflow/space.hpp"

namespace subflow::testing {

inline SpacePtr half_line() {
    static SpacePtr s = make_space(
        1, {ConstraintPiece{{}, {parse("x1", 1)}}}, {}, 1e-9,
        Box{{-2.0}, {2.0}}, "half-line");
    return s;
}

inline SpacePtr circle() {
    static SpacePtr s = make_space(
        2, {ConstraintPiece{{parse("x1*x1 + x2*x2 - 1", 2)}, {}}}, {}, 1e-9,
        Box{{-1.5, -1.5}, {1.5, 1.5}}, "circle");
    return s;
}

inline SpacePtr axes_cross() {
    static SpacePtr s = make_space(
        2, {ConstraintPiece{{parse("x1*x2", 2)}, {}}}, {}, 1e-9,
        Box{{-2.0, -2.0}, {2.0, 2.0}}, "axes-cross");
    return s;
}

// {x2 = 0, x1 <= 0} union {x1 = 0, x2 <= 0}
inline SpacePtr l_corner() {
    static SpacePtr s = make_space(
        2,
        {ConstraintPiece{{parse("x2", 2)}, {parse("-x1", 2)}},
         ConstraintPiece{{parse("x1", 2)}, {parse("-x2", 2)}}},
        {}, 1e-9, Box{{-2.0, -2.0}, {2.0, 2.0}}, "l-corner");
    return s;
}

inline SpacePtr plane() {
    static SpacePtr s = make_space(2, {ConstraintPiece{}}, {}, 1e-9,
                                   Box{{-2.0, -2.0}, {2.0, 2.0}}, "plane");
    return s;
}

inline SpacePtr line() {
    static SpacePtr s =
        make_space(1, {ConstraintPiece{}}, {}, 1e-9, Box{{-2.0}, {2.0}}, "line");
    return s;
}

} // namespace subflow::testing
