"""Graham-scan convex hull on plain ``(x, y)`` tuples.

Orientation tests run on exact rationals (floats convert to
:class:`~fractions.Fraction` without loss), so collinear and duplicate
points are decided exactly and the hull is the same on every platform.
"""

from __future__ import annotations

from fractions import Fraction
from functools import cmp_to_key
from typing import Iterable, Sequence

__all__ = ["cross", "graham_scan", "upper_left_chain"]

Point = tuple[float, float]


def cross(o, a, b):
    """z-component of (a - o) x (b - o); > 0 for a left turn."""
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _dist2(a, b):
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


def graham_scan(points: Iterable[Point]) -> list[Point]:
    """Hull vertices in counter-clockwise order, starting at the lowest
    (then leftmost) point. Collinear boundary points are dropped; only the
    extremes of each edge are kept.
    """
    exact: dict[tuple[Fraction, Fraction], Point] = {}
    for x, y in points:
        exact.setdefault((Fraction(x), Fraction(y)), (x, y))
    pts = list(exact)
    if len(pts) <= 1:
        return [exact[p] for p in pts]

    pivot = min(pts, key=lambda p: (p[1], p[0]))
    rest = [p for p in pts if p != pivot]

    def by_angle(a, b):
        turn = cross(pivot, a, b)
        if turn > 0:
            return -1
        if turn < 0:
            return 1
        return -1 if _dist2(pivot, a) < _dist2(pivot, b) else 1

    rest.sort(key=cmp_to_key(by_angle))

    # keep only the farthest point along each ray from the pivot
    rays: list[tuple[Fraction, Fraction]] = []
    for p in rest:
        if rays and cross(pivot, rays[-1], p) == 0:
            rays[-1] = p
        else:
            rays.append(p)

    stack = [pivot, rays[0]]
    for p in rays[1:]:
        while len(stack) >= 2 and cross(stack[-2], stack[-1], p) <= 0:
            stack.pop()
        stack.append(p)
    return [exact[p] for p in stack]


def upper_left_chain(points: Sequence[Point]) -> list[Point]:
    """The hull chain from (0, 0) to (1, 1) on the upper-left side.

    Both anchors are added to the input. The result is sorted by x (ties by
    y) and is the ROC convex hull when all points lie in the unit square.
    """
    hull = graham_scan(list(points) + [(0.0, 0.0), (1.0, 1.0)])
    # counter-clockwise from the pivot (0, 0): the lower-right chain runs up
    # to (1, 1), everything after it is the upper-left chain
    start = next(i for i, p in enumerate(hull) if p[0] == 1.0 and p[1] == 1.0)
    chain = hull[start:] + [hull[0]]
    chain.reverse()
    return chain
