"""Small 2D helpers shared across modules. Positions are metres, y-up."""
from __future__ import annotations

import math

Point = tuple[float, float]


def dist(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def unit(v: Point) -> Point:
    n = math.hypot(v[0], v[1])
    if n < 1e-12:
        return (0.0, 0.0)
    return (v[0] / n, v[1] / n)


def rotate(v: Point, radians: float) -> Point:
    c, s = math.cos(radians), math.sin(radians)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1])


def clamp(x: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, x))


def point_in_rect(p: Point, rect: tuple[float, float, float, float]) -> bool:
    x0, y0, x1, y1 = rect
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1
