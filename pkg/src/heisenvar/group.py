"""Closed-form arithmetic on the Heisenberg group H^n.

Points are ``(x, y, t)`` with ``x, y`` in R^n and ``t`` real.  The group law is

    (x, y, t) o (x', y', t') = (x + x', y + y', t + t' + 2<y, x'> - 2<x, y'>)

and the anisotropic dilations are ``delta_lam(x, y, t) = (lam x, lam y, lam^2 t)``.

Everything here is grid independent.  The ``*_arrays`` helpers are vectorised
versions for n = 1, where ``x, y, t`` are broadcastable numpy arrays; the
discretisation modules use them to move whole lattices at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

__all__ = [
    "GroupParams",
    "GroupPoint",
    "compose",
    "inverse",
    "dilate",
    "left_translate",
    "gauge",
    "scaled_translate",
    "compose_arrays",
    "gauge_arrays",
    "scaled_translate_arrays",
    "koranyi_distance_arrays",
]


@dataclass(frozen=True)
class GroupParams:
    """Dimension data of H^n: homogeneous dimension and critical exponent."""

    n: int = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")

    @property
    def Q(self) -> int:
        return 2 * self.n + 2

    @property
    def crit_exp_exact(self) -> Fraction:
        return Fraction(2 * self.Q, self.Q - 2)

    @property
    def crit_exp(self) -> float:
        return float(self.crit_exp_exact)

    @property
    def bubble_exponent(self) -> float:
        """(Q - 2) / 2, the power of lambda in the energy-invariant rescaling."""
        return (self.Q - 2) / 2


@dataclass(frozen=True)
class GroupPoint:
    x: tuple
    y: tuple
    t: float

    def __init__(self, x, y, t):
        xs = tuple(float(v) for v in np.atleast_1d(x))
        ys = tuple(float(v) for v in np.atleast_1d(y))
        if len(xs) != len(ys) or len(xs) == 0:
            raise ValueError(f"x and y must have the same positive length, got {len(xs)} and {len(ys)}")
        tt = float(t)
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys)) and np.isfinite(tt)):
            raise ValueError("GroupPoint coordinates must be finite")
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "y", ys)
        object.__setattr__(self, "t", tt)

    @classmethod
    def identity(cls, n: int = 1) -> "GroupPoint":
        return cls([0.0] * n, [0.0] * n, 0.0)

    @classmethod
    def from_xyt(cls, x: float, y: float, t: float) -> "GroupPoint":
        """Shorthand for n = 1 points."""
        return cls([x], [y], t)

    @property
    def n(self) -> int:
        return len(self.x)

    def as_tuple(self) -> tuple:
        return (*self.x, *self.y, self.t)

    def __iter__(self):
        return iter(self.as_tuple())

    def __repr__(self):
        if self.n == 1:
            return f"GroupPoint({self.x[0]!r}, {self.y[0]!r}, {self.t!r})"
        return f"GroupPoint(x={self.x!r}, y={self.y!r}, t={self.t!r})"


def _check_same_n(a: GroupPoint, b: GroupPoint) -> None:
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: H^{a.n} vs H^{b.n}")


def compose(a: GroupPoint, b: GroupPoint) -> GroupPoint:
    _check_same_n(a, b)
    ax, ay, bx, by = (np.asarray(v) for v in (a.x, a.y, b.x, b.y))
    t = a.t + b.t + 2.0 * float(ay @ bx) - 2.0 * float(ax @ by)
    return GroupPoint(ax + bx, ay + by, t)


def inverse(a: GroupPoint) -> GroupPoint:
    # The bilinear term vanishes on (v, -v), so negation is the inverse.
    return GroupPoint([-v for v in a.x], [-v for v in a.y], -a.t)


def dilate(lam: float, a: GroupPoint) -> GroupPoint:
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam!r}")
    return GroupPoint([lam * v for v in a.x], [lam * v for v in a.y], lam * lam * a.t)


def left_translate(xi0: GroupPoint, xi: GroupPoint) -> GroupPoint:
    return compose(xi0, xi)


def gauge(a: GroupPoint) -> float:
    """Koranyi gauge (|z|^4 + t^2)^(1/4)."""
    z2 = sum(v * v for v in a.x) + sum(v * v for v in a.y)
    return float((z2 * z2 + a.t * a.t) ** 0.25)


def scaled_translate(lam: float, xi0: GroupPoint, xi: GroupPoint) -> GroupPoint:
    """delta_{1/lam}(xi0^{-1} o xi): the coordinates in which a bubble at (lam, xi0) is U."""
    if not lam > 0:
        raise ValueError(f"scale must be positive, got {lam!r}")
    return dilate(1.0 / lam, compose(inverse(xi0), xi))


# -- vectorised n = 1 versions -------------------------------------------------

def compose_arrays(x1, y1, t1, x2, y2, t2):
    return x1 + x2, y1 + y2, t1 + t2 + 2.0 * (y1 * x2 - x1 * y2)


def gauge_arrays(x, y, t):
    z2 = x * x + y * y
    return (z2 * z2 + t * t) ** 0.25


def scaled_translate_arrays(lam: float, center: GroupPoint, x, y, t):
    """Vectorised ``scaled_translate`` for n = 1."""
    if not lam > 0:
        raise ValueError(f"scale must be positive, got {lam!r}")
    if center.n != 1:
        raise ValueError("array helpers are for n = 1")
    x0, y0, t0 = center.x[0], center.y[0], center.t
    u, v, s = compose_arrays(-x0, -y0, -t0, x, y, t)
    return u / lam, v / lam, s / (lam * lam)


def koranyi_distance_arrays(center: GroupPoint, x, y, t):
    """|center^{-1} o xi| for arrays of points xi (n = 1)."""
    return gauge_arrays(*scaled_translate_arrays(1.0, center, x, y, t))
