"""Jerison-Lee extremals, their bubble family and a quadrature estimate of S*.

The canonical extremal is ``U(x, y, t) = c0 ((1 + |z|^2)^2 + t^2)^(-(Q-2)/4)``
with ``c0 = 1``.  A bubble at scale ``lam`` and centre ``xi0`` is

    amplitude * lam^(-(Q-2)/2) * U(delta_{1/lam}(xi0^{-1} o xi)),

which has the same continuum Dirichlet energy for every ``(lam, xi0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConvergenceError, ValidationError
from .grid import DomainMask, Field, Grid
from .group import GroupParams, GroupPoint, scaled_translate_arrays
from .hdiff import dirichlet_energy, energy_density_array

__all__ = [
    "BubbleSpec",
    "SstarEstimate",
    "jerison_lee_value",
    "jerison_lee_arrays",
    "bubble_arrays",
    "bubble_field",
    "normalized_bubble",
    "estimate_Sstar",
    "exact_solution_amplitude",
]

_H1 = GroupParams(1)


@dataclass(frozen=True)
class BubbleSpec:
    lam: float
    center: GroupPoint = field(default_factory=GroupPoint.identity)
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"bubble scale must be positive, got {self.lam!r}")


def jerison_lee_value(xi: GroupPoint, params: GroupParams = _H1, c0: float = 1.0) -> float:
    if xi.n != params.n:
        raise ValueError(f"point lives in H^{xi.n}, params describe H^{params.n}")
    z2 = sum(v * v for v in xi.x) + sum(v * v for v in xi.y)
    return float(c0 * ((1.0 + z2) ** 2 + xi.t**2) ** (-(params.Q - 2) / 4))


def jerison_lee_arrays(x, y, t):
    """U for n = 1 on broadcastable arrays (c0 = 1)."""
    return ((1.0 + x * x + y * y) ** 2 + t * t) ** -0.5


def exact_solution_amplitude(params: GroupParams = _H1) -> float:
    """Multiple of U solving -Delta_H v = v^(2*-1) on the whole group: (2n)^n."""
    return float((2 * params.n) ** params.n)


def bubble_arrays(spec: BubbleSpec, x, y, t):
    """Closed-form bubble values at arbitrary arrays of points (n = 1)."""
    u, v, s = scaled_translate_arrays(spec.lam, spec.center, x, y, t)
    return spec.amplitude * spec.lam ** -_H1.bubble_exponent * jerison_lee_arrays(u, v, s)


def bubble_field(spec: BubbleSpec, grid: Grid, mask: DomainMask) -> Field:
    vals = bubble_arrays(spec, *grid.mesh)
    return Field(mask, np.broadcast_to(vals, grid.shape))


def normalized_bubble(spec: BubbleSpec, grid: Grid, mask: DomainMask) -> Field:
    """Bubble rescaled to unit discrete Dirichlet energy (the amplitude drops out)."""
    b = bubble_field(BubbleSpec(spec.lam, spec.center, 1.0), grid, mask)
    e = dirichlet_energy(b)
    if not e > 0:
        raise ValidationError("bubble has no energy on this mask")
    return b.scaled(1.0 / np.sqrt(e))


# -- S* estimate ------------------------------------------------------------------

@dataclass(frozen=True)
class SstarEstimate:
    value: float
    error: float
    resolutions: tuple
    quotients: tuple
    error_bars: tuple

    @property
    def shrink_factor(self) -> float:
        """Ratio of the last two error bars (about 4 for a second-order scheme)."""
        return self.error_bars[-2] / self.error_bars[-1]


def _line_integrals(a, lo, hi):
    """Integrals over s in [lo, hi] of (a^2 + s^2)^-2, in closed form."""
    def prim(s):
        return s / (2 * a * a * (a * a + s * s)) + np.arctan(s / a) / (2 * a**3)
    return prim(hi) - prim(lo)


def _region_integrals(xlim, ylim, tshift, tlim, order=64, panels=16):
    """Integrals of U^4 and |D_H U|^2 over {(x,y) in rect, t in tlim - tshift(x,y)} in U-coordinates.

    The t-integral is exact; the planar one is composite Gauss-Legendre.
    """
    gx, gw = np.polynomial.legendre.leggauss(order)

    def nodes(lo, hi):
        edges = np.linspace(lo, hi, panels + 1)
        a, b = edges[:-1, None], edges[1:, None]
        return ((a + b) / 2 + (b - a) / 2 * gx).ravel(), ((b - a) / 2 * gw).ravel()

    x, wx = nodes(*xlim)
    y, wy = nodes(*ylim)
    X, Y = np.meshgrid(x, y, indexing="ij")
    W = np.outer(wx, wy)
    r2 = X * X + Y * Y
    a = 1.0 + r2
    sh = tshift(X, Y)
    line = _line_integrals(a, tlim[0] - sh, tlim[1] - sh)
    return float(np.sum(W * line)), float(np.sum(W * 4.0 * r2 * line))


def _full_space_integrals():
    """Whole-group integrals of U^4 and |D_H U|^2 by radial quadrature."""
    def line(r):
        a = 1.0 + r * r
        return np.pi / (2.0 * a**3)

    i4, _ = integrate.quad(lambda r: 2 * np.pi * r * line(r), 0, np.inf, epsabs=1e-14, epsrel=1e-13)
    e, _ = integrate.quad(lambda r: 2 * np.pi * r * 4 * r * r * line(r), 0, np.inf, epsabs=1e-14, epsrel=1e-13)
    return i4, e


def _bubble_quotient(n: int, lam: float, center: GroupPoint, half_widths, full):
    """Tail-corrected discrete quotient int u^4 / (int |D_H u|^2)^2 at ``n`` nodes per axis."""
    x0, y0, t0 = center.x[0], center.y[0], center.t
    wx, wy, wt = half_widths
    grid = Grid([(x0 - lam * wx, x0 + lam * wx), (y0 - lam * wy, y0 + lam * wy),
                 (t0 - lam**2 * wt, t0 + lam**2 * wt)], (n, n, n))
    hx, hy, ht = grid.spacing
    # one ghost layer so edge differences see the true neighbours
    ghost = Grid([(lo - h, hi + h) for (lo, hi), h in zip(grid.bounds, grid.spacing)], (n + 2, n + 2, n + 2))
    spec = BubbleSpec(lam, center)
    b = np.broadcast_to(bubble_arrays(spec, *ghost.mesh), ghost.shape)
    e = energy_density_array(b, ghost)[1:-1, 1:-1, 1:-1]
    inner = b[1:-1, 1:-1, 1:-1]
    dv = grid.cell_volume
    i4_box = float(np.sum(inner**4) * dv)
    e_box = float(np.sum(e) * dv)
    # exact integrals over the cells covered by the nodes, in bubble coordinates
    (xa, xb), (ya, yb), (ta, tb) = [(lo - h / 2, hi + h / 2) for (lo, hi), h in zip(grid.bounds, grid.spacing)]

    def tshift(X, Y):
        # t-coordinate of xi0^{-1} o xi is t - t0 - 2 y0 x + 2 x0 y, rescaled by lam^-2
        xs, ys = x0 + lam * X, y0 + lam * Y
        return (t0 + 2 * y0 * xs - 2 * x0 * ys) / lam**2

    r_i4, r_e = _region_integrals(((xa - x0) / lam, (xb - x0) / lam), ((ya - y0) / lam, (yb - y0) / lam),
                                  tshift, (ta / lam**2, tb / lam**2))
    # the lam prefactor makes both integrals scale invariant
    i4 = i4_box + (full[0] - r_i4)
    en = e_box + (full[1] - r_e)
    return i4 / en**2


def estimate_Sstar(resolutions=(17, 33, 65), lam: float = 1.0, center: GroupPoint | None = None,
                   half_widths=(3.0, 3.0, 9.0), max_spread: float = 0.10) -> SstarEstimate:
    """Richardson-extrapolated S* from tail-corrected bubble quadrature on a resolution ladder.

    The box is ``center`` plus ``delta_lam`` of ``[-wx,wx] x [-wy,wy] x [-wt,wt]``.
    Consecutive resolutions must double the spacing, ``n_{k+1} - 1 = 2 (n_k - 1)``.
    """
    res = tuple(int(n) for n in resolutions)
    if len(res) < 2:
        raise ValueError("need at least two resolutions")
    for a, b in zip(res, res[1:]):
        if b - 1 != 2 * (a - 1):
            raise ValueError(f"resolutions must halve the spacing: {a} -> {b}")
    center = center or GroupPoint.identity()
    full = _full_space_integrals()
    q = tuple(_bubble_quotient(n, lam, center, half_widths, full) for n in res)
    bars = tuple(abs(b - a) for a, b in zip(q, q[1:]))
    value = q[-1] + (q[-1] - q[-2]) / 3.0
    err = bars[-1] / 3.0
    if bars[-1] > max_spread * abs(value):
        raise ConvergenceError(f"S* spread {bars[-1] / value:.2%} exceeds {max_spread:.0%}",
                               residual=bars[-1] / value, partial=value)
    return SstarEstimate(value, err, res, q, bars)
