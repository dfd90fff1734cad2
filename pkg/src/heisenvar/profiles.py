"""Profile decomposition of field sequences and Global Compactness splitting checks.

Rescaling convention: the pull-back of ``u`` by ``(lam, xi0)`` is

    lam^{(Q-2)/2} u(xi0 o delta_lam(eta)),

so a bubble at ``(lam, xi0)`` pulls back to the canonical extremal.  The push-forward
``lam^{-(Q-2)/2} v(delta_{1/lam}(xi0^{-1} o xi))`` is the same map with
``(1/lam, delta_{1/lam}(xi0^{-1}))``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .bubbles import dE_residual, energy_E_lambda, energy_E_star
from .errors import ValidationError
from .extremals import BubbleSpec, bubble_arrays
from .grid import DomainMask, Field, Grid
from .group import GroupPoint, compose, dilate, gauge, inverse, scaled_translate_arrays
from .hdiff import dirichlet_energy

__all__ = [
    "ProfileEntry",
    "ProfileSet",
    "SplittingReport",
    "rescale_field",
    "push_forward",
    "reference_grid",
    "estimate_scale_center",
    "fit_bubble",
    "extract_profiles",
    "separation_metric",
    "splitting_report",
    "SPLIT_COLUMNS",
]

log = logging.getLogger(__name__)

SPLIT_COLUMNS = ("k", "norm_total", "norm_base", "norm_profiles_sum", "norm_defect", "e_lambda_total",
                 "e_lambda_base", "e_star_sum", "energy_defect", "ps_residual")

_EXP = 1.0  # (Q - 2) / 2 for n = 1; equals Q / 2* as well


def _sample(u: Field, x, y, t, order: int = 3):
    """Spline interpolation of the zero-extended field at arbitrary points."""
    key = ("spline", order)
    coeffs = u.mask.cache.get(key)
    if coeffs is None or coeffs[0] is not u.values:
        coeffs = (u.values, ndimage.spline_filter(u.values, order=order, mode="grid-constant")
                  if order > 1 else u.values)
        u.mask.cache[key] = coeffs
    idx = [(c - lo) / h for c, (lo, _), h in zip(np.broadcast_arrays(x, y, t), u.grid.bounds, u.grid.spacing)]
    shape = idx[0].shape
    out = ndimage.map_coordinates(coeffs[1], [i.ravel() for i in idx], order=order, mode="grid-constant",
                                  cval=0.0, prefilter=False)
    return out.reshape(shape)


def rescale_field(u: Field, lam: float, xi0: GroupPoint, target_grid: Grid,
                  target_mask: DomainMask | None = None) -> Field:
    """Sample lam^{(Q-2)/2} u(xi0 o delta_lam(eta)) at the target nodes (cubic spline interpolation)."""
    if not lam > 0:
        raise ValidationError("scale must be positive")
    mask = target_mask or DomainMask.full(target_grid)
    if mask.grid != target_grid:
        raise ValidationError("target mask belongs to another grid")
    E, F, S = target_grid.mesh
    x0, y0, t0 = xi0.x[0], xi0.y[0], xi0.t
    a, b, s = lam * E, lam * F, lam * lam * S
    xs, ys, ts = x0 + a, y0 + b, t0 + s + 2.0 * (y0 * a - x0 * b)
    vals = lam**_EXP * _sample(u, xs, ys, ts)
    return Field(mask, vals)


def push_forward(v: Field, lam: float, xi0: GroupPoint, target_grid: Grid,
                 target_mask: DomainMask | None = None) -> Field:
    """Inverse of ``rescale_field``: lam^{-(Q-2)/2} v(delta_{1/lam}(xi0^{-1} o xi))."""
    return rescale_field(v, 1.0 / lam, dilate(1.0 / lam, inverse(xi0)), target_grid, target_mask)


def reference_grid(source: Grid, lam: float, xi0: GroupPoint) -> Grid:
    """Grid in pulled-back coordinates covering the image of ``source`` with matched spacing."""
    corners = np.array([(x, y, t) for x in source.bounds[0] for y in source.bounds[1] for t in source.bounds[2]])
    e, f, s = scaled_translate_arrays(lam, xi0, corners[:, 0], corners[:, 1], corners[:, 2])
    hx, hy, ht = source.spacing
    h = (hx / lam, hy / lam, ht / lam**2)
    bounds, res = [], []
    for c, hh in zip((e, f, s), h):
        lo = np.floor(c.min() / hh) * hh
        hi = np.ceil(c.max() / hh) * hh
        bounds.append((lo, hi))
        res.append(int(round((hi - lo) / hh)) + 1)
    return Grid(bounds, res)


# -- scale and centre estimation ---------------------------------------------------------

def estimate_scale_center(u: Field, u_max_ref: float = 1.0):
    """Sup-norm inversion: centre at argmax |u|, lam = (U_max_ref / |u(centre)|)^{2/(Q-2)}."""
    if not np.any(u.values):
        raise ValidationError("cannot estimate the scale of the zero field")
    idx = u.argmax_abs()
    peak = abs(float(u.values[idx]))
    return (u_max_ref / peak) ** (1.0 / _EXP), u.grid.node(idx)


def fit_bubble(u: Field, lam: float, center: GroupPoint, window: float = 3.0, max_nodes: int = 60000,
               exclude=()):
    """Least-squares fit of amp * lam^{-1} U(delta_{1/lam}(xi0^{-1} o xi)) near ``center``.

    Uses mask nodes within Koranyi distance ``window * lam`` of the start centre
    (all mask nodes if that covers the domain).  ``exclude`` lists fitted bubbles
    whose values are subtracted first.  Returns ``(lam, center, amplitude, rel_misfit)``.
    """
    X, Y, T = u.grid.mesh
    vals = np.array(u.values, copy=True)
    for spec in exclude:
        vals = vals - bubble_arrays(spec, X, Y, T) * u.mask.inside
    d = np.broadcast_to(gauge_to(center, X, Y, T), u.grid.shape)
    sel = u.mask.inside & (d < max(window * lam, 3 * max(u.grid.spacing)))
    idx = np.flatnonzero(sel)
    if idx.size > max_nodes:
        idx = idx[:: int(np.ceil(idx.size / max_nodes))]
    Xf, Yf, Tf = (np.broadcast_to(a, u.grid.shape).ravel()[idx] for a in (X, Y, T))
    target = vals.ravel()[idx]
    scale = np.abs(target).max() or 1.0
    amp0 = float(np.sign(vals[u.grid.nearest_index(center)]) or 1.0)
    hx = u.grid.spacing

    def model(p):
        lam_, x0, y0, t0, amp = np.exp(p[0]), p[1] * hx[0], p[2] * hx[1], p[3] * hx[2], p[4]
        return bubble_arrays(BubbleSpec(lam_, GroupPoint.from_xyt(x0, y0, t0), amp), Xf, Yf, Tf)

    p0 = np.array([np.log(lam), center.x[0] / hx[0], center.y[0] / hx[1], center.t / hx[2], amp0])
    sol = optimize.least_squares(lambda p: (model(p) - target) / scale, p0, method="trf", x_scale="jac",
                                 xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=400)
    lam_f = float(np.exp(sol.x[0]))
    c_f = GroupPoint.from_xyt(sol.x[1] * hx[0], sol.x[2] * hx[1], sol.x[3] * hx[2])
    misfit = float(np.linalg.norm(model(sol.x) - target) / np.linalg.norm(target))
    return lam_f, c_f, float(sol.x[4]), misfit


def gauge_to(center: GroupPoint, X, Y, T):
    return _gauge(*scaled_translate_arrays(1.0, center, X, Y, T))


def _gauge(x, y, t):
    z2 = x * x + y * y
    return (z2 * z2 + t * t) ** 0.25


# -- extraction --------------------------------------------------------------------

@dataclass
class ProfileEntry:
    scales: list
    centers: list
    amplitudes: list
    profile: Field
    lam: float
    center: GroupPoint
    amplitude: float
    misfit: float = 0.0

    @property
    def norm_sq(self) -> float:
        return dirichlet_energy(self.profile)

    @property
    def e_star(self) -> float:
        return energy_E_star(self.profile)

    def spec(self) -> BubbleSpec:
        return BubbleSpec(self.lam, self.center, self.amplitude)


@dataclass
class ProfileSet:
    entries: list
    remainder: list
    l2star_remainder: list
    initial_l2star: float = 0.0
    stalled: bool = False
    ks: list = field(default_factory=list)
    model_residual: float = 0.0

    def __len__(self):
        return len(self.entries)

    def separation_matrix(self, k: int = -1) -> np.ndarray:
        n = len(self.entries)
        m = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i != j:
                    m[i, j] = separation_metric(self.entries[i], self.entries[j], k)
        return m

    def as_dict(self):
        return {
            "n_profiles": len(self.entries),
            "stalled": self.stalled,
            "initial_l2star": self.initial_l2star,
            "l2star_remainder": list(self.l2star_remainder),
            "profiles": [
                {"scale": e.lam, "center": list(e.center), "amplitude": e.amplitude, "misfit": e.misfit,
                 "norm_sq": e.norm_sq, "e_star": e.e_star,
                 "scales_per_k": list(e.scales), "centers_per_k": [list(c) for c in e.centers]}
                for e in self.entries
            ],
            "separation_matrix": self.separation_matrix().tolist() if self.entries else [],
        }


def _l4(values, hv):
    return float((np.sum(values**4) * hv) ** 0.25)


def _detect(u: Field, j_max: int, stop_tol: float, window: float, fit_tol: float, track_tol: float):
    """Greedy model extraction: peak, closed-form fit, subtraction; then a joint refit.

    A candidate is accepted when its fit misfit is at most ``fit_tol`` and the
    fitted bubble carries at least ``stop_tol`` of the starting L^{2*} norm on the
    mask; the loop ends at the first rejected candidate.
    """
    hv = u.grid.cell_volume
    X, Y, T = u.grid.mesh
    start = _l4(u.values, hv)
    r = np.array(u.values, copy=True)
    specs = []
    stalled = False
    while len(specs) < j_max and start > 0 and _l4(r, hv) > stop_tol * start:
        rf = Field(u.mask, r)
        lam0, c0 = estimate_scale_center(rf)
        lam, c, amp, mis = fit_bubble(rf, lam0, c0, window)
        spec = BubbleSpec(lam, c, amp)
        b = bubble_arrays(spec, X, Y, T) * u.mask.inside
        if mis > fit_tol or _l4(b, hv) < stop_tol * start:
            break
        r_new = r - b
        if _l4(r_new, hv) >= _l4(r, hv):
            stalled = True
            break
        specs.append(spec)
        r = r_new
    crowded = any(_overlap(a, b, window) for i, a in enumerate(specs) for b in specs[:i])
    if crowded:
        for _ in range(3):
            for j in range(len(specs)):
                others = specs[:j] + specs[j + 1:]
                lam, c, amp, _ = fit_bubble(u, specs[j].lam, specs[j].center, window, exclude=others)
                specs[j] = BubbleSpec(lam, c, amp)
    else:
        # well separated bubbles are refined locally on the field itself
        specs = [_track_step(u, specs, j, window, track_tol) for j in range(len(specs))]
    return specs, stalled, _l4(r, hv) / start if start > 0 else 0.0


def _overlap(a: BubbleSpec, b: BubbleSpec, window: float) -> bool:
    return gauge(compose(inverse(a.center), b.center)) < window * (a.lam + b.lam)


def _responsibilities(specs, grid):
    """Smooth partition of unity weighting each node by the squared fitted bubbles."""
    X, Y, T = grid.mesh
    b2 = np.array([np.broadcast_to(bubble_arrays(s, X, Y, T), grid.shape) ** 2 for s in specs])
    return b2 / np.maximum(b2.sum(axis=0), np.finfo(float).tiny)


def extract_profiles(sequence, max_profiles: int = 8, stop_tol: float = 0.05, base: Field | None = None,
                     window: float = 3.0, fit_tol: float = 0.2, track_tol: float = 1e-6) -> ProfileSet:
    """Profile decomposition of the last element, with per-k parameter tracking.

    Bubbles are located greedily (sup-norm start, closed-form fit, subtraction)
    until the L^{2*} norm of what is left is below ``stop_tol`` times the start or
    the next candidate is not bubble shaped (misfit above ``fit_tol``).
    Each profile is the pull-back, onto a reference grid, of the last element
    weighted by a smooth partition of unity built from the fitted bubbles.  The
    remainder per k is ``u_k - base - sum_j push_forward(profile_j)`` at that k's
    parameters.
    """
    seq = list(sequence)
    if len(seq) < 3:
        raise ValidationError("extract_profiles needs at least three sequence elements")
    if any(not s.mask.same_as(seq[0].mask) for s in seq):
        raise ValidationError("sequence fields must share grid and mask")
    grid, mask = seq[0].grid, seq[0].mask
    hv = grid.cell_volume
    base_v = base.values if base is not None else np.zeros(grid.shape)
    last = Field(mask, seq[-1].values - base_v)
    if not np.any(last.values):
        zero = [Field.zeros(mask) for _ in seq]
        return ProfileSet([], zero, [0.0] * len(seq), 0.0, False, list(range(len(seq))))
    specs, stalled, model_res = _detect(last, max_profiles, stop_tol, window, fit_tol, track_tol)
    if not specs:
        return ProfileSet([], [Field(mask, s.values - base_v) for s in seq],
                          [_l4(s.values - base_v, hv) for s in seq], _l4(last.values, hv), stalled,
                          list(range(len(seq))))
    weights = _responsibilities(specs, grid)
    # per-k tracking, walking back from the last element
    tracks = [[None] * len(seq) for _ in specs]
    for j, sp_ in enumerate(specs):
        tracks[j][-1] = sp_
    for k in range(len(seq) - 2, -1, -1):
        uk = Field(mask, seq[k].values - base_v)
        cur = [tracks[j][k + 1] for j in range(len(specs))]
        tracks_k = [_track_step(uk, cur, j, window, track_tol) for j in range(len(specs))]
        for j in range(len(specs)):
            tracks[j][k] = tracks_k[j]
    entries = []
    for j, s in enumerate(specs):
        ref = reference_grid(grid, s.lam, s.center)
        prof = rescale_field(Field(mask, last.values * weights[j]), s.lam, s.center, ref)
        entries.append(ProfileEntry([t.lam for t in tracks[j]], [t.center for t in tracks[j]],
                                    [t.amplitude for t in tracks[j]], prof, s.lam, s.center, s.amplitude))
    remainder, l4 = [], []
    for k, uk in enumerate(seq):
        r = uk.values - base_v
        for j, e in enumerate(entries):
            r = r - push_forward(e.profile, tracks[j][k].lam, tracks[j][k].center, grid, mask).values
        remainder.append(Field(mask, r))
        l4.append(_l4(r, hv))
    return ProfileSet(entries, remainder, l4, _l4(last.values, hv), stalled, list(range(len(seq))), model_res)


def _track_step(u: Field, cur, j: int, window: float, track_tol: float) -> BubbleSpec:
    """Parameters of bubble ``j`` on ``u`` given its parameters on the next element.

    The centre is the peak of |u| near the previous centre (up to half the
    distance to the nearest other bubble), the scale comes from sup-norm
    inversion with the previous amplitude.  A local fit refines both; its window
    shrinks until the misfit is at most ``track_tol`` and the fit is dropped if
    that never happens (e.g. when only a cut-off core of the bubble is present).
    """
    X, Y, T = u.grid.mesh
    h = max(u.grid.spacing)
    prev = cur[j]
    others = cur[:j] + cur[j + 1:]
    d = np.broadcast_to(gauge_to(prev.center, X, Y, T), u.grid.shape)
    reach = min([0.5 * gauge(compose(inverse(o.center), prev.center)) for o in others], default=np.inf)
    near = u.mask.inside & (d < reach)
    if not near.any():
        return prev
    vals = np.where(near, np.abs(u.values), -np.inf)
    idx = np.unravel_index(int(np.argmax(vals)), u.grid.shape)
    peak = float(u.values[idx])
    if peak == 0.0:
        return prev
    lam0 = abs(prev.amplitude) / abs(peak)
    c0 = u.grid.node(idx)
    amp0 = float(np.copysign(abs(prev.amplitude), peak))
    radius = min(window * lam0, reach)
    while radius >= 3 * h:
        lam, c, amp, mis = fit_bubble(u, lam0, c0, radius / lam0)
        if mis <= track_tol:
            return BubbleSpec(lam, c, amp)
        radius /= 2
    return BubbleSpec(lam0, c0, amp0)


def separation_metric(entry_i, entry_j, k: int = -1) -> float:
    """|log(lam_i / lam_j)| + |delta_{1/lam_j}(xi_j^{-1} o xi_i)| at index k."""
    li, lj = _scale_at(entry_i, k), _scale_at(entry_j, k)
    ci, cj = _center_at(entry_i, k), _center_at(entry_j, k)
    return abs(np.log(li / lj)) + gauge(dilate(1.0 / lj, compose(inverse(cj), ci)))


def _scale_at(e, k):
    return e.scales[k] if hasattr(e, "scales") else e[0]


def _center_at(e, k):
    return e.centers[k] if hasattr(e, "centers") else e[1]


# -- splitting report --------------------------------------------------------------

@dataclass
class SplittingReport:
    rows: list
    separation: list
    bound: float = 0.0

    def column(self, name):
        i = SPLIT_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)

    def relative_norm_defect(self):
        return np.abs(self.column("norm_defect")) / self.column("norm_total")

    def relative_energy_defect(self):
        return np.abs(self.column("energy_defect")) / np.abs(self.column("e_lambda_total"))

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for h in header_lines:
            buf.write(f"# {h}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SPLIT_COLUMNS)
        for r in self.rows:
            w.writerow([str(int(r[0]))] + [format(float(v), ".17g") for v in r[1:]])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": list(SPLIT_COLUMNS), "rows": [list(map(float, r)) for r in self.rows],
                           "separation": self.separation, "energy_bound": self.bound}, indent=2)


def splitting_report(sequence, base: Field | None, profiles: ProfileSet, lambda_param: float,
                     ks=None, residual_tol: float = 1e-6) -> SplittingReport:
    """Tabulate the norm and energy splitting defects and the PS residual per k."""
    seq = list(sequence)
    ks = list(ks) if ks is not None else list(range(len(seq)))
    nb = dirichlet_energy(base) if base is not None else 0.0
    eb = energy_E_lambda(base, lambda_param) if base is not None else 0.0
    nprof = sum(e.norm_sq for e in profiles.entries)
    eprof = sum(e.e_star for e in profiles.entries)
    rows = []
    for k, u in zip(ks, seq):
        nt = dirichlet_energy(u)
        et = energy_E_lambda(u, lambda_param)
        res = dE_residual(u, lambda_param, dual=True, tol=residual_tol)
        rows.append((k, nt, nb, nprof, nt - nb - nprof, et, eb, eprof, et - eb - eprof, res.dual))
    sep = [profiles.separation_matrix(i).tolist() for i in range(len(seq))] if profiles.entries else []
    return SplittingReport(rows, sep, max(r[1] for r in rows))
