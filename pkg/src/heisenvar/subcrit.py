"""Subcritical Sobolev maximisation on masked domains.

For ``p = 2* - eps`` the problem ``S*_eps = sup { int |u|^p : int |D_H u|^2 <= 1 }``
is solved by the normalised fixed point

    u_{m+1} = w / sqrt(E(w)),   L w = |u_m|^(p-2) u_m,

whose fixed points satisfy ``L u = mult |u|^(p-2) u`` with ``mult = 1 / int |u|^p``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConvergenceError, ValidationError
from .extremals import BubbleSpec, bubble_field
from .grid import DomainMask, Field, Grid
from .group import GroupParams, GroupPoint
from .hdiff import default_cg_max_iter, solve_dofs, stiffness_matrix
from .measures import concentration_report

__all__ = [
    "SubcritConfig",
    "SolveReport",
    "SweepRow",
    "solve_subcritical",
    "epsilon_sweep",
    "sweep_csv",
    "eigen_oracle",
    "holder_bound",
    "SWEEP_COLUMNS",
]

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("epsilon", "s_eps", "el_residual", "multiplier", "iterations", "converged",
                 "peak_x", "peak_y", "peak_t", "conc_fraction_rho1", "conc_fraction_rho2")


@dataclass(frozen=True)
class SubcritConfig:
    """``init`` is ``"bubble"`` (uses ``init_lam``/``init_center``), ``"random"`` (uses ``seed``) or a Field."""

    epsilon: float
    fp_tol: float = 1e-7
    fp_max_iter: int = 2000
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None
    init: object = "bubble"
    init_lam: float = 0.3
    init_center: GroupPoint = field(default_factory=GroupPoint.identity)
    seed: int = 0
    preconditioner: str = "amg"
    crit_exp: float = GroupParams(1).crit_exp

    def __post_init__(self):
        if not 0 < self.epsilon < self.crit_exp - 2:
            raise ValidationError(f"epsilon must lie in (0, {self.crit_exp - 2:g}), got {self.epsilon!r}")
        if not (self.fp_tol > 0 and self.fp_max_iter > 0 and self.cg_tol > 0):
            raise ValidationError("tolerances and iteration caps must be positive")

    @property
    def p(self) -> float:
        return self.crit_exp - self.epsilon


@dataclass
class SolveReport:
    s_eps: float
    maximizer: Field
    multiplier: float
    el_residual: float
    iterations: int
    converged: bool
    epsilon: float
    history: list = field(default_factory=list)
    max_descent: float = 0.0
    fp_change: float = np.inf


def _energy(L, hv, x):
    return float(hv * (x @ (L @ x)))


def _initial(cfg: SubcritConfig, grid: Grid, mask: DomainMask) -> np.ndarray:
    if isinstance(cfg.init, Field):
        if not cfg.init.mask.same_as(mask):
            raise ValidationError("initial field lives on another mask")
        x = cfg.init.dofs()
    elif cfg.init == "bubble":
        x = bubble_field(BubbleSpec(cfg.init_lam, cfg.init_center), grid, mask).dofs()
    elif cfg.init == "random":
        x = np.random.default_rng(cfg.seed).uniform(0.0, 1.0, mask.count)
    else:
        raise ValidationError(f"unknown init {cfg.init!r}")
    if not np.any(x):
        raise ValidationError("initial guess vanishes on the mask")
    return x


def solve_subcritical(cfg: SubcritConfig, grid: Grid, mask: DomainMask) -> SolveReport:
    """Maximise int |u|^(2*-eps) at unit Dirichlet energy by normalised inverse iteration."""
    if mask.grid != grid:
        raise ValidationError("mask belongs to another grid")
    L = stiffness_matrix(mask)
    hv = grid.cell_volume
    p = cfg.p
    cg_max = cfg.cg_max_iter or default_cg_max_iter(mask.count)
    u = _initial(cfg, grid, mask)
    u = u / np.sqrt(_energy(L, hv, u))
    w = None
    obj = hv * float(np.sum(np.abs(u) ** p))
    history = [obj]
    max_descent = 0.0
    change = np.inf
    it = 0
    for it in range(1, cfg.fp_max_iter + 1):
        rhs = np.abs(u) ** (p - 2) * u
        w, _ = solve_dofs(mask, rhs, cfg.cg_tol, cg_max, w, cfg.preconditioner)
        un = w / np.sqrt(_energy(L, hv, w))
        change = float(np.linalg.norm(un - u) / np.linalg.norm(un))
        u = un
        new = hv * float(np.sum(np.abs(u) ** p))
        max_descent = max(max_descent, (obj - new) / obj)
        obj = new
        history.append(obj)
        if change <= cfg.fp_tol:
            break
    converged = change <= cfg.fp_tol
    mult = 1.0 / obj
    Lu = L @ u
    el = float(np.linalg.norm(Lu - mult * np.abs(u) ** (p - 2) * u) / np.linalg.norm(Lu))
    if u.sum() < 0:
        u = -u
    rep = SolveReport(obj, Field.from_dofs(mask, u), mult, el, it, converged, cfg.epsilon, history,
                      max_descent, change)
    if not converged:
        log.warning("fixed point stopped at eps=%g after %d iterations (change %.2e)", cfg.epsilon, it, change)
    return rep


def holder_bound(s_star: float, volume: float, eps: float, crit_exp: float = 4.0) -> float:
    """S*^{(2*-eps)/2*} |Omega|^{eps/2*}: the Holder upper bound for S*_eps."""
    return s_star ** ((crit_exp - eps) / crit_exp) * volume ** (eps / crit_exp)


@dataclass
class SweepRow:
    epsilon: float
    s_eps: float
    el_residual: float
    multiplier: float
    iterations: int
    converged: bool
    peak: GroupPoint
    fractions: tuple
    report: SolveReport | None = None
    error: str | None = None

    def csv_values(self):
        f = list(self.fractions) + [float("nan")] * (2 - len(self.fractions))
        return (self.epsilon, self.s_eps, self.el_residual, self.multiplier, self.iterations,
                int(self.converged), self.peak.x[0], self.peak.y[0], self.peak.t, f[0], f[1])


def epsilon_sweep(eps_list, grid: Grid, mask: DomainMask, warm_start: bool = True,
                  base: SubcritConfig | None = None, radii=None, keep_fields: bool = True):
    """Solve for each eps (descending), warm-starting from the previous maximiser.

    A warm-started solve that fails to converge is retried once from the bubble
    start.  Failed rows are flagged and the sweep continues.  ``radii`` are the two
    concentration radii; by default 1/8 and 1/4 of the box's Koranyi diameter.
    """
    eps = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValidationError("eps list must be strictly descending")
    base = base or SubcritConfig(epsilon=eps[0])
    if radii is None:
        d = grid.koranyi_diameter
        radii = (d / 8, d / 4)
    rows = []
    prev = None
    for e in eps:
        try:
            cfg = replace(base, epsilon=e, init=prev if (warm_start and prev is not None) else base.init)
            rep = solve_subcritical(cfg, grid, mask)
            if not rep.converged and cfg.init is not base.init:
                log.info("eps=%g: warm start stalled, retrying from bubble", e)
                rep = solve_subcritical(replace(cfg, init="bubble"), grid, mask)
            conc = concentration_report(rep.maximizer, radii)
            rows.append(SweepRow(e, rep.s_eps, rep.el_residual, rep.multiplier, rep.iterations, rep.converged,
                                 conc.peak, tuple(conc.fractions[float(r)] for r in sorted(radii)),
                                 rep if keep_fields else None))
            prev = rep.maximizer
        except (ConvergenceError, ValidationError) as exc:
            rows.append(SweepRow(e, float("nan"), float("nan"), float("nan"), 0, False,
                                 GroupPoint.identity(), (float("nan"), float("nan")), None, str(exc)))
    return rows


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def sweep_csv(rows, header_lines=()) -> str:
    buf = io.StringIO()
    for h in header_lines:
        buf.write(f"# {h}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(v) for v in r.csv_values()])
    return buf.getvalue()


def eigen_oracle(grid: Grid, mask: DomainMask, tol: float = 1e-8, max_iter: int = 5000,
                 preconditioner: str = "amg") -> float:
    """Smallest eigenvalue of L by inverse power iteration with inner CG solves."""
    L = stiffness_matrix(mask)
    x = np.ones(mask.count)
    x /= np.linalg.norm(x)
    lam = float(x @ (L @ x))
    y = None
    for _ in range(max_iter):
        y, _ = solve_dofs(mask, x, 1e-13, None, y, preconditioner)
        x = y / np.linalg.norm(y)
        new = float(x @ (L @ x))
        if abs(new - lam) <= 1e-2 * tol * new:
            res = np.linalg.norm(L @ x - new * x) / new
            if res <= np.sqrt(tol):
                return new
        lam = new
    raise ConvergenceError("inverse iteration did not converge", residual=abs(new - lam) / new, partial=lam)
