"""Discrete Radon measures: energy densities, atoms, the space X and the limit functionals.

A measure is an absolutely continuous nodal density (integrated with the
rectangle rule), a finite list of weighted atoms, and a scalar standing in for
any non-atomic singular mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .grid import DomainMask, Field, Grid, quadrature_lp
from .group import GroupPoint, koranyi_distance_arrays
from .hdiff import energy_density_array

__all__ = [
    "Atom",
    "EnergyMeasure",
    "XPair",
    "ConcReport",
    "CCAVerdict",
    "energy_density",
    "power_density",
    "ball_mass",
    "detect_atoms",
    "F_eps",
    "gamma_limit_F",
    "sstar_bound_check",
    "cca_check",
    "test_bank",
    "weak_star_pairings",
    "field_pairings",
    "concentration_report",
]

TEST_BANK_SEED = 20240917
TEST_BANK_VERSION = 1


@dataclass(frozen=True)
class Atom:
    weight: float
    location: GroupPoint

    def __post_init__(self):
        if not self.weight > 0:
            raise ValidationError(f"atom weight must be positive, got {self.weight}")


@dataclass(frozen=True)
class EnergyMeasure:
    density: Field
    atoms: tuple = ()
    residual_mass: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple(self.atoms))
        if self.residual_mass < 0:
            raise ValidationError("residual mass must be nonnegative")
        if np.any(self.density.values < 0):
            raise ValidationError("density must be nonnegative")
        for a in self.atoms:
            if not self.density.grid.contains(a.location):
                raise ValidationError(f"atom at {a.location} lies outside the box")

    @property
    def grid(self) -> Grid:
        return self.density.grid

    @property
    def density_mass(self) -> float:
        return float(self.density.values.sum() * self.grid.cell_volume)

    @property
    def atom_mass(self) -> float:
        return float(sum(a.weight for a in self.atoms))

    @property
    def total_mass(self) -> float:
        return self.density_mass + self.atom_mass + self.residual_mass

    def scaled(self, c: float) -> "EnergyMeasure":
        if c < 0:
            raise ValidationError("measures scale by nonnegative factors")
        atoms = tuple(Atom(c * a.weight, a.location) for a in self.atoms) if c > 0 else ()
        return EnergyMeasure(self.density.scaled(c), atoms, c * self.residual_mass)

    def plus_density(self, extra: Field) -> "EnergyMeasure":
        return EnergyMeasure(Field(self.density.mask, self.density.values + extra.values), self.atoms,
                             self.residual_mass)


def _closure(mask: DomainMask) -> DomainMask:
    if mask.support:
        return mask
    if "closure" not in mask.cache:
        mask.cache["closure"] = mask.closure()
    return mask.cache["closure"]


def energy_density(u: Field) -> EnergyMeasure:
    """|D_H u|^2 dxi as a measure; its density lives on the mask plus one node layer."""
    e = energy_density_array(u.values, u.grid)
    return EnergyMeasure(Field(_closure(u.mask), e))


def power_density(u: Field, p: float) -> EnergyMeasure:
    """|u|^p dxi as a measure."""
    return EnergyMeasure(Field(u.mask, np.abs(u.values) ** p))


# -- ball masses and atom detection ------------------------------------------------

def _ball_block(grid: Grid, c: GroupPoint, rho: float):
    """Index slices of a box containing the Koranyi ball B_rho(c)."""
    x0, y0, t0 = c.x[0], c.y[0], c.t
    (bx, by, bt) = grid.bounds
    hx, hy, ht = grid.spacing
    xs = (max(bx[0], x0 - rho), min(bx[1], x0 + rho))
    ys = (max(by[0], y0 - rho), min(by[1], y0 + rho))
    corners = [2 * y0 * x - 2 * x0 * y for x in xs for y in ys]
    ts = (t0 + min(corners) - rho * rho, t0 + max(corners) + rho * rho)

    def sl(lo, hi, b, h, n):
        i0 = max(0, int(np.floor((lo - b[0]) / h)))
        i1 = min(n, int(np.ceil((hi - b[0]) / h)) + 1)
        return slice(i0, max(i0, i1))

    return tuple(sl(lo, hi, b, h, n) for (lo, hi), b, h, n in
                 zip((xs, ys, ts), (bx, by, bt), (hx, hy, ht), grid.shape))


def _ball_indicator(grid: Grid, c: GroupPoint, rho: float):
    blk = _ball_block(grid, c, rho)
    x, y, t = (a[s] for a, s in zip(grid.axes, blk))
    d = koranyi_distance_arrays(c, x[:, None, None], y[None, :, None], t[None, None, :])
    return blk, d < rho


def ball_mass(values: np.ndarray, grid: Grid, c: GroupPoint, rho: float) -> float:
    blk, ind = _ball_indicator(grid, c, rho)
    return float(np.sum(values[blk] * ind) * grid.cell_volume)


def _ball_stats(values, grid, c, rho):
    blk, ind = _ball_indicator(grid, c, rho)
    w = values[blk] * ind
    m = float(w.sum())
    if m <= 0:
        return 0.0, c
    x, y, t = (a[s] for a, s in zip(grid.axes, blk))
    bx = float(np.sum(w.sum(axis=(1, 2)) * x) / m)
    by = float(np.sum(w.sum(axis=(0, 2)) * y) / m)
    bt = float(np.sum(w.sum(axis=(0, 1)) * t) / m)
    return m * grid.cell_volume, GroupPoint.from_xyt(bx, by, bt)


def _candidates(values: np.ndarray, grid: Grid, count: int):
    peaks = (values == ndimage.maximum_filter(values, size=3, mode="constant")) & (values > 0)
    idx = np.flatnonzero(peaks)
    if idx.size == 0:
        return []
    order = idx[np.argsort(values.ravel()[idx])[::-1][:count]]
    return [grid.node(np.unravel_index(i, grid.shape)) for i in order]


def _best_ball(values, grid, rho, count=12, shifts=8):
    """Heaviest Koranyi ball of radius rho, found from density peaks refined by mean shift."""
    best = (0.0, None)
    for c in _candidates(values, grid, count):
        m, b = _ball_stats(values, grid, c, rho)
        for _ in range(shifts):
            m2, b2 = _ball_stats(values, grid, b, rho)
            if m2 < m * (1 - 1e-12):
                break
            moved = abs(b2.x[0] - b.x[0]) + abs(b2.y[0] - b.y[0]) + abs(b2.t - b.t)
            c, m, b = b, m2, b2
            if moved < 1e-3 * min(grid.spacing):
                break
        if m > best[0]:
            best = (m, c)
    return best


def detect_atoms(m: EnergyMeasure, rho: float | None = None, theta: float = 0.25,
                 max_atoms: int = 16, relative: bool = False) -> EnergyMeasure:
    """Greedily turn heavy Koranyi balls of the density into atoms.

    Each accepted ball (mass >= theta, or theta times the total mass when
    ``relative``) becomes an atom at its density barycentre and is cleared from
    the density.  Default radius is four times the largest grid spacing.
    """
    grid = m.grid
    rho = 4 * max(grid.spacing) if rho is None else float(rho)
    if not rho > 0 or not 0 < theta < 1:
        raise ValidationError("need rho > 0 and 0 < theta < 1")
    thresh = theta * (m.total_mass if relative else 1.0)
    dens = np.array(m.density.values, copy=True)
    atoms = list(m.atoms)
    for _ in range(max_atoms):
        mass, c = _best_ball(dens, grid, rho)
        if c is None or mass < thresh or mass <= 0:
            break
        blk, ind = _ball_indicator(grid, c, rho)
        sub = dens[blk]
        removed = sub * ind
        mass = float(removed.sum() * grid.cell_volume)
        loc = _ball_stats(dens, grid, c, rho)[1]
        sub[ind] = 0.0
        atoms.append(Atom(mass, loc))
    return EnergyMeasure(Field(m.density.mask, dens), atoms, m.residual_mass)


# -- functionals on X --------------------------------------------------------------

def F_eps(u: Field, eps: float, crit_exp: float = 4.0) -> float:
    if not 0 <= eps < crit_exp - 2:
        raise ValidationError(f"eps must lie in [0, {crit_exp - 2})")
    return quadrature_lp(u, crit_exp - eps)


@dataclass(frozen=True)
class XPair:
    """A pair (u, mu) with mu >= |D_H u|^2 and total mass at most one."""

    u: Field
    mu: EnergyMeasure
    slack: float = 1e-10

    def __post_init__(self):
        e = energy_density_array(self.u.values, self.u.grid)
        if self.mu.grid != self.u.grid:
            raise ValidationError("u and mu live on different grids")
        scale = max(1.0, float(e.max()))
        if np.any(self.mu.density.values < e - self.slack * scale):
            raise ValidationError("mu density does not dominate |D_H u|^2")
        if self.mu.total_mass > 1 + self.slack:
            raise ValidationError(f"total mass {self.mu.total_mass} exceeds 1")

    @classmethod
    def from_field(cls, u: Field) -> "XPair":
        return cls(u, energy_density(u))

    @property
    def mass(self) -> float:
        return self.mu.total_mass


def gamma_limit_F(p: XPair, s_star: float, crit_exp: float = 4.0) -> float:
    """int |u|^{2*} + s_star * sum_j mu_j^{2*/2}."""
    if not isinstance(p, XPair):
        raise ValidationError("gamma_limit_F expects an XPair")
    return quadrature_lp(p.u, crit_exp) + s_star * sum(a.weight ** (crit_exp / 2) for a in p.mu.atoms)


class BoundViolation(ValidationError):
    pass


def sstar_bound_check(p: XPair, s_star: float, tol: float = 0.02, crit_exp: float = 4.0):
    """Check F(u, mu) <= s_star * mass^{2*/2} <= s_star (1 + tol); returns (value, margin)."""
    value = gamma_limit_F(p, s_star, crit_exp)
    bound = s_star * p.mass ** (crit_exp / 2)
    margin = bound * (1 + tol) - value
    if margin < 0 or bound > s_star * (1 + tol):
        raise BoundViolation(f"F = {value:.6g} exceeds s_star * mass^{crit_exp / 2:g} = {bound:.6g} beyond {tol:.0%}")
    return value, margin


# -- concentration-compactness check ---------------------------------------------------

@dataclass(frozen=True)
class CCAVerdict:
    location: GroupPoint
    mu: float
    nu: float
    bound: float
    ratio: float
    ok: bool
    paired: bool = True

    def as_dict(self):
        return {"location": list(self.location), "mu": self.mu, "nu": self.nu, "bound": self.bound,
                "ratio": self.ratio, "ok": self.ok, "paired": self.paired}


def cca_check(sequence, ball_radius: float, theta: float = 0.25, s_star: float | None = None,
              slack: float = 0.05, crit_exp: float = 4.0):
    """Pair energy atoms mu_j with L^{2*} atoms nu_j of the last field and test nu_j <= S* mu_j^{2*/2}.

    Both atom sets use the same ball radius; the nu threshold is taken relative to
    the total nu mass.  Unpaired atoms are reported with ``paired=False``.
    """
    seq = list(sequence)
    if len(seq) < 2:
        raise ValidationError("cca_check needs at least two fields")
    if any(not u.mask.same_as(seq[0].mask) for u in seq):
        raise ValidationError("sequence fields must share grid and mask")
    if s_star is None:
        from .extremals import estimate_Sstar

        s_star = estimate_Sstar().value
    u = seq[-1]
    mu = detect_atoms(energy_density(u), ball_radius, theta)
    nu_meas = power_density(u, crit_exp)
    nu = detect_atoms(nu_meas, ball_radius, theta, relative=True)
    out = []
    used = set()
    for a in mu.atoms:
        j = None
        if nu.atoms:
            d = [koranyi_distance_arrays(a.location, b.location.x[0], b.location.y[0], b.location.t)
                 for b in nu.atoms]
            j = int(np.argmin(d))
            if d[j] > ball_radius or j in used:
                j = None
        if j is None:
            nu_j = ball_mass(nu_meas.density.values, u.grid, a.location, ball_radius)
        else:
            used.add(j)
            nu_j = nu.atoms[j].weight
        bound = s_star * a.weight ** (crit_exp / 2)
        ratio = nu_j / bound
        out.append(CCAVerdict(a.location, a.weight, nu_j, bound, ratio, ratio <= 1 + slack, j is not None))
    for j, b in enumerate(nu.atoms):
        if j not in used:
            out.append(CCAVerdict(b.location, 0.0, b.weight, 0.0, np.inf, False, False))
    return out


# -- weak-star proxies ---------------------------------------------------------------

def _bank_specs():
    rng = np.random.default_rng(TEST_BANK_SEED)
    bumps = [("bump", tuple(rng.uniform(-0.6, 0.6, 3)), float(rng.uniform(0.35, 0.7))) for _ in range(8)]
    freqs = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)]
    return bumps + [("cos", f, None) for f in freqs]


def test_bank(grid: Grid) -> np.ndarray:
    """The fixed bank of 16 positive test functions, shape (16, Nx, Ny, Nt).

    Functions are defined on the box rescaled to [-1,1]^3: eight Gaussian bumps at
    seeded centres and the eight tensor products whose factors are either 1 or
    (1 + cos(pi s)) / 2.  All are positive inside the box.
    """
    key = ("bank", TEST_BANK_VERSION, grid)
    cached = _BANK_CACHE.get(key)
    if cached is not None:
        return cached
    s = [(a - (lo + hi) / 2) / ((hi - lo) / 2) for a, (lo, hi) in zip(grid.mesh, grid.bounds)]
    out = np.empty((16,) + grid.shape)
    for i, (kind, par, width) in enumerate(_bank_specs()):
        if kind == "bump":
            r2 = sum((si - ci) ** 2 for si, ci in zip(s, par))
            out[i] = np.exp(-r2 / (2 * width**2))
        else:
            f = np.ones(grid.shape)
            for si, k in zip(s, par):
                if k:
                    f = f * (1 + np.cos(np.pi * si)) / 2
            out[i] = f
    out.setflags(write=False)
    _BANK_CACHE.clear()
    _BANK_CACHE[key] = out
    return out


_BANK_CACHE: dict = {}


def _bank_at(grid: Grid, p: GroupPoint) -> np.ndarray:
    s = [(c - (lo + hi) / 2) / ((hi - lo) / 2) for c, (lo, hi) in zip((p.x[0], p.y[0], p.t), grid.bounds)]
    vals = []
    for kind, par, width in _bank_specs():
        if kind == "bump":
            vals.append(np.exp(-sum((si - ci) ** 2 for si, ci in zip(s, par)) / (2 * width**2)))
        else:
            f = 1.0
            for si, k in zip(s, par):
                f *= (1 + np.cos(np.pi * si)) / 2 if k else 1.0
            vals.append(f)
    return np.array(vals)


def weak_star_pairings(m: EnergyMeasure) -> np.ndarray:
    """<m, phi_i> over the fixed bank."""
    bank = test_bank(m.grid)
    out = np.tensordot(bank, m.density.values, axes=3) * m.grid.cell_volume
    for a in m.atoms:
        out = out + a.weight * _bank_at(m.grid, a.location)
    return out


def field_pairings(u: Field) -> np.ndarray:
    """int u phi_i over the bank (weak-convergence proxy for the fields themselves)."""
    return np.tensordot(test_bank(u.grid), u.values, axes=3) * u.grid.cell_volume


# -- concentration diagnostics ----------------------------------------------------------

@dataclass(frozen=True)
class ConcReport:
    peak: GroupPoint
    fractions: dict
    weak_pairings: np.ndarray
    boundary: bool = False
    total_energy: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {"peak": list(self.peak), "fractions": {repr(float(r)): f for r, f in self.fractions.items()},
                "weak_pairings": [float(v) for v in self.weak_pairings], "boundary": self.boundary,
                "total_energy": self.total_energy}


def concentration_report(u: Field, radii) -> ConcReport:
    """Energy fractions in Koranyi balls about the peak of |u|.

    The peak is the node maximising |u| (a bubble's energy density vanishes at its
    own centre, so the density argmax would sit on a ring around it).
    """
    if not np.any(u.values):
        raise ValidationError("concentration report of the zero field")
    dens = energy_density_array(u.values, u.grid)
    total = float(dens.sum())
    idx = u.argmax_abs()
    peak = u.grid.node(idx)
    d = koranyi_distance_arrays(peak, *u.grid.mesh)
    radii = sorted(float(r) for r in radii)
    fr = {}
    last = 0.0
    for r in radii:
        f = float(dens[d < r].sum() / total) if total > 0 else 0.0
        last = max(last, min(1.0, f))
        fr[r] = last
    depth = u.mask.edge_distance_nodes()[idx]
    m = EnergyMeasure(Field(_closure(u.mask), dens))
    return ConcReport(peak, fr, weak_star_pairings(m), boundary=bool(depth <= 2),
                      total_energy=total * u.grid.cell_volume)
