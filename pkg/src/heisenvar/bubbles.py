"""Explicit concentrating sequences, recovery pairs and Palais-Smale sequences.

Single recovery bubbles are cut-off, energy-normalised bubbles ``phi * w_eps``;
glued sequences weight such bubbles by ``sqrt(mu_j)``; Palais-Smale sequences
superpose a base field and bubbles whose scales shrink geometrically in ``k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .extremals import BubbleSpec, bubble_arrays, exact_solution_amplitude
from .grid import DomainMask, Field, Grid, quadrature_lp
from .group import GroupPoint, gauge_arrays, koranyi_distance_arrays, scaled_translate_arrays
from .hdiff import dirichlet_energy, energy_density_array, solve_dofs, stiffness_action
from .measures import Atom, EnergyMeasure, XPair, _closure, test_bank

__all__ = [
    "psi_profile",
    "cutoff_arrays",
    "RecoverySpec",
    "BubbleTrack",
    "PSSpec",
    "EnergyReport",
    "ResidualReport",
    "recovery_single",
    "recovery_glued",
    "recovery_pair",
    "xn_approximation",
    "energy_E_lambda",
    "energy_E_star",
    "dE_residual",
    "synth_ps_sequence",
    "energy_report",
]

CRIT = 4.0


def psi_profile(s):
    """Radial cutoff: 1 on [0,1], (1 - (s-1)^2)^3 on [1,2], 0 beyond."""
    s = np.asarray(s, dtype=float)
    w = np.clip(s - 1.0, 0.0, 1.0)
    return (1.0 - w * w) ** 3


def cutoff_arrays(center: GroupPoint, rho: float, x, y, t):
    """psi(delta_{1/rho}(center^{-1} o xi)): 1 on B_rho(center), 0 outside B_{2 rho}(center)."""
    return psi_profile(gauge_arrays(*scaled_translate_arrays(rho, center, x, y, t)))


def _interior_center(mask: DomainMask, c: GroupPoint, margin: int = 1) -> GroupPoint:
    """``c`` itself if its nearest node is well inside the mask, else the nearest such node."""
    grid = mask.grid
    depth = mask.edge_distance_nodes()
    idx = grid.nearest_index(c)
    if depth[idx] > margin and grid.contains(c):
        return c
    ok = np.argwhere(depth > margin)
    if ok.size == 0:
        raise ValidationError("mask has no interior node to host a bubble")
    d = np.sum(((ok - np.array(idx)) * np.array(grid.spacing)) ** 2, axis=1)
    return grid.node(ok[int(np.argmin(d))])


def _cutoff_bubble_values(center, eps, rho, grid):
    X, Y, T = grid.mesh
    w = bubble_arrays(BubbleSpec(eps, center), X, Y, T)
    return np.broadcast_to(w * cutoff_arrays(center, rho, X, Y, T), grid.shape)


def recovery_single(xi_j: GroupPoint, eps: float, cutoff_rho: float, grid: Grid, mask: DomainMask) -> Field:
    """Normalised ``phi * w_eps``: the energy-one bubble concentrating at ``xi_j`` as eps -> 0."""
    if not eps > 0 or not cutoff_rho > 0:
        raise ValidationError("eps and cutoff radius must be positive")
    c = _interior_center(mask, xi_j)
    u = Field(mask, _cutoff_bubble_values(c, eps, cutoff_rho, grid))
    e = dirichlet_energy(u)
    if not e > 0:
        raise ValidationError("cut-off bubble has empty support on the mask")
    return u.scaled(1.0 / np.sqrt(e))


@dataclass(frozen=True)
class RecoverySpec:
    targets: tuple
    cutoff_rho: float
    eps_ladder: tuple = (0.2, 0.1, 0.05)
    background: Field | None = None
    singular_mass: float = 0.0

    def __post_init__(self):
        tg = tuple((float(w), c) for w, c in self.targets)
        object.__setattr__(self, "targets", tg)
        object.__setattr__(self, "eps_ladder", tuple(float(e) for e in self.eps_ladder))
        if any(not 0 < w <= 1 for w, _ in tg):
            raise ValidationError("target weights must lie in (0, 1]")
        if sum(w for w, _ in tg) >= 1:
            raise ValidationError("target weights must sum to less than 1")
        if not self.cutoff_rho > 0:
            raise ValidationError("cutoff radius must be positive")
        for i in range(len(tg)):
            for j in range(i):
                a, b = tg[i][1], tg[j][1]
                d = float(koranyi_distance_arrays(a, b.x[0], b.y[0], b.t))
                if d <= 4 * self.cutoff_rho:
                    raise ValidationError(f"centres {i} and {j} are {d:.3g} apart, need > 4 rho")
        if any(b >= a for a, b in zip(self.eps_ladder, self.eps_ladder[1:])):
            raise ValidationError("eps ladder must be descending")
        if self.singular_mass < 0:
            raise ValidationError("singular mass must be nonnegative")

    def check_grid(self, grid: Grid):
        if self.cutoff_rho < 2 * max(grid.spacing[:2]):
            raise ValidationError(f"cutoff radius {self.cutoff_rho} is below two grid spacings")


def _support(values: np.ndarray, mask: DomainMask) -> np.ndarray:
    """Nodes touched by the one-sided stencils of a field: its support plus one layer."""
    s = values != 0
    out = s.copy()
    for ax in range(3):
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[ax], sl_hi[ax] = slice(0, -1), slice(1, None)
        out[tuple(sl_lo)] |= s[tuple(sl_hi)]
        out[tuple(sl_hi)] |= s[tuple(sl_lo)]
    return out


def recovery_glued(spec: RecoverySpec, eps: float, grid: Grid, mask: DomainMask, rho: float | None = None) -> Field:
    """sum_j sqrt(mu_j) u_eps^(j); the components must have disjoint stencil supports."""
    spec.check_grid(grid)
    rho = spec.cutoff_rho if rho is None else rho
    parts = [recovery_single(c, eps, rho, grid, mask) for _, c in spec.targets]
    sup = [_support(p.values, mask) for p in parts]
    for i in range(len(sup)):
        for j in range(i):
            if np.any(sup[i] & sup[j]):
                raise ValidationError(f"supports of targets {i} and {j} overlap at eps={eps}")
    total = np.zeros(grid.shape)
    for (w, _), p in zip(spec.targets, parts):
        total += np.sqrt(w) * p.values
    return Field(mask, total)


def background_cutoff(spec: RecoverySpec, grid: Grid):
    """phi_rho = 1 - sum_j psi(delta_{1/rho}(xi_j^{-1} o .)), vanishing on each B_rho(xi_j)."""
    X, Y, T = grid.mesh
    phi = np.ones(grid.shape)
    for _, c in spec.targets:
        phi = phi - cutoff_arrays(c, spec.cutoff_rho, X, Y, T)
    return np.clip(phi, 0.0, 1.0)


def recovery_pair(spec: RecoverySpec, eps: float, grid: Grid, mask: DomainMask, bubble_fraction: float = 0.45) -> XPair:
    """(u phi_rho + u^(Sigma)_eps, mu_tilde + |D_H(...)|^2) with u the background.

    The glued bubbles use cutoff radius ``bubble_fraction * rho`` so that their
    support stays inside the balls where ``phi_rho`` vanishes.
    """
    spec.check_grid(grid)
    bg = spec.background if spec.background is not None else Field.zeros(mask)
    if not bg.mask.same_as(mask):
        raise ValidationError("background lives on another mask")
    ub = Field(mask, bg.values * background_cutoff(spec, grid))
    ug = recovery_glued(spec, eps, grid, mask, rho=bubble_fraction * spec.cutoff_rho)
    if np.any(_support(ub.values, mask) & _support(ug.values, mask)):
        raise ValidationError("background and glued bubbles overlap; shrink eps or bubble_fraction")
    u = ub + ug
    dens = Field(_closure(mask), energy_density_array(u.values, grid))
    mu = EnergyMeasure(dens, (), spec.singular_mass)
    if mu.total_mass > 1 + 1e-8:
        raise ValidationError(f"recovery pair has mass {mu.total_mass:.6g} > 1")
    return XPair(u, mu, slack=1e-8)


def xn_approximation(p: XPair, N: int, a_N: float) -> XPair:
    """(a_N u, a_N^2 mu) with the atom list truncated to the N heaviest atoms."""
    if not 0 < a_N < 1:
        raise ValidationError("a_N must lie in (0, 1)")
    if N < 0:
        raise ValidationError("N must be nonnegative")
    atoms = sorted(p.mu.atoms, key=lambda a: -a.weight)[:N]
    mu = EnergyMeasure(p.mu.density.scaled(a_N**2), tuple(Atom(a_N**2 * a.weight, a.location) for a in atoms),
                       a_N**2 * p.mu.residual_mass)
    return XPair(p.u.scaled(a_N), mu, p.slack)


# -- energies and criticality ----------------------------------------------------

def energy_E_lambda(u: Field, lambda_param: float) -> float:
    """1/2 int |D_H u|^2 - lambda/2 int u^2 - 1/2* int |u|^{2*}."""
    return 0.5 * dirichlet_energy(u) - 0.5 * lambda_param * quadrature_lp(u, 2) - quadrature_lp(u, CRIT) / CRIT


def energy_E_star(u: Field) -> float:
    """1/2 int |D_H u|^2 - 1/2* int |u|^{2*} over the whole box."""
    return energy_E_lambda(u, 0.0)


@dataclass(frozen=True)
class ResidualReport:
    """Size of ``L u - lambda u - |u|^{2*-2} u``.

    ``bank`` is the sup over the energy-normalised test bank, ``l2`` the discrete L^2
    norm, ``dual`` the exact discrete dual norm ``sqrt(<r, L^{-1} r>)``.
    """

    bank: float
    l2: float
    dual: float | None = None

    def __float__(self):
        return float(self.bank)


def _bank_in_mask(mask: DomainMask):
    key = "bank_normalised"
    if key not in mask.cache:
        bank = test_bank(mask.grid)
        out = []
        for phi in bank:
            v = np.where(mask.inside, phi, 0.0)
            e = float(energy_density_array(v, mask.grid).sum() * mask.grid.cell_volume)
            out.append(v / np.sqrt(e))
        mask.cache[key] = np.array(out)
    return mask.cache[key]


def dE_residual(u: Field, lambda_param: float, dual: bool = False, tol: float = 1e-10) -> ResidualReport:
    r = stiffness_action(u.values, u.mask) - lambda_param * u.values - np.abs(u.values) ** (CRIT - 2) * u.values
    r[~u.mask.inside] = 0.0
    hv = u.grid.cell_volume
    bank = _bank_in_mask(u.mask)
    b = float(np.max(np.abs(np.tensordot(bank, r, axes=3)))) * hv
    l2 = float(np.sqrt(hv * np.sum(r * r)))
    d = None
    if dual:
        rd = r.ravel(order="F")[u.mask.flat_dofs]
        if np.any(rd):
            x, _ = solve_dofs(u.mask, rd, tol, None, None, "amg")
            d = float(np.sqrt(max(hv * (rd @ x), 0.0)))
        else:
            d = 0.0
    return ResidualReport(b, l2, d)


# -- Palais-Smale sequences -----------------------------------------------------------

@dataclass(frozen=True)
class BubbleTrack:
    """Scales ``lam0 * rate^-k``; centre fixed or given per k; amplitude defaults to the exact-solution value."""

    lam0: float
    rate: float
    center: object = field(default_factory=GroupPoint.identity)
    amplitude: float = field(default_factory=exact_solution_amplitude)
    cutoff_rho: float | None = None

    def __post_init__(self):
        if not self.lam0 > 0:
            raise ValidationError("lam0 must be positive")
        if not self.rate > 1:
            raise ValidationError("bubble rate must exceed 1")

    def scale(self, k: int) -> float:
        return self.lam0 * self.rate ** (-k)

    def center_at(self, k: int) -> GroupPoint:
        c = self.center
        if isinstance(c, GroupPoint):
            return c
        if callable(c):
            return c(k)
        return c[k]


@dataclass(frozen=True)
class PSSpec:
    bubbles: tuple
    k_range: tuple = (0, 6)
    lambda_param: float = 0.0
    base_solution: Field | None = None
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bubbles", tuple(self.bubbles))
        k0, k1 = self.k_range
        if k1 < k0:
            raise ValidationError("empty k range")
        if self.noise < 0:
            raise ValidationError("noise must be nonnegative")
        for i in range(len(self.bubbles)):
            for j in range(i):
                a, b = self.bubbles[i], self.bubbles[j]
                if a.rate == b.rate and a.lam0 == b.lam0:
                    ca, cb = a.center_at(k1), b.center_at(k1)
                    if ca == cb:
                        raise ValidationError(f"bubbles {i} and {j} coincide")

    @property
    def ks(self):
        return list(range(self.k_range[0], self.k_range[1] + 1))


def synth_ps_sequence(spec: PSSpec, grid: Grid, mask: DomainMask) -> list:
    """u_k = u0 + sum_j amp * lam_k^{-1} U(delta_{1/lam_k}(xi_k^{-1} o .)) on the mask."""
    base = spec.base_solution.values if spec.base_solution is not None else np.zeros(grid.shape)
    depth = mask.edge_distance_nodes()
    X, Y, T = grid.mesh
    rng = np.random.default_rng(spec.seed)
    out = []
    for k in spec.ks:
        vals = np.array(base, copy=True)
        for j, b in enumerate(spec.bubbles):
            c = b.center_at(k)
            idx = grid.nearest_index(c)
            if not grid.contains(c) or depth[idx] <= 1:
                raise ValidationError(f"bubble {j} centre leaves the domain at k={k}")
            w = bubble_arrays(BubbleSpec(b.scale(k), c, b.amplitude), X, Y, T)
            if b.cutoff_rho is not None:
                w = w * cutoff_arrays(c, b.cutoff_rho, X, Y, T)
            vals = vals + w
        if spec.noise > 0:
            vals = vals + spec.noise * np.abs(vals).max() * rng.standard_normal(grid.shape)
        out.append(Field(mask, vals))
    return out


@dataclass(frozen=True)
class EnergyReport:
    e_lambda: float
    e_star_per_bubble: tuple
    residual_dual_norm: float
    splitting_defect: float


def energy_report(u: Field, base: Field | None, bubble_fields, lambda_param: float) -> EnergyReport:
    """E_lambda(u) against E_lambda(base) + sum_j E*(bubble_j)."""
    el = energy_E_lambda(u, lambda_param)
    eb = energy_E_lambda(base, lambda_param) if base is not None else 0.0
    es = tuple(energy_E_star(b) for b in bubble_fields)
    res = dE_residual(u, lambda_param)
    return EnergyReport(el, es, res.bank, el - eb - sum(es))
