"""Discrete horizontal calculus on masked H^1 grids.

The discrete energy averages the forward and backward one-sided versions of
``Z1 = d/dx + 2y d/dt`` and ``Z2 = d/dy - 2x d/dt``:

    |D_H u|^2  ~  (|Z+ u|^2 + |Z- u|^2) / 2

with ``u`` extended by zero off the mask.  The stiffness operator is the exact
adjoint assembly ``L = (1/2) sum_s (Z1s^T Z1s + Z2s^T Z2s)`` on mask nodes, so that

    pairing(L u, v) = sum_j w_j pairing(D_j u, D_j v),   dirichlet_energy(u) = pairing(L u, u)

hold to rounding.  A plain centred difference would make ``D^T D`` decouple the
lattice into two parity classes; the averaged one-sided form keeps the stencil
compact while staying second order and exact on quadratics.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError
from .grid import DomainMask, Field, Grid

__all__ = [
    "HorizontalField",
    "one_sided_gradient",
    "energy_density_array",
    "horizontal_gradient",
    "dirichlet_energy",
    "difference_operators",
    "stiffness_matrix",
    "apply_stiffness",
    "stiffness_action",
    "solve_poisson",
    "kohn_laplacian_array",
    "default_cg_max_iter",
]


@dataclass(frozen=True)
class HorizontalField:
    """Components along Z1 and Z2 at every node (zero outside the mask)."""

    mask: DomainMask
    z1: np.ndarray
    z2: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.mask.grid

    def squared_norm(self) -> np.ndarray:
        return self.z1**2 + self.z2**2


def _diff(u: np.ndarray, ax: int, h: float, sign: int) -> np.ndarray:
    """One-sided difference along ``ax`` with zero extension beyond the box."""
    out = np.empty_like(u)
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[ax], hi[ax] = slice(0, -1), slice(1, None)
    lo, hi = tuple(lo), tuple(hi)
    edge = [slice(None)] * 3
    if sign > 0:
        out[lo] = (u[hi] - u[lo]) / h
        edge[ax] = -1
        out[tuple(edge)] = -u[tuple(edge)] / h
    else:
        out[hi] = (u[hi] - u[lo]) / h
        edge[ax] = 0
        out[tuple(edge)] = u[tuple(edge)] / h
    return out


def one_sided_gradient(values: np.ndarray, grid: Grid, sign: int):
    """(Z1 u, Z2 u) with forward (``sign=+1``) or backward (``-1``) differences."""
    hx, hy, ht = grid.spacing
    X, Y, _ = grid.mesh
    dt = _diff(values, 2, ht, sign)
    z1 = _diff(values, 0, hx, sign) + 2.0 * Y * dt
    z2 = _diff(values, 1, hy, sign) - 2.0 * X * dt
    return z1, z2


def energy_density_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Nodal discrete |D_H u|^2 of a zero-extended array (nonzero one node past the support)."""
    e = np.zeros(grid.shape)
    for s in (1, -1):
        z1, z2 = one_sided_gradient(values, grid, s)
        e += 0.5 * (z1 * z1 + z2 * z2)
    return e


def horizontal_gradient(u: Field) -> HorizontalField:
    """Centred horizontal gradient (mean of the one-sided pair), zero outside the mask."""
    fz1, fz2 = one_sided_gradient(u.values, u.grid, 1)
    bz1, bz2 = one_sided_gradient(u.values, u.grid, -1)
    out = u.mask.inside
    z1 = np.where(out, 0.5 * (fz1 + bz1), 0.0)
    z2 = np.where(out, 0.5 * (fz2 + bz2), 0.0)
    return HorizontalField(u.mask, z1, z2)


def stiffness_action(values: np.ndarray, mask: DomainMask) -> np.ndarray:
    """Matrix-free ``L u`` as a nodal array (zero off the mask); same operator as the sparse assembly."""
    grid = mask.grid
    hx, hy, ht = grid.spacing
    X, Y, _ = grid.mesh
    u = np.where(mask.inside, values, 0.0)
    out = np.zeros(grid.shape)
    for s in (1, -1):
        z1, z2 = one_sided_gradient(u, grid, s)
        # the transpose of a sign-s difference is minus the opposite one
        out -= 0.5 * (_diff(z1, 0, hx, -s) + _diff(z2, 1, hy, -s) + _diff(2.0 * Y * z1 - 2.0 * X * z2, 2, ht, -s))
    out[~mask.inside] = 0.0
    return out


def dirichlet_energy(u: Field) -> float:
    return float(energy_density_array(u.values, u.grid).sum() * u.grid.cell_volume)


# -- sparse assembly ---------------------------------------------------------------

def _kron3(ax, ay, at):
    # x-fastest flattening: index = i + Nx * (j + Ny * k)
    return sp.kron(at, sp.kron(ay, ax, format="csr"), format="csr")


def _assemble_operators(mask: DomainMask):
    grid = mask.grid
    Nx, Ny, Nt = grid.shape
    hx, hy, ht = grid.spacing
    Ix, Iy, It = (sp.identity(n, format="csr") for n in grid.shape)
    X, Y, _ = grid.dense_mesh()
    xf = X.ravel(order="F")
    yf = Y.ravel(order="F")
    ops = []
    for s in (1, -1):
        dx = _kron3((sp.eye(Nx, k=s, format="csr") - Ix) * (s / hx), Iy, It)
        dy = _kron3(Ix, (sp.eye(Ny, k=s, format="csr") - Iy) * (s / hy), It)
        dt = _kron3(Ix, Iy, (sp.eye(Nt, k=s, format="csr") - It) * (s / ht))
        ops.append(dx + sp.diags(2.0 * yf) @ dt)
        ops.append(dy - sp.diags(2.0 * xf) @ dt)
    dofs = mask.flat_dofs
    ops = [o[:, dofs].tocsr() for o in ops]
    L = 0.5 * ops[0].T @ ops[0]
    for o in ops[1:]:
        L = L + 0.5 * (o.T @ o)
    return ops, L.tocsr()


def _cached(mask: DomainMask):
    if "ops" not in mask.cache:
        ops, L = _assemble_operators(mask)
        mask.cache["ops"] = ops
        mask.cache["L"] = L
    return mask.cache["ops"], mask.cache["L"]


def difference_operators(mask: DomainMask):
    """The four one-sided discrete Z_j as sparse maps (mask dofs -> all nodes), each with weight 1/2."""
    ops, _ = _cached(mask)
    return ops, [0.5] * len(ops)


def stiffness_matrix(mask: DomainMask) -> sp.csr_matrix:
    """Sparse SPD matrix of L on the mask's degrees of freedom (x-fastest order)."""
    return _cached(mask)[1]


def apply_stiffness(u: Field) -> Field:
    L = stiffness_matrix(u.mask)
    return Field.from_dofs(u.mask, L @ u.dofs())


def kohn_laplacian_array(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Discrete Delta_H of raw nodal samples, valid one node inside the box edge.

    Uses the same stencil as ``-L`` with no masking; the outer node layer is
    returned as NaN.
    """
    mask = DomainMask.everywhere(grid)
    L = stiffness_matrix(mask)
    out = -(L @ np.asarray(values, dtype=float).ravel(order="F")).reshape(grid.shape, order="F")
    out[[0, -1], :, :] = np.nan
    out[:, [0, -1], :] = np.nan
    out[:, :, [0, -1]] = np.nan
    return out


# -- linear solve ------------------------------------------------------------------

def default_cg_max_iter(n_unknowns: int) -> int:
    return max(500, int(10 * np.sqrt(n_unknowns)))


def _preconditioner(mask: DomainMask, kind: str):
    L = stiffness_matrix(mask)
    if kind == "jacobi":
        return sp.diags(1.0 / L.diagonal())
    if kind == "amg":
        key = "amg"
        if key not in mask.cache:
            import pyamg

            # pyamg draws its spectral-radius start vector from the global RNG
            state = np.random.get_state()
            np.random.seed(0)
            try:
                mask.cache[key] = pyamg.smoothed_aggregation_solver(L).aspreconditioner()
            finally:
                np.random.set_state(state)
        return mask.cache[key]
    if kind in (None, "none"):
        return None
    raise ValueError(f"unknown preconditioner {kind!r}")


def solve_dofs(mask: DomainMask, rhs: np.ndarray, tol: float = 1e-8, max_iter: int | None = None,
               x0: np.ndarray | None = None, preconditioner: str = "jacobi"):
    """CG on ``L x = rhs`` in dof space; returns ``(x, iterations)``."""
    L = stiffness_matrix(mask)
    nb = np.linalg.norm(rhs)
    if nb == 0:
        return np.zeros_like(rhs), 0
    max_iter = max_iter or default_cg_max_iter(L.shape[0])
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(L, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=max_iter,
                      M=_preconditioner(mask, preconditioner), callback=cb)
    res = np.linalg.norm(L @ x - rhs) / nb
    if info != 0 or res > tol * (1 + 1e-6):
        raise ConvergenceError(
            f"CG stopped after {count[0]} iterations with relative residual {res:.3e} (tol {tol:.1e})",
            residual=res, iterations=count[0], partial=x)
    return x, count[0]


def solve_poisson(f: Field, tol: float = 1e-8, max_iter: int | None = None, x0: Field | None = None,
                  preconditioner: str = "jacobi") -> Field:
    """Solve ``L u = f`` on the mask with preconditioned conjugate gradients."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    start = None if x0 is None else x0.dofs()
    x, _ = solve_dofs(f.mask, f.dofs(), tol, max_iter, start, preconditioner)
    return Field.from_dofs(f.mask, x)
