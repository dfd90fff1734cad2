"""Uniform box grids over H^1, domain masks and masked fields.

A ``Field`` is the discrete stand-in for an element of the Folland-Stein space
S^1_0 on a bounded domain: nodal values on a tensor lattice, exactly zero
outside a ``DomainMask``.  Arrays have shape ``(Nx, Ny, Nt)``; the on-disk
format flattens them x-fastest (Fortran order).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np

from .group import GroupPoint, gauge_arrays, koranyi_distance_arrays

__all__ = [
    "Grid",
    "DomainMask",
    "Field",
    "FieldFormatError",
    "field_from_function",
    "field_from_array",
    "quadrature_lp",
    "pairing",
    "save_field",
    "load_field",
]

HSF_MAGIC = b"HSF1"
HSF_VERSION = 1


class FieldFormatError(ValueError):
    """Malformed or incompatible HSF1 file."""


@dataclass(frozen=True)
class Grid:
    """Tensor lattice on ``[x0,x1] x [y0,y1] x [t0,t1]`` with ``N_i`` nodes per axis."""

    bounds: tuple
    resolution: tuple

    def __init__(self, bounds=((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)), resolution=(33, 33, 33)):
        b = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if np.isscalar(resolution):
            resolution = (resolution,) * 3
        r = tuple(int(n) for n in resolution)
        if len(b) != 3 or len(r) != 3:
            raise ValueError("grids are three dimensional (n = 1)")
        for (lo, hi), n in zip(b, r):
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise ValueError(f"bad interval [{lo}, {hi}]")
            if n < 3:
                raise ValueError(f"need at least 3 nodes per axis, got {n}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "resolution", r)

    @classmethod
    def box(cls, half_widths=(1.0, 1.0, 1.0), resolution=33, center=(0.0, 0.0, 0.0)):
        return cls([(c - w, c + w) for c, w in zip(center, half_widths)], resolution)

    @property
    def shape(self) -> tuple:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @cached_property
    def spacing(self) -> tuple:
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.resolution))

    @property
    def cell_volume(self) -> float:
        hx, hy, ht = self.spacing
        return hx * hy * ht

    @cached_property
    def axes(self) -> tuple:
        return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.resolution))

    @cached_property
    def mesh(self) -> tuple:
        """Broadcastable coordinate arrays of shapes (Nx,1,1), (1,Ny,1), (1,1,Nt)."""
        x, y, t = self.axes
        return x[:, None, None], y[None, :, None], t[None, None, :]

    def dense_mesh(self) -> tuple:
        return tuple(np.broadcast_to(a, self.shape) for a in self.mesh)

    def node(self, index) -> GroupPoint:
        i, j, k = (int(v) for v in index)
        x, y, t = self.axes
        return GroupPoint.from_xyt(x[i], y[j], t[k])

    def nearest_index(self, p: GroupPoint) -> tuple:
        """Index of the lattice node closest to ``p`` in each coordinate (clipped to the box)."""
        coords = (p.x[0], p.y[0], p.t)
        out = []
        for c, (lo, _), h, n in zip(coords, self.bounds, self.spacing, self.resolution):
            out.append(int(np.clip(np.rint((c - lo) / h), 0, n - 1)))
        return tuple(out)

    def contains(self, p: GroupPoint) -> bool:
        coords = (p.x[0], p.y[0], p.t)
        return all(lo <= c <= hi for c, (lo, hi) in zip(coords, self.bounds))

    @property
    def koranyi_diameter(self) -> float:
        """Largest Koranyi distance between two points of the box (attained at corners)."""
        (x0, x1), (y0, y1), (t0, t1) = self.bounds
        c = np.array([(a, b, s) for a in (x0, x1) for b in (y0, y1) for s in (t0, t1)])
        x, y, t = c[:, None, 0], c[:, None, 1], c[:, None, 2]
        dx, dy = c[None, :, 0] - x, c[None, :, 1] - y
        dt = c[None, :, 2] - t - 2.0 * y * c[None, :, 0] + 2.0 * x * c[None, :, 1]
        return float(gauge_arrays(dx, dy, dt).max())

    def descriptor(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "resolution": list(self.resolution)}


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Boolean node set of a domain.

    Solver masks keep the outer layer of the box outside, which is how the zero
    trace of S^1_0 is imposed.  ``support`` masks (used for derived densities that
    may touch the box edge) skip that check.
    """

    grid: Grid
    inside: np.ndarray
    kind: str = "predicate"
    support: bool = False
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        inside = np.array(self.inside, dtype=bool, copy=True)
        if inside.shape != self.grid.shape:
            raise ValueError(f"mask shape {inside.shape} does not match grid {self.grid.shape}")
        if not self.support:
            inside[[0, -1], :, :] = False
            inside[:, [0, -1], :] = False
            inside[:, :, [0, -1]] = False
        if not inside.any():
            raise ValueError("domain mask has no interior node")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)

    # built-in domains -----------------------------------------------------

    @classmethod
    def full(cls, grid: Grid) -> "DomainMask":
        return cls(grid, np.ones(grid.shape, dtype=bool), kind="full")

    @classmethod
    def koranyi_ball(cls, grid: Grid, rho: float, center: GroupPoint | None = None) -> "DomainMask":
        if not rho > 0:
            raise ValueError("ball radius must be positive")
        center = center or GroupPoint.identity()
        d = koranyi_distance_arrays(center, *grid.mesh)
        return cls(grid, np.broadcast_to(d < rho, grid.shape), kind="ball")

    @classmethod
    def ellipsoid(cls, grid: Grid, semi_axes, center=(0.0, 0.0, 0.0)) -> "DomainMask":
        a = [float(v) for v in semi_axes]
        if min(a) <= 0:
            raise ValueError("semi-axes must be positive")
        X, Y, T = grid.mesh
        r = ((X - center[0]) / a[0]) ** 2 + ((Y - center[1]) / a[1]) ** 2 + ((T - center[2]) / a[2]) ** 2
        return cls(grid, np.broadcast_to(r < 1.0, grid.shape), kind="ellipsoid")

    @classmethod
    def from_predicate(cls, grid: Grid, pred: Callable) -> "DomainMask":
        """``pred(X, Y, T)`` is called once on broadcast coordinate arrays."""
        vals = np.broadcast_to(np.asarray(pred(*grid.mesh), dtype=bool), grid.shape)
        return cls(grid, vals, kind="predicate")

    @classmethod
    def everywhere(cls, grid: Grid) -> "DomainMask":
        return cls(grid, np.ones(grid.shape, dtype=bool), kind="support", support=True)

    # ----------------------------------------------------------------------

    def closure(self) -> "DomainMask":
        """Mask plus its face neighbours: the support of one-sided difference densities."""
        m = self.inside.copy()
        for ax in range(3):
            m |= np.roll(self.inside, 1, ax) & _not_wrapped(self.grid.shape, ax, 1)
            m |= np.roll(self.inside, -1, ax) & _not_wrapped(self.grid.shape, ax, -1)
        return DomainMask(self.grid, m, kind="closure", support=True)

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    @property
    def volume(self) -> float:
        return self.count * self.grid.cell_volume

    @cached_property
    def flat_dofs(self) -> np.ndarray:
        return np.flatnonzero(self.inside.ravel(order="F"))

    def same_as(self, other: "DomainMask") -> bool:
        return self is other or (self.grid == other.grid and np.array_equal(self.inside, other.inside))

    def edge_distance_nodes(self) -> np.ndarray:
        """Integer lattice distance (in nodes, Chebyshev) from each inside node to the outside."""
        from scipy import ndimage

        return ndimage.distance_transform_cdt(self.inside, metric="chessboard")


def _not_wrapped(shape, ax, shift):
    ok = np.ones(shape, dtype=bool)
    idx = [slice(None)] * 3
    idx[ax] = 0 if shift > 0 else -1
    ok[tuple(idx)] = False
    return ok


class Field:
    """Nodal values on a grid, zero outside the mask.  Treated as immutable."""

    __slots__ = ("grid", "mask", "values")

    def __init__(self, mask: DomainMask, values):
        v = np.array(values, dtype=np.float64, copy=True)
        if v.shape != mask.grid.shape:
            raise ValueError(f"value array {v.shape} does not match grid {mask.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v[~mask.inside] = 0.0
        v.setflags(write=False)
        self.grid = mask.grid
        self.mask = mask
        self.values = v

    @classmethod
    def zeros(cls, mask: DomainMask) -> "Field":
        return cls(mask, np.zeros(mask.grid.shape))

    def with_values(self, values) -> "Field":
        return Field(self.mask, values)

    def scaled(self, c: float) -> "Field":
        return Field(self.mask, c * self.values)

    def _check(self, other: "Field"):
        if not self.mask.same_as(other.mask):
            raise ValueError("fields live on different grids or masks")

    def __add__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.mask, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        self._check(other)
        return Field(self.mask, self.values - other.values)

    def __mul__(self, c):
        return self.scaled(float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self.scaled(-1.0)

    def dofs(self) -> np.ndarray:
        """Values at mask nodes, in x-fastest order."""
        return self.values.ravel(order="F")[self.mask.flat_dofs]

    @classmethod
    def from_dofs(cls, mask: DomainMask, dofs) -> "Field":
        full = np.zeros(mask.grid.size)
        full[mask.flat_dofs] = dofs
        return cls(mask, full.reshape(mask.grid.shape, order="F"))

    def argmax_abs(self) -> tuple:
        return np.unravel_index(int(np.argmax(np.abs(self.values))), self.grid.shape)

    def __repr__(self):
        return f"Field(grid={self.grid.resolution}, mask={self.mask.kind}, max|u|={np.abs(self.values).max():.4g})"


def field_from_function(grid: Grid, mask: DomainMask, f: Callable, vectorized: bool = False) -> Field:
    """Sample ``f`` at mask nodes.

    With ``vectorized=True``, ``f(X, Y, T)`` receives broadcast coordinate arrays;
    otherwise it is called per node with a ``GroupPoint``.
    """
    if mask.grid != grid:
        raise ValueError("mask belongs to a different grid")
    if vectorized:
        vals = np.broadcast_to(np.asarray(f(*grid.mesh), dtype=float), grid.shape).copy()
    else:
        vals = np.zeros(grid.shape)
        x, y, t = grid.axes
        for i, j, k in zip(*np.nonzero(mask.inside)):
            vals[i, j, k] = f(GroupPoint.from_xyt(x[i], y[j], t[k]))
    vals[~mask.inside] = 0.0
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite sample inside the domain")
    return Field(mask, vals)


def field_from_array(mask: DomainMask, values) -> Field:
    return Field(mask, values)


def quadrature_lp(u: Field, p: float) -> float:
    """Rectangle rule for the integral of |u|^p."""
    if not np.isfinite(p):
        raise ValueError("exponent must be finite")
    a = np.abs(u.values[u.mask.inside])
    if p == 2:
        s = np.dot(a, a)
    else:
        s = np.sum(a**p)
    return float(s * u.grid.cell_volume)


def pairing(u: Field, v: Field) -> float:
    """L^2 pairing under the same rectangle rule."""
    if u.grid != v.grid:
        raise ValueError("pairing needs fields on the same grid")
    return float(np.sum(u.values * v.values) * u.grid.cell_volume)


# -- HSF1 persistence -------------------------------------------------------------

def save_field(u: Field, path, provenance: dict | None = None) -> None:
    """Write HSF1: magic, header length, sorted JSON header, uint8 mask, float64 values (x-fastest)."""
    header = {"version": HSF_VERSION, "n": 1, "mask": "embedded", **u.grid.descriptor()}
    if provenance:
        header["provenance"] = provenance
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    mask = u.mask.inside.ravel(order="F").astype(np.uint8).tobytes()
    vals = u.values.ravel(order="F").astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(HSF_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(mask)
        fh.write(vals)


def load_field(path) -> Field:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != HSF_MAGIC:
        raise FieldFormatError(f"{path}: not an HSF1 file (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise FieldFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FieldFormatError(f"{path}: unreadable header ({exc})") from exc
    if header.get("version") != HSF_VERSION or header.get("n") != 1:
        raise FieldFormatError(f"{path}: unsupported version/n {header.get('version')}/{header.get('n')}")
    grid = Grid(header["bounds"], header["resolution"])
    m = grid.size
    body = data[8 + hlen :]
    if len(body) != m + 8 * m:
        raise FieldFormatError(f"{path}: payload length {len(body)} != expected {9 * m}")
    inside = np.frombuffer(body[:m], dtype=np.uint8).reshape(grid.shape, order="F").astype(bool)
    vals = np.frombuffer(body[m:], dtype="<f8").reshape(grid.shape, order="F")
    support = bool(inside[[0, -1], :, :].any() or inside[:, [0, -1], :].any() or inside[:, :, [0, -1]].any())
    mask = DomainMask(grid, inside, kind="loaded", support=support)
    if np.any(vals[~inside] != 0):
        raise FieldFormatError(f"{path}: nonzero values outside the mask")
    return Field(mask, vals)
