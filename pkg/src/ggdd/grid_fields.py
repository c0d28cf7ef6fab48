"""Grids, node-indexed fields, inner products, finite subspaces, field I/O.

A grid is a uniform Cartesian lattice over a box ``[0,L1]x...``.  Two
boundary modes exist:

* ``periodic`` -- all n nodes per axis, x_j = j h, h = L/n, wraparound.
* ``zero`` -- only the n interior nodes are stored, x_j = (j+1) h with
  h = L/(n+1); values outside are implicitly zero (ghost layer).  This
  realizes the homogeneous-boundary spaces as plain vector spaces.

Flat dof ordering is component-major with x fastest inside each component,
i.e. ``data.ravel(order="F")`` per component.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Literal, Sequence

import numpy as np

from . import tensor_algebra as ta
from .errors import (
    BadMagic,
    BandTooHigh,
    DimMismatch,
    GridMismatch,
    TruncatedPayload,
)

BcMode = Literal["periodic", "zero"]
CONSTRAINT_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian lattice; hashable so operator caches can key on it."""

    dims: tuple[int, ...]
    bc: BcMode = "zero"
    lengths: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if any(n < 4 for n in dims):
            raise ValueError(f"grid dims must be >= 4 per axis, got {dims}")
        if self.bc not in ("periodic", "zero"):
            raise ValueError(f"unknown bc mode {self.bc!r}")
        lengths = self.lengths
        if lengths is None:
            lengths = (1.0,) * len(dims)
        lengths = tuple(float(L) for L in lengths)
        if len(lengths) != len(dims) or any(L <= 0 for L in lengths):
            raise ValueError("lengths must be positive, one per axis")
        object.__setattr__(self, "lengths", lengths)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def spacing(self) -> tuple[float, ...]:
        if self.bc == "periodic":
            return tuple(L / n for L, n in zip(self.lengths, self.dims))
        return tuple(L / (n + 1) for L, n in zip(self.lengths, self.dims))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum(L * L for L in self.lengths)))

    def axis_coords(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        j = np.arange(self.dims[axis])
        return j * h if self.bc == "periodic" else (j + 1) * h

    def coords(self) -> tuple[np.ndarray, ...]:
        """Meshgrid node coordinates, indexed [ix, iy, (iz)]."""
        axes = [self.axis_coords(a) for a in range(self.ndim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


def _check_same_grid(a, b):
    if a.grid != b.grid or a.rank != b.rank:
        raise GridMismatch(f"grids/ranks differ: {a.grid}/{a.rank} vs {b.grid}/{b.rank}")


class FieldBase:
    rank = "scalar"

    def __init__(self, grid: Grid, data: np.ndarray):
        self.grid = grid
        self.data = np.asarray(data, dtype=float)
        if self.data.shape[-grid.ndim:] != grid.dims:
            raise GridMismatch(
                f"data shape {self.data.shape} does not end in grid dims {grid.dims}"
            )

    def copy(self):
        return type(self)(self.grid, self.data.copy())

    def dofs(self) -> np.ndarray:
        """Flat dof vector, component-major, x fastest."""
        nd = self.grid.ndim
        comps = self.data.reshape((-1,) + self.grid.dims)
        return np.concatenate([c.ravel(order="F") for c in comps])

    @classmethod
    def from_dofs(cls, grid: Grid, dofs: np.ndarray):
        ncomp = cls._ncomp(grid)
        N = grid.node_count
        if dofs.size != ncomp * N:
            raise GridMismatch(f"dof vector of size {dofs.size}, expected {ncomp * N}")
        comps = [
            dofs[k * N:(k + 1) * N].reshape(grid.dims, order="F") for k in range(ncomp)
        ]
        data = np.stack(comps).reshape(cls._shape(grid))
        return cls(grid, data)

    def __add__(self, other):
        _check_same_grid(self, other)
        return type(self)(self.grid, self.data + other.data)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return type(self)(self.grid, self.data - other.data)

    def __mul__(self, s: float):
        return type(self)(self.grid, self.data * s)

    __rmul__ = __mul__


class ScalarField(FieldBase):
    rank = "scalar"

    @staticmethod
    def _ncomp(grid):
        return 1

    @staticmethod
    def _shape(grid):
        return grid.dims


class VectorField(FieldBase):
    rank = "vector"

    @staticmethod
    def _ncomp(grid):
        return grid.ndim

    @staticmethod
    def _shape(grid):
        return (grid.ndim,) + grid.dims


class TensorField(FieldBase):
    rank = "tensor"

    def __init__(self, grid: Grid, data: np.ndarray,
                 claims_symmetric: bool = False, claims_tracefree: bool = False):
        super().__init__(grid, data)
        d = grid.ndim
        if self.data.shape[:2] != (d, d):
            raise GridMismatch(f"tensor data must be ({d},{d},*dims)")
        self.claims_symmetric = claims_symmetric
        self.claims_tracefree = claims_tracefree
        scale = max(np.abs(self.data).max(), 1e-300)
        if claims_symmetric:
            defect = np.abs(self.data - np.swapaxes(self.data, 0, 1)).max()
            if defect > CONSTRAINT_TOL * scale:
                raise GridMismatch(f"claims_symmetric but |M - M^T| = {defect:.2e}")
        if claims_tracefree:
            trace = self.data[0, 0].copy()
            for i in range(1, d):
                trace += self.data[i, i]
            if np.abs(trace).max() > CONSTRAINT_TOL * scale:
                raise GridMismatch("claims_tracefree but |tr M| too large")

    @staticmethod
    def _ncomp(grid):
        return grid.ndim ** 2

    @staticmethod
    def _shape(grid):
        return (grid.ndim, grid.ndim) + grid.dims

    def copy(self):
        return TensorField(self.grid, self.data.copy(),
                           self.claims_symmetric, self.claims_tracefree)


FIELD_CLASSES = {"scalar": ScalarField, "vector": VectorField, "tensor": TensorField}


def zeros(grid: Grid, rank: str):
    cls = FIELD_CLASSES[rank]
    return cls(grid, np.zeros(cls._shape(grid)))


def pairwise_sum(values: np.ndarray) -> float:
    """Deterministic pairwise tree reduction (fixed association order)."""
    v = np.asarray(values, dtype=float).ravel()
    while v.size > 1:
        m = v.size // 2
        head = v[: 2 * m]
        v = np.concatenate([head[0::2] + head[1::2], v[2 * m:]])
    return float(v[0]) if v.size else 0.0


def inner_product(f: FieldBase, g: FieldBase) -> float:
    """Discrete L2 product: node sum of pointwise (Frobenius) products x cell volume."""
    _check_same_grid(f, g)
    prod = (f.data * g.data).reshape(-1, f.grid.node_count)
    # per-node Frobenius product first, then one fixed tree over nodes
    per_node = prod.sum(axis=0) if prod.shape[0] > 1 else prod[0]
    return pairwise_sum(per_node) * f.grid.cell_volume


def norm(f: FieldBase) -> float:
    return float(np.sqrt(max(inner_product(f, f), 0.0)))


@dataclass
class FiniteSubspace:
    """Orthonormal (discrete L2) basis of a small analytic subspace."""

    name: str
    grid: Grid
    basis: list = dc_field(default_factory=list)

    @property
    def dimension(self) -> int:
        return len(self.basis)

    def gram(self) -> np.ndarray:
        d = self.dimension
        G = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                G[i, j] = inner_product(self.basis[i], self.basis[j])
        return G


def _orthonormalize(fields):
    """Modified Gram-Schmidt, two passes, in discrete L2."""
    out = []
    for f in fields:
        g = f.copy()
        for _ in range(2):
            for b in out:
                g = g - inner_product(g, b) * b
        n = norm(g)
        if n < 1e-14:
            raise ValueError("degenerate basis during orthonormalization")
        out.append((1.0 / n) * g)
    return out


def subspace(grid: Grid, name: str) -> FiniteSubspace:
    """Build one of the named subspaces: R (constants), RT0, RM."""
    X = grid.coords()
    if name == "R":
        raw = [ScalarField(grid, np.ones(grid.dims))]
    elif name == "RT0":
        if grid.ndim != 3:
            raise ValueError("RT0 subspace is three-dimensional space only")
        pos = np.stack(X)
        raw = [VectorField(grid, pos)]
        for k in range(3):
            e = np.zeros((3,) + grid.dims)
            e[k] = 1.0
            raw.append(VectorField(grid, e))
    elif name == "RM":
        d = grid.ndim
        raw = []
        for k in range(d):
            e = np.zeros((d,) + grid.dims)
            e[k] = 1.0
            raw.append(VectorField(grid, e))
        if d == 2:
            rot = np.stack([-X[1], X[0]])
            raw.append(VectorField(grid, rot))
        else:
            pos = np.stack(X)
            for k in range(3):
                e = np.zeros(3)
                e_field = np.zeros((3,) + grid.dims)
                e[k] = 1.0
                for i in range(3):
                    e_field[i] = e[i]
                raw.append(VectorField(grid, ta.cross(e_field, pos)))
    else:
        raise ValueError(f"unknown subspace {name!r}")
    return FiniteSubspace(name, grid, _orthonormalize(raw))


def project_subspace(f: FieldBase, S: FiniteSubspace):
    """Orthogonal projection onto S; returns (projection, complement)."""
    if S.grid != f.grid:
        raise GridMismatch("subspace lives on a different grid")
    proj = zeros(f.grid, f.rank)
    for b in S.basis:
        proj = proj + inner_product(f, b) * b
    return proj, f - proj


def random_smooth_field(grid: Grid, rank: str, seed: int, band: int):
    """Seeded band-limited random field.

    Periodic grids use a truncated Fourier series (products of phased
    cosines); zero-extension grids use a sine series, which vanishes on the
    implicit boundary layer.  Deterministic for fixed (seed, grid, band).
    """
    if band < 0 or any(band > n // 4 for n in grid.dims):
        raise BandTooHigh(f"band {band} exceeds n/4 for dims {grid.dims}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    cls = FIELD_CLASSES[rank]
    ncomp = cls._ncomp(grid)
    axes = [grid.axis_coords(a) for a in range(grid.ndim)]
    comps = []
    for _ in range(ncomp):
        acc = np.zeros(grid.dims)
        if grid.bc == "periodic":
            for k in np.ndindex(*(band + 1,) * grid.ndim):
                amp = rng.standard_normal()
                phases = rng.uniform(0.0, 2 * np.pi, size=grid.ndim)
                term = np.ones(grid.dims)
                for a in range(grid.ndim):
                    w = 2 * np.pi * k[a] / grid.lengths[a]
                    prof = np.cos(w * axes[a] + phases[a])
                    term = term * prof.reshape([-1 if i == a else 1 for i in range(grid.ndim)])
                acc += amp * term
        else:
            for k in np.ndindex(*(band,) * grid.ndim):
                amp = rng.standard_normal()
                term = np.ones(grid.dims)
                for a in range(grid.ndim):
                    w = (k[a] + 1) * np.pi / grid.lengths[a]
                    prof = np.sin(w * axes[a])
                    term = term * prof.reshape([-1 if i == a else 1 for i in range(grid.ndim)])
                acc += amp * term
        comps.append(acc)
    data = np.stack(comps).reshape(cls._shape(grid))
    return cls(grid, data)


# ---------------------------------------------------------------------------
# FLD1 field files


def write_field(path, f: FieldBase) -> None:
    """Write in FLD1 format: ASCII header, blank line, little-endian f64 payload."""
    flags = []
    if isinstance(f, TensorField):
        if f.claims_symmetric:
            flags.append("sym")
        if f.claims_tracefree:
            flags.append("tracefree")
    header = [
        "FLD1",
        f"kind={f.rank}",
        "dims=" + " ".join(str(n) for n in f.grid.dims),
        "h=" + " ".join(repr(h) for h in f.grid.spacing),
        "bc=" + ("periodic" if f.grid.bc == "periodic" else "zero"),
        "flags=" + ",".join(flags),
        "",
    ]
    payload = f.dofs().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(payload)


def read_field(path, expect_kind: str | None = None):
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if not blob.startswith(b"FLD1\n"):
        raise BadMagic(f"{path}: missing FLD1 magic")
    if sep < 0:
        raise TruncatedPayload(f"{path}: header never terminated")
    header = blob[:sep].decode("ascii").splitlines()
    payload = blob[sep + 2:]
    fields = {}
    for line in header[1:]:
        key, _, val = line.partition("=")
        fields[key] = val
    kind = fields.get("kind")
    if kind not in FIELD_CLASSES:
        raise DimMismatch(f"{path}: unknown kind {kind!r}")
    if expect_kind is not None and kind != expect_kind:
        raise DimMismatch(f"{path}: file holds {kind}, expected {expect_kind}")
    dims = tuple(int(t) for t in fields["dims"].split())
    spacing = tuple(float(t) for t in fields["h"].split())
    bc = fields["bc"]
    if bc == "zero":
        lengths = tuple(h * (n + 1) for h, n in zip(spacing, dims))
    else:
        lengths = tuple(h * n for h, n in zip(spacing, dims))
    grid = Grid(dims, bc, lengths)
    cls = FIELD_CLASSES[kind]
    ncomp = cls._ncomp(grid)
    need = ncomp * grid.node_count * 8
    if len(payload) < need:
        raise TruncatedPayload(f"{path}: payload {len(payload)}B, header promises {need}B")
    dofs = np.frombuffer(payload[:need], dtype="<f8").astype(float)
    out = cls.from_dofs(grid, dofs)
    if isinstance(out, TensorField):
        flag_set = set(t for t in fields.get("flags", "").split(",") if t)
        out.claims_symmetric = "sym" in flag_set
        out.claims_tracefree = "tracefree" in flag_set
    return out
