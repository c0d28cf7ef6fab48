"""Discrete differential operators as sparse matrices with space metadata.

One stencil family: second-order centered differences
``(D_i f)_j = (f_{j+e_i} - f_{j-e_i}) / (2 h_i)`` with

* wraparound rows in periodic mode,
* zero-extension rows in zero mode for the ``mathring`` variant (the
  truncated matrix is exactly antisymmetric, so L2 adjoints are literal
  transposes and all commutator identities hold to rounding),
* a second-order one-sided closure at the two boundary rows for the
  ``free`` variant (exact on affine fields, so e.g. the free deviatoric
  gradient annihilates sampled RT0 exactly).

Constrained tensor fields are stored in per-node orthonormal frames
(6 components for symmetric, 8 for trace-free), so packed Euclidean dot
products equal Frobenius products and uniform mass h1*h2*h3 makes every
adjoint the plain matrix transpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import BadSpacePairing, NoAdjoint
from .grid_fields import (
    FIELD_CLASSES,
    FieldBase,
    Grid,
    ScalarField,
    TensorField,
    VectorField,
)

_SQ2 = np.sqrt(2.0)
_SQ6 = np.sqrt(6.0)

# Levi-Civita symbol
EPS = np.zeros((3, 3, 3))
for _perm, _sign in (((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1),
                     ((0, 2, 1), -1), ((2, 1, 0), -1), ((1, 0, 2), -1)):
    EPS[_perm] = _sign


def sym_frame(ndim: int = 3) -> np.ndarray:
    """Orthonormal basis of symmetric tensors (Mandel components).

    3D order: (11, 22, 33, sqrt2*23, sqrt2*13, sqrt2*12); 2D analogous.
    """
    if ndim == 3:
        B = np.zeros((6, 3, 3))
        for k in range(3):
            B[k, k, k] = 1.0
        for k, (i, j) in enumerate([(1, 2), (0, 2), (0, 1)], start=3):
            B[k, i, j] = B[k, j, i] = 1.0 / _SQ2
        return B
    B = np.zeros((3, 2, 2))
    B[0, 0, 0] = 1.0
    B[1, 1, 1] = 1.0
    B[2, 0, 1] = B[2, 1, 0] = 1.0 / _SQ2
    return B


def tracefree_frame() -> np.ndarray:
    """Orthonormal basis of trace-free tensors (8 components, 3D only).

    Order: off-diagonals (12, 13, 21, 23, 31, 32), then the diagonal
    directions diag(1,-1,0)/sqrt2 and diag(1,1,-2)/sqrt6.
    """
    B = np.zeros((8, 3, 3))
    for k, (i, j) in enumerate([(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]):
        B[k, i, j] = 1.0
    B[6] = np.diag([1.0, -1.0, 0.0]) / _SQ2
    B[7] = np.diag([1.0, 1.0, -2.0]) / _SQ6
    return B


_NCOMP = {
    ("scalar", "none"): lambda d: 1,
    ("vector", "none"): lambda d: d,
    ("tensor", "none"): lambda d: d * d,
    ("tensor", "symmetric"): lambda d: 6 if d == 3 else 3,
    ("tensor", "tracefree"): lambda d: 8,
}


@dataclass(frozen=True)
class SpaceDescriptor:
    grid: Grid
    rank: str = "scalar"
    constraint: str = "none"
    bc: str = "mathring"

    def __post_init__(self):
        if (self.rank, self.constraint) not in _NCOMP:
            raise BadSpacePairing(f"no space for rank={self.rank}, constraint={self.constraint}")
        if self.constraint == "tracefree" and self.grid.ndim != 3:
            raise BadSpacePairing("tracefree spaces are three-dimensional only")

    @property
    def ncomp(self) -> int:
        return _NCOMP[(self.rank, self.constraint)](self.grid.ndim)

    @property
    def dof_count(self) -> int:
        return self.ncomp * self.grid.node_count


@dataclass
class OperatorHandle:
    """Sparse operator with domain/codomain metadata and adjoint/successor links."""

    name: str
    matrix: sp.csr_matrix
    domain: SpaceDescriptor
    codomain: SpaceDescriptor
    adjoint: Optional["OperatorHandle"] = None
    successor: Optional["OperatorHandle"] = dc_field(default=None, repr=False)

    def __post_init__(self):
        if self.matrix.shape != (self.codomain.dof_count, self.domain.dof_count):
            raise BadSpacePairing(
                f"{self.name}: matrix {self.matrix.shape} does not match spaces "
                f"({self.codomain.dof_count} x {self.domain.dof_count})"
            )

    def apply(self, dofs: np.ndarray) -> np.ndarray:
        return self.matrix @ dofs

    def apply_field(self, f: FieldBase) -> FieldBase:
        dofs = pack(f, self.domain)
        return unpack(self.matrix @ dofs, self.codomain)

    def norm_estimate(self, iters: int = 30) -> float:
        """2-norm estimate by power iteration on A^T A (deterministic seed)."""
        rng = np.random.default_rng(12345)
        x = rng.standard_normal(self.matrix.shape[1])
        x /= np.linalg.norm(x)
        s = 0.0
        for _ in range(iters):
            y = self.matrix.T @ (self.matrix @ x)
            s = np.linalg.norm(y)
            if s == 0.0:
                return 0.0
            x = y / s
        return float(np.sqrt(s))


# ---------------------------------------------------------------------------
# assembly


def d1(n: int, h: float, periodic: bool, closure: str = "truncated") -> sp.csr_matrix:
    """1D centered-difference matrix on n nodes."""
    ones = np.ones(n - 1)
    D = sp.diags([-ones, ones], [-1, 1], shape=(n, n), format="lil") / (2 * h)
    if periodic:
        D[0, n - 1] = -1.0 / (2 * h)
        D[n - 1, 0] = 1.0 / (2 * h)
    elif closure == "onesided":
        D[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
        D[n - 1, n - 3:n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    elif closure != "truncated":
        raise ValueError(f"unknown closure {closure!r}")
    return D.tocsr()


def _axis_derivatives(grid: Grid, closure: str) -> list[sp.csr_matrix]:
    """Per-axis derivative matrices on the flat (x-fastest) node ordering."""
    mats_1d = [
        d1(n, h, grid.bc == "periodic", closure)
        for n, h in zip(grid.dims, grid.spacing)
    ]
    eyes = [sp.identity(n, format="csr") for n in grid.dims]
    out = []
    for a in range(grid.ndim):
        factors = [mats_1d[a] if i == a else eyes[i] for i in range(grid.ndim)]
        # x fastest in the flat ordering => axis-0 factor innermost in the kron
        M = factors[0]
        for f in factors[1:]:
            M = sp.kron(f, M, format="csr")
        out.append(M)
    return out


def _closure_for(grid: Grid, bc: str) -> str:
    if grid.bc == "periodic":
        return "truncated"
    return "onesided" if bc == "free" else "truncated"


_CACHE: dict = {}


def axis_derivatives(grid: Grid, bc: str = "mathring") -> list[sp.csr_matrix]:
    key = ("D", grid, _closure_for(grid, bc))
    if key not in _CACHE:
        _CACHE[key] = _axis_derivatives(grid, key[2])
    return _CACHE[key]


def _embedding(grid: Grid, frame: np.ndarray) -> sp.csr_matrix:
    """Sparse map from packed frame components to full d*d tensor components."""
    N = grid.node_count
    d = grid.ndim
    m = frame.shape[0]
    rows = []
    for c9 in range(d * d):
        i, j = divmod(c9, d)
        row = [
            frame[k, i, j] * sp.identity(N, format="csr") if frame[k, i, j] != 0.0
            else sp.csr_matrix((N, N))
            for k in range(m)
        ]
        rows.append(sp.hstack(row))
    return sp.vstack(rows, format="csr")


def embedding(grid: Grid, constraint: str) -> sp.csr_matrix:
    key = ("emb", grid, constraint)
    if key not in _CACHE:
        frame = sym_frame(grid.ndim) if constraint == "symmetric" else tracefree_frame()
        _CACHE[key] = _embedding(grid, frame)
    return _CACHE[key]


def _grad_matrix(grid, Ds):
    return sp.vstack(Ds, format="csr")


def _div_matrix(grid, Ds):
    return sp.hstack(Ds, format="csr")


def _rot_matrix(grid, Ds):
    """rot on vectors, 3D: (rot v)_k = eps_{kab} D_a v_b."""
    N = grid.node_count
    Z = sp.csr_matrix((N, N))
    rows = []
    for k in range(3):
        row = [Z, Z, Z]
        for a in range(3):
            for b in range(3):
                if EPS[k, a, b] != 0.0:
                    row[b] = row[b] + EPS[k, a, b] * Ds[a]
        rows.append(sp.hstack(row))
    return sp.vstack(rows, format="csr")


def _Grad_matrix(grid, Ds):
    """Row-wise gradient on vectors: (Grad v)_{ij} = D_j v_i, row-major blocks."""
    N = grid.node_count
    d = grid.ndim
    Z = sp.csr_matrix((N, N))
    rows = []
    for i in range(d):
        for j in range(d):
            row = [Z] * d
            row[i] = Ds[j]
            rows.append(sp.hstack(row))
    return sp.vstack(rows, format="csr")


def _Div_matrix(grid, Ds):
    """Row-wise divergence on tensors: (Div M)_i = sum_j D_j M_{ij}."""
    N = grid.node_count
    d = grid.ndim
    Z = sp.csr_matrix((N, N))
    rows = []
    for i in range(d):
        row = [Z] * (d * d)
        for j in range(d):
            row[d * i + j] = Ds[j]
        rows.append(sp.hstack(row))
    return sp.vstack(rows, format="csr")


def _Rot_matrix(grid, Ds):
    """Row-wise rotation on tensors: (Rot M)_{ik} = eps_{kab} D_a M_{ib}."""
    N = grid.node_count
    Z = sp.csr_matrix((N, N))
    rows = []
    for i in range(3):
        for k in range(3):
            row = [None] * 9
            for a in range(3):
                for b in range(3):
                    if EPS[k, a, b] != 0.0:
                        c = 3 * i + b
                        term = EPS[k, a, b] * Ds[a]
                        row[c] = term if row[c] is None else row[c] + term
            rows.append(sp.hstack([Z if r is None else r for r in row]))
    return sp.vstack(rows, format="csr")


_FIRST_ORDER = {
    "grad": (_grad_matrix, ("scalar", "none"), ("vector", "none")),
    "div": (_div_matrix, ("vector", "none"), ("scalar", "none")),
    "rot": (_rot_matrix, ("vector", "none"), ("vector", "none")),
    "Grad": (_Grad_matrix, ("vector", "none"), ("tensor", "none")),
    "Div": (_Div_matrix, ("tensor", "none"), ("vector", "none")),
    "Rot": (_Rot_matrix, ("tensor", "none"), ("tensor", "none")),
}


def build_first_order(grid: Grid, name: str, bc: str = "mathring") -> OperatorHandle:
    """Assemble one of grad/rot/div (vector calculus) or Grad/Rot/Div (row-wise)."""
    if name not in _FIRST_ORDER:
        raise BadSpacePairing(f"unknown first-order operator {name!r}")
    if name in ("rot", "Rot") and grid.ndim != 3:
        raise BadSpacePairing("rotation operators are three-dimensional only")
    key = ("op1", grid, name, _closure_for(grid, bc))
    if key not in _CACHE:
        builder, dom, cod = _FIRST_ORDER[name]
        Ds = axis_derivatives(grid, bc)
        M = builder(grid, Ds).tocsr()
        handle = OperatorHandle(
            name=name + ("" if bc == "mathring" else "_free"),
            matrix=M,
            domain=SpaceDescriptor(grid, dom[0], dom[1], bc),
            codomain=SpaceDescriptor(grid, cod[0], cod[1], bc),
        )
        _CACHE[key] = handle
    return _CACHE[key]


def _link_adjoint(A: OperatorHandle, name: str) -> OperatorHandle:
    """Attach the mass-weighted adjoint (literal transpose: uniform mass)."""
    adj = OperatorHandle(
        name=name,
        matrix=A.matrix.T.tocsr(),
        domain=A.codomain,
        codomain=A.domain,
    )
    adj.adjoint = A
    A.adjoint = adj
    return adj


def build_composite(grid: Grid, name: str, bc: str = "mathring") -> OperatorHandle:
    """Assemble a second-order / constrained operator as one sparse matrix.

    mathring variants (zero-extension stencils):

    * ``Gradgrad``: scalar -> symmetric tensor,
    * ``symRot``:   trace-free -> symmetric (equals transpose(Rot_S) exactly),
    * ``devGrad``:  vector -> trace-free (equals -transpose(Div_T) exactly),
    * ``divDiv``:   symmetric -> scalar (equals transpose(Gradgrad) exactly),
    * ``Rot_S``:    symmetric -> trace-free,
    * ``Div_T``:    trace-free -> vector,
    * ``symGrad``:  vector -> symmetric (2D/3D, for the elasticity stage).

    ``bc="free"`` swaps in the one-sided boundary closure (for kernel and
    interior-consistency diagnostics); duals of the mathring operators are
    reachable through ``.adjoint`` and are literal transposes.
    """
    valid = {"Gradgrad", "symRot", "devGrad", "divDiv", "Rot_S", "Div_T", "symGrad"}
    if name not in valid:
        raise BadSpacePairing(f"unknown composite operator {name!r}")
    if grid.ndim == 2 and name not in ("Gradgrad", "divDiv", "symGrad"):
        raise BadSpacePairing(f"{name} needs a 3D grid")
    key = ("op2", grid, name, _closure_for(grid, bc))
    if key in _CACHE:
        return _CACHE[key]

    Ds = axis_derivatives(grid, bc)
    d = grid.ndim
    iS = embedding(grid, "symmetric")
    iT = embedding(grid, "tracefree") if d == 3 else None
    sd = lambda rank, cons: SpaceDescriptor(grid, rank, cons, bc)

    if name == "Gradgrad":
        M = iS.T @ _Grad_matrix(grid, Ds) @ _grad_matrix(grid, Ds)
        handle = OperatorHandle("Gradgrad" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("scalar", "none"), sd("tensor", "symmetric"))
        if bc == "mathring":
            _link_adjoint(handle, "divDiv")
    elif name == "divDiv":
        M = _div_matrix(grid, Ds) @ _Div_matrix(grid, Ds) @ iS
        handle = OperatorHandle("divDiv" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("tensor", "symmetric"), sd("scalar", "none"))
        if bc == "mathring":
            _link_adjoint(handle, "Gradgrad")
    elif name == "Rot_S":
        M = iT.T @ _Rot_matrix(grid, Ds) @ iS
        handle = OperatorHandle("Rot_S" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("tensor", "symmetric"), sd("tensor", "tracefree"))
        if bc == "mathring":
            _link_adjoint(handle, "symRot")
    elif name == "symRot":
        M = iS.T @ _Rot_matrix(grid, Ds) @ iT
        handle = OperatorHandle("symRot" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("tensor", "tracefree"), sd("tensor", "symmetric"))
        if bc == "mathring":
            _link_adjoint(handle, "Rot_S")
    elif name == "Div_T":
        M = _Div_matrix(grid, Ds) @ iT
        handle = OperatorHandle("Div_T" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("tensor", "tracefree"), sd("vector", "none"))
        if bc == "mathring":
            _link_adjoint(handle, "-devGrad")
    elif name == "devGrad":
        M = iT.T @ _Grad_matrix(grid, Ds)
        handle = OperatorHandle("devGrad" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("vector", "none"), sd("tensor", "tracefree"))
        if bc == "mathring":
            # (Div_T)* = -devGrad, so devGrad = -transpose(Div_T)
            _link_adjoint(handle, "-Div_T")
    else:  # symGrad
        M = iS.T @ _Grad_matrix(grid, Ds)
        handle = OperatorHandle("symGrad" + ("_free" if bc == "free" else ""),
                                M.tocsr(), sd("vector", "none"), sd("tensor", "symmetric"))

    _CACHE[key] = handle
    _attach_successors(grid, bc)
    return handle


def _attach_successors(grid: Grid, bc: str) -> None:
    """Wire the complex links A_{k+1} A_k = 0 once all three pieces exist."""
    if grid.ndim != 3 or bc != "mathring":
        return

    def get(nm):
        return _CACHE.get(("op2", grid, nm, _closure_for(grid, bc)))

    gg, rs, dt = get("Gradgrad"), get("Rot_S"), get("Div_T")
    if gg is not None and rs is not None:
        gg.successor = rs
        # dual chain: symRot -> divDiv
        rs.adjoint.successor = gg.adjoint
    if rs is not None and dt is not None:
        rs.successor = dt
        dt.adjoint.successor = rs.adjoint


def laplacian(grid: Grid) -> sp.csr_matrix:
    """Wide discrete Dirichlet Laplacian, = -grad^T grad = divDiv((.)I)."""
    key = ("lap", grid)
    if key not in _CACHE:
        G = build_first_order(grid, "grad").matrix
        _CACHE[key] = (-(G.T @ G)).tocsr()
    return _CACHE[key]


# ---------------------------------------------------------------------------
# clamped-consistent compact second-order family (solver layer)
#
# The wide centered stencil decouples the even/odd sublattices, so every
# boundary-value solve built from squared wide differences converges to a
# parity-mixed problem instead of the Dirichlet one.  The solver layer
# therefore uses a compact Hessian: 3-point second differences on the
# diagonal (their reach never crosses the boundary, and the ghost value 0
# sits exactly on the boundary plane) and wide first-difference products
# for the mixed entries (reach +-1, equally boundary-safe).  This family
# is O(h^2)-consistent for clamped fields; its transpose still defines the
# exact discrete double divergence, and divDiv(u I) equals the standard
# compact (2d+1)-point Laplacian as a matrix identity.


def d2_compact(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    ones = np.ones(n - 1)
    D2 = sp.diags([ones, -2.0 * np.ones(n), ones], [-1, 0, 1],
                  shape=(n, n), format="lil") / (h * h)
    if periodic:
        D2[0, n - 1] = 1.0 / (h * h)
        D2[n - 1, 0] = 1.0 / (h * h)
    return D2.tocsr()


def _axis_second_derivatives(grid: Grid) -> list[sp.csr_matrix]:
    mats_1d = [
        d2_compact(n, h, grid.bc == "periodic")
        for n, h in zip(grid.dims, grid.spacing)
    ]
    eyes = [sp.identity(n, format="csr") for n in grid.dims]
    out = []
    for a in range(grid.ndim):
        factors = [mats_1d[a] if i == a else eyes[i] for i in range(grid.ndim)]
        M = factors[0]
        for f in factors[1:]:
            M = sp.kron(f, M, format="csr")
        out.append(M)
    return out


def _boundary_slope_rows(grid: Grid, axis: int) -> sp.csr_matrix:
    """Second differences centered on the two boundary planes of one axis.

    With the boundary value 0 and the clamped reflection u(-h) = u(h) the
    row value is 2 u_0 / h^2; the trapezoid quadrature weight h/2 scales the
    rows by sqrt(1/2), which makes B^T B reproduce the classical clamped
    fourth-difference closure (diagonal boost 2/h^4 on the first layer).
    """
    n = grid.dims[axis]
    h = grid.spacing[axis]
    lo = sp.lil_matrix((1, n))
    hi = sp.lil_matrix((1, n))
    lo[0, 0] = np.sqrt(2.0) / (h * h)
    hi[0, n - 1] = np.sqrt(2.0) / (h * h)
    rows_1d = sp.vstack([lo, hi]).tocsr()
    eyes = [sp.identity(m, format="csr") for m in grid.dims]
    factors = [rows_1d if i == axis else eyes[i] for i in range(grid.ndim)]
    M = factors[0]
    for f in factors[1:]:
        M = sp.kron(f, M, format="csr")
    return M.tocsr()


class ClampedHessian:
    """Clamped-consistent compact Hessian for the boundary-value solvers.

    Maps interior scalars to packed symmetric tensors augmented by boundary
    slope-penalty rows: 3-point second differences on the diagonal, wide
    first-difference products on the mixed entries (both stay O(h^2) up to
    the boundary), plus the boundary-plane rows that carry the clamped
    normal-derivative condition into the energy.  ``matrix``'s transpose is
    the discrete double divergence of the augmented representation, and
    ``divDiv(u I) = laplacian u`` holds exactly (the compact Laplacian).
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        Ds = axis_derivatives(grid, "mathring")
        D2s = _axis_second_derivatives(grid)
        d = grid.ndim
        N = grid.node_count
        frame = sym_frame(d)
        Z = sp.csr_matrix((N, N))
        # packed interior components follow the Mandel frame ordering
        blocks = []
        self._diag_rows = []   # rows of the diagonal (i,i) components
        for k in range(frame.shape[0]):
            idx = np.argwhere(frame[k] != 0.0)
            if len(idx) == 1:
                i = int(idx[0][0])
                blocks.append(D2s[i])
                self._diag_rows.append(k)
            else:
                i, j = int(idx[0][0]), int(idx[0][1])
                blocks.append(np.sqrt(2.0) * (Ds[i] @ Ds[j]).tocsr())
        penalties = [_boundary_slope_rows(grid, a) for a in range(d)]
        self.n_interior = frame.shape[0] * N
        self.n_penalty = sum(P.shape[0] for P in penalties)
        self.matrix = sp.vstack(blocks + penalties, format="csr")
        self.codomain = SpaceDescriptor(grid, "tensor", "symmetric", "mathring")

    def laplacian(self) -> sp.csr_matrix:
        return laplacian_compact(self.grid)

    def scalar_times_identity(self) -> sp.csr_matrix:
        """u -> u I in the augmented representation (penalty block zero)."""
        N = self.grid.node_count
        I = sp.identity(N, format="csr")
        Z = sp.csr_matrix((N, N))
        ncomp = self.n_interior // N
        rows = [I if k in self._diag_rows else Z for k in range(ncomp)]
        rows.append(sp.csr_matrix((self.n_penalty, N)))
        return sp.vstack(rows, format="csr")

    def interior_part(self, dofs: np.ndarray) -> np.ndarray:
        return dofs[: self.n_interior]

    def unpack_interior(self, dofs: np.ndarray):
        return unpack(self.interior_part(dofs), self.codomain)


def build_clamped_hessian(grid: Grid) -> ClampedHessian:
    key = ("ggcl", grid)
    if key not in _CACHE:
        _CACHE[key] = ClampedHessian(grid)
    return _CACHE[key]


def laplacian_compact(grid: Grid) -> sp.csr_matrix:
    """Standard compact Dirichlet Laplacian, = divDiv_clamped((.)I) exactly."""
    key = ("lapc", grid)
    if key not in _CACHE:
        D2s = _axis_second_derivatives(grid)
        _CACHE[key] = sum(D2s[1:], D2s[0]).tocsr()
    return _CACHE[key]


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Per-node quadrature weights (relative to the cell volume).

    Interior-node grids tile the box only if the end cells of every axis
    are widened to 3h/2; without this the node sum under-integrates fields
    that do not vanish at the boundary by O(h), which would cap free-space
    (natural boundary condition) solves at first order.  Periodic grids are
    exactly uniform.
    """
    key = ("qw", grid)
    if key not in _CACHE:
        if grid.bc == "periodic":
            _CACHE[key] = np.ones(grid.node_count)
        else:
            out = None
            for a in range(grid.ndim):
                wa = np.ones(grid.dims[a])
                wa[0] = wa[-1] = 1.5
                out = wa if out is None else np.multiply.outer(out, wa)
            _CACHE[key] = out.ravel(order="F")
    return _CACHE[key]


def scalar_times_identity_map(grid: Grid) -> sp.csr_matrix:
    """Sparse map u -> u I expressed in the packed symmetric frame."""
    key = ("uI", grid)
    if key not in _CACHE:
        N = grid.node_count
        d = grid.ndim
        I = sp.identity(N, format="csr")
        Z = sp.csr_matrix((N, N))
        ncomp = 6 if d == 3 else 3
        rows = [I if k < d else Z for k in range(ncomp)]
        _CACHE[key] = sp.vstack(rows, format="csr")
    return _CACHE[key]


# ---------------------------------------------------------------------------
# packing fields <-> dof vectors


def raw_dofs(grid: Grid, arr: np.ndarray) -> np.ndarray:
    """Component arrays (..., *dims) -> flat dof vector, x fastest per component."""
    comps = np.asarray(arr, dtype=float).reshape((-1,) + grid.dims)
    return np.concatenate([c.ravel(order="F") for c in comps])


def raw_from_dofs(grid: Grid, dofs: np.ndarray, lead_shape: tuple = ()) -> np.ndarray:
    """Flat dof vector -> component arrays with the given leading shape."""
    N = grid.node_count
    ncomp = int(np.prod(lead_shape)) if lead_shape else 1
    comps = [dofs[k * N:(k + 1) * N].reshape(grid.dims, order="F") for k in range(ncomp)]
    out = np.stack(comps) if ncomp > 1 else comps[0][None]
    return out.reshape(tuple(lead_shape) + grid.dims)


def pack(f: FieldBase, space: SpaceDescriptor) -> np.ndarray:
    """Field -> dof vector in the space's (possibly framed) components."""
    if f.grid != space.grid or f.rank != space.rank:
        raise BadSpacePairing("field does not match space descriptor")
    if space.constraint == "none":
        return f.dofs()
    frame = sym_frame(space.grid.ndim) if space.constraint == "symmetric" else tracefree_frame()
    comps = [
        np.einsum("ij,ij...->...", frame[k], f.data).ravel(order="F")
        for k in range(frame.shape[0])
    ]
    return np.concatenate(comps)


def unpack(dofs: np.ndarray, space: SpaceDescriptor) -> FieldBase:
    """Dof vector -> field (frames expanded back to full tensors)."""
    grid = space.grid
    if space.constraint == "none":
        return FIELD_CLASSES[space.rank].from_dofs(grid, dofs)
    frame = sym_frame(grid.ndim) if space.constraint == "symmetric" else tracefree_frame()
    N = grid.node_count
    d = grid.ndim
    data = np.zeros((d, d) + grid.dims)
    for k in range(frame.shape[0]):
        comp = dofs[k * N:(k + 1) * N].reshape(grid.dims, order="F")
        data += frame[k].reshape((d, d) + (1,) * d) * comp
    return TensorField(grid, data,
                       claims_symmetric=space.constraint == "symmetric",
                       claims_tracefree=space.constraint == "tracefree")


# ---------------------------------------------------------------------------
# diagnostics


def check_adjoint_pair(A: OperatorHandle, trials: int = 5, seed: int = 0) -> float:
    """Max normalized defect |<Ax,y> - <x,A*y>| over random dof probes."""
    if A.adjoint is None:
        raise NoAdjoint(f"{A.name} has no adjoint link")
    rng = np.random.default_rng(seed)
    vol = A.domain.grid.cell_volume
    nA = max(A.norm_estimate(), 1e-300)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(A.domain.dof_count)
        y = rng.standard_normal(A.codomain.dof_count)
        lhs = vol * float((A.matrix @ x) @ y)
        rhs = vol * float(x @ (A.adjoint.matrix @ y))
        denom = vol * np.linalg.norm(x) * np.linalg.norm(y) * nA
        worst = max(worst, abs(lhs - rhs) / denom)
    return worst


def composition_defect(B: OperatorHandle, A: OperatorHandle,
                       trials: int = 5, seed: int = 0) -> float:
    """Max-norm of B(A x) relative to |x|, over random probes (complex check)."""
    rng = np.random.default_rng(seed)
    nA = max(A.norm_estimate(), 1e-300)
    nB = max(B.norm_estimate(), 1e-300)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(A.domain.dof_count)
        y = B.matrix @ (A.matrix @ x)
        worst = max(worst, np.abs(y).max() / (nA * nB * np.linalg.norm(x)))
    return worst


def export_matrix_market(A: OperatorHandle, path) -> None:
    from scipy.io import mmwrite

    mmwrite(str(path), A.matrix, comment=f"{A.name}: {A.domain.rank}/{A.domain.constraint}"
            f" -> {A.codomain.rank}/{A.codomain.constraint}")
