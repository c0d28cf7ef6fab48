"""Registry and runner for the tensor-calculus identity suite.

Each identity is an executable lhs/rhs pair.  The lhs goes through the
assembled sparse operators; the rhs is evaluated by an independent
shift-based path plus pointwise tensor algebra, so a passing run certifies
that the sparse assembly matches the stencil semantics to rounding.

Product (cutoff) rules are realized in their discrete-exact Leibniz form:
the centered difference obeys D(fg) = avg(f) D(g) + D(f) avg(g) exactly,
where avg is the two-point axis average, so every cross term carries the
axis average of the non-differentiated factor.  These forms reduce to the
classical formulas as h -> 0 and hold to rounding on any grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import tensor_algebra as ta
from .diffops import EPS, build_composite, build_first_order, pack, unpack
from .errors import GridTooLarge, UnknownIdentity, WrongMode
from .grid_fields import Grid, random_smooth_field

# ---------------------------------------------------------------------------
# independent shift-based derivative path (the oracle side)


def _shift(arr: np.ndarray, grid: Grid, axis: int, step: int) -> np.ndarray:
    """Shift grid axis by step nodes; wraparound or zero-fill per grid mode."""
    ax = arr.ndim - grid.ndim + axis
    if grid.bc == "periodic":
        return np.roll(arr, -step, axis=ax)
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if step > 0:
        src[ax] = slice(step, None)
        dst[ax] = slice(None, -step)
    else:
        src[ax] = slice(None, step)
        dst[ax] = slice(-step, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def dsh(arr: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Centered difference along one grid axis (shift-based path)."""
    h = grid.spacing[axis]
    return (_shift(arr, grid, axis, +1) - _shift(arr, grid, axis, -1)) / (2 * h)


def ash(arr: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Two-point axis average; the exact-Leibniz companion of :func:`dsh`."""
    return 0.5 * (_shift(arr, grid, axis, +1) + _shift(arr, grid, axis, -1))


def grad_sh(u, grid):
    return np.stack([dsh(u, grid, a) for a in range(3)])


def div_sh(v, grid):
    return sum(dsh(v[a], grid, a) for a in range(3))


def rot_sh(v, grid):
    return np.stack([
        sum(EPS[k, a, b] * dsh(v[b], grid, a)
            for a in range(3) for b in range(3) if EPS[k, a, b] != 0.0)
        for k in range(3)
    ])


def Grad_sh(v, grid):
    return np.stack([grad_sh(v[i], grid) for i in range(3)])


def Div_sh(M, grid):
    return np.stack([div_sh(M[i], grid) for i in range(3)])


def Rot_sh(M, grid):
    return np.stack([rot_sh(M[i], grid) for i in range(3)])


# ---------------------------------------------------------------------------
# sparse-path helpers (full 9-component tensor pipelines)


def _sparse_ops(grid: Grid):
    g = build_first_order(grid, "grad")
    d = build_first_order(grid, "div")
    r = build_first_order(grid, "rot")
    G = build_first_order(grid, "Grad")
    D = build_first_order(grid, "Div")
    R = build_first_order(grid, "Rot")
    return g, d, r, G, D, R


def _tensor_dofs(grid, T):
    comps = T.reshape((9,) + grid.dims)
    return np.concatenate([c.ravel(order="F") for c in comps])


def _tensor_from_dofs(grid, dofs):
    N = grid.node_count
    return np.stack([
        dofs[k * N:(k + 1) * N].reshape(grid.dims, order="F") for k in range(9)
    ]).reshape((3, 3) + grid.dims)


def _vector_dofs(grid, v):
    return np.concatenate([v[a].ravel(order="F") for a in range(3)])


def _vector_from_dofs(grid, dofs):
    N = grid.node_count
    return np.stack([dofs[k * N:(k + 1) * N].reshape(grid.dims, order="F")
                     for k in range(3)])


def _scalar_from_dofs(grid, dofs):
    return dofs.reshape(grid.dims, order="F")


def sparse_grad(grid, u):
    g = build_first_order(grid, "grad")
    return _vector_from_dofs(grid, g.matrix @ u.ravel(order="F"))


def sparse_div(grid, v):
    d = build_first_order(grid, "div")
    return _scalar_from_dofs(grid, d.matrix @ _vector_dofs(grid, v))


def sparse_rot(grid, v):
    r = build_first_order(grid, "rot")
    return _vector_from_dofs(grid, r.matrix @ _vector_dofs(grid, v))


def sparse_Grad(grid, v):
    G = build_first_order(grid, "Grad")
    return _tensor_from_dofs(grid, G.matrix @ _vector_dofs(grid, v))


def sparse_Div(grid, M):
    D = build_first_order(grid, "Div")
    return _vector_from_dofs(grid, D.matrix @ _tensor_dofs(grid, M))


def sparse_Rot(grid, M):
    R = build_first_order(grid, "Rot")
    return _tensor_from_dofs(grid, R.matrix @ _tensor_dofs(grid, M))


# ---------------------------------------------------------------------------
# the registry


@dataclass
class IdentityCase:
    id: str
    description: str
    rank_in: str            # rank of the random input field
    mode: str               # "periodic" or "either"
    evaluate: Callable      # (grid, field_data) -> (lhs, rhs, scale)


def _relative_residual(lhs, rhs, scale):
    return float(np.abs(lhs - rhs).max() / max(scale, 1e-300))


def _mag(*arrays):
    return max(float(np.abs(a).max()) for a in arrays)


def _case_a_i(grid, u):
    gg = sparse_Grad(grid, sparse_grad(grid, u))
    lhs = ta.skw(gg)
    return lhs, np.zeros_like(lhs), _mag(gg)


def _case_a_ii(grid, w):
    M = ta.spn(w)
    lhs = sparse_div(grid, sparse_Div(grid, M))
    scale = _mag(sparse_Div(grid, M)) / min(grid.spacing)
    return lhs, np.zeros_like(lhs), scale


def _case_a_iii(grid, u):
    lhs = sparse_Rot(grid, ta.scalar_times_identity(u))
    rhs = -ta.spn(grad_sh(u, grid))
    return lhs, rhs, _mag(lhs, rhs)


def _case_a_iv(grid, M):
    lhs = ta.tr(sparse_Rot(grid, M))
    rhs = 2.0 * div_sh(ta.spn_inv(ta.skw(M)), grid)
    return lhs, rhs, _mag(sparse_Rot(grid, M))


def _case_a_v(grid, u):
    lhs = sparse_Div(grid, ta.scalar_times_identity(u))
    rhs = grad_sh(u, grid)
    return lhs, rhs, _mag(lhs, rhs)


def _case_a_vi(grid, v):
    lhs = ta.tr(sparse_Grad(grid, v))
    rhs = div_sh(v, grid)
    return lhs, rhs, _mag(sparse_Grad(grid, v))


def _case_a_vii(grid, v):
    lhs = sparse_Div(grid, ta.spn(v))
    rhs = -rot_sh(v, grid)
    return lhs, rhs, _mag(lhs, rhs)


def _case_a_viii(grid, v):
    lhs = sparse_Rot(grid, ta.spn(v))
    G = Grad_sh(v, grid)
    rhs = ta.scalar_times_identity(div_sh(v, grid)) - ta.transpose(G)
    return lhs, rhs, _mag(lhs, rhs, G)


def _case_a_ix(grid, v):
    lhs = ta.skw(sparse_Grad(grid, v))
    rhs = 0.5 * ta.spn(rot_sh(v, grid))
    return lhs, rhs, _mag(sparse_Grad(grid, v))


def _case_a_x(grid, M):
    RotM = sparse_Rot(grid, M)
    w = 0.5 * (Div_sh(ta.transpose(M), grid) - grad_sh(ta.tr(M), grid))
    lhs1 = ta.skw(RotM)
    rhs1 = ta.spn(w)
    lhs2 = sparse_Div(grid, ta.sym(RotM))
    rhs2 = rot_sh(w, grid)
    scale = _mag(RotM, lhs2, rhs2)
    lhs = np.concatenate([lhs1.ravel(), lhs2.ravel()])
    rhs = np.concatenate([rhs1.ravel(), rhs2.ravel()])
    return lhs, rhs, scale


def _case_a_xi(grid, v):
    lhs = sparse_grad(grid, sparse_div(grid, v))
    rhs = 1.5 * Div_sh(ta.dev(ta.transpose(Grad_sh(v, grid))), grid)
    return lhs, rhs, _mag(lhs, rhs)


def bump_field(grid: Grid) -> np.ndarray:
    """Smooth periodic cutoff: product of raised cosines, in [0, 1]."""
    X = grid.coords()
    phi = np.ones(grid.dims)
    for a in range(grid.ndim):
        phi = phi * 0.5 * (1.0 - np.cos(2 * np.pi * X[a] / grid.lengths[a]))
    return phi


def _rot_leibniz_terms(grid, phi, M):
    """Exact split Rot(phi M) = [phi Rot M]_avg + [grad phi x M]_avg."""
    t_phi = np.zeros((3, 3) + grid.dims)
    t_cross = np.zeros((3, 3) + grid.dims)
    for i in range(3):
        for k in range(3):
            for a in range(3):
                for b in range(3):
                    e = EPS[k, a, b]
                    if e == 0.0:
                        continue
                    t_phi[i, k] += e * ash(phi, grid, a) * dsh(M[i, b], grid, a)
                    t_cross[i, k] += e * dsh(phi, grid, a) * ash(M[i, b], grid, a)
    return t_phi, t_cross


def _div_leibniz_terms(grid, phi, E):
    t_phi = np.zeros((3,) + grid.dims)
    t_dot = np.zeros((3,) + grid.dims)
    for i in range(3):
        for j in range(3):
            t_phi[i] += ash(phi, grid, j) * dsh(E[i, j], grid, j)
            t_dot[i] += dsh(phi, grid, j) * ash(E[i, j], grid, j)
    return t_phi, t_dot


def _case_c_rot(grid, M):
    phi = bump_field(grid)
    lhs = sparse_Rot(grid, phi * M)
    t_phi, t_cross = _rot_leibniz_terms(grid, phi, M)
    rhs = t_phi + t_cross
    return lhs, rhs, _mag(lhs, rhs, M) / min(grid.spacing)


def _case_c_i(grid, M):
    return _case_c_rot(grid, M)


def _case_c_ii(grid, M):
    return _case_c_rot(grid, ta.sym(M))


def _case_c_iii(grid, E):
    phi = bump_field(grid)
    lhs = sparse_Div(grid, phi * E)
    t_phi, t_dot = _div_leibniz_terms(grid, phi, E)
    return lhs, t_phi + t_dot, _mag(lhs, E) / min(grid.spacing)


def _case_c_iv(grid, E):
    return _case_c_iii(grid, ta.dev(E))


def _case_c_v(grid, E):
    E = ta.dev(E)
    phi = bump_field(grid)
    lhs = ta.sym(sparse_Rot(grid, phi * E))
    t_phi, t_cross = _rot_leibniz_terms(grid, phi, E)
    rhs = ta.sym(t_phi) + ta.sym(t_cross)
    return lhs, rhs, _mag(lhs, E) / min(grid.spacing)


def _case_c_vi(grid, M):
    M = ta.sym(M)
    phi = bump_field(grid)
    lhs = sparse_div(grid, sparse_Div(grid, phi * M))
    term_phi = np.zeros(grid.dims)
    term_cross = np.zeros(grid.dims)
    term_hess = np.zeros(grid.dims)
    for i in range(3):
        for j in range(3):
            Mij = M[i, j]
            term_phi += ash(ash(phi, grid, j), grid, i) * dsh(dsh(Mij, grid, j), grid, i)
            term_cross += dsh(ash(phi, grid, j), grid, i) * ash(dsh(Mij, grid, j), grid, i)
            term_cross += ash(dsh(phi, grid, j), grid, i) * dsh(ash(Mij, grid, j), grid, i)
            term_hess += dsh(dsh(phi, grid, j), grid, i) * ash(ash(Mij, grid, j), grid, i)
    rhs = term_phi + term_cross + term_hess
    return lhs, rhs, _mag(lhs, M) / min(grid.spacing) ** 2


def _case_g1(grid, v):
    Gv = sparse_Grad(grid, v)
    dG = ta.dev(Gv)
    worst_num = 0.0
    scale = 0.0
    for k in range(3):
        dk_G = dsh(Gv, grid, k)
        scale = max(scale, float(np.abs(dk_G).max()))
        for i in range(3):
            for j in range(3):
                lhs = dk_G[i, j]
                if i != j:
                    rhs = dsh(dG[i, j], grid, k)
                elif i != k:
                    rhs = dsh(dG[i, k], grid, j)
                else:
                    rhs = 1.5 * dsh(dG[i, i], grid, i)
                    for l in range(3):
                        if l != i:
                            rhs = rhs + 0.5 * dsh(dG[l, i], grid, l)
                worst_num = max(worst_num, float(np.abs(lhs - rhs).max()))
    return np.array([worst_num]), np.array([0.0]), scale


_REGISTRY: dict[str, IdentityCase] = {}


def _register(id, description, rank_in, mode, fn):
    _REGISTRY[id] = IdentityCase(id, description, rank_in, mode, fn)


_register("A.i", "Hessians are symmetric: skw Gradgrad u = 0", "scalar", "either", _case_a_i)
_register("A.ii", "divDiv of a skew tensor vanishes", "vector", "either", _case_a_ii)
_register("A.iii", "Rot(u I) = -spn grad u", "scalar", "either", _case_a_iii)
_register("A.iv", "tr Rot M = 2 div spn^-1 skw M", "tensor", "either", _case_a_iv)
_register("A.v", "Div(u I) = grad u", "scalar", "either", _case_a_v)
_register("A.vi", "tr Grad v = div v", "vector", "either", _case_a_vi)
_register("A.vii", "Div spn v = -rot v", "vector", "either", _case_a_vii)
_register("A.viii", "Rot spn v = (div v) I - (Grad v)^T", "vector", "either", _case_a_viii)
_register("A.ix", "2 skw Grad v = spn rot v", "vector", "either", _case_a_ix)
_register("A.x", "skw Rot M = spn w, Div sym Rot M = rot w", "tensor", "either", _case_a_x)
_register("A.xi", "grad div v = 3/2 Div dev (Grad v)^T", "vector", "either", _case_a_xi)
_register("C.i", "Rot(phi M): cutoff rule, general M", "tensor", "periodic", _case_c_i)
_register("C.ii", "Rot(phi M): cutoff rule, symmetric M", "tensor", "periodic", _case_c_ii)
_register("C.iii", "Div(phi E): cutoff rule, general E", "tensor", "periodic", _case_c_iii)
_register("C.iv", "Div(phi E): cutoff rule, trace-free E", "tensor", "periodic", _case_c_iv)
_register("C.v", "symRot(phi E): cutoff rule, trace-free E", "tensor", "periodic", _case_c_v)
_register("C.vi", "divDiv(phi M): cutoff rule, symmetric M", "tensor", "periodic", _case_c_vi)
_register("G.1", "second derivatives of Grad v from devGrad v", "vector", "periodic", _case_g1)


def identity_ids() -> list[str]:
    return list(_REGISTRY)


def run_identity(id: str, grid: Grid, seed: int = 0, trials: int = 1,
                 negate: bool = False) -> float:
    """Max relative residual of one identity over seeded random fields."""
    if id not in _REGISTRY:
        raise UnknownIdentity(f"unknown identity {id!r}")
    case = _REGISTRY[id]
    if case.mode == "periodic" and grid.bc != "periodic":
        raise WrongMode(f"{id} requires a periodic grid")
    band = max(1, min(min(grid.dims) // 4, 2))
    worst = 0.0
    for t in range(trials):
        f = random_smooth_field(grid, case.rank_in, seed + 7919 * t, band)
        lhs, rhs, scale = case.evaluate(grid, f.data)
        if negate:
            rhs = -rhs if np.abs(rhs).max() > 0 else rhs + scale
        worst = max(worst, _relative_residual(lhs, rhs, scale))
    return worst


def run_cutoff_rule(id: str, grid: Grid, seed: int = 0) -> float:
    if not id.startswith("C."):
        raise UnknownIdentity(f"{id!r} is not a cutoff rule")
    return run_identity(id, grid, seed=seed, trials=1)


def run_second_derivative_reconstruction(grid: Grid, seed: int = 0) -> float:
    return run_identity("G.1", grid, seed=seed, trials=1)


def run_all(grid: Grid, seeds=(0,), trials: int = 1):
    """Run every identity admissible on this grid; returns {id: residual}."""
    out = {}
    for id, case in _REGISTRY.items():
        if case.mode == "periodic" and grid.bc != "periodic":
            continue
        out[id] = max(run_identity(id, grid, seed=s, trials=trials) for s in seeds)
    return out


# ---------------------------------------------------------------------------
# kernel characterizations (dense SVD at small sizes)

_DENSE_NODE_CAP = 1000


def _small_svd_count(matrix, thresh_rel=1e-8):
    s = sla.svdvals(matrix.toarray())
    return int((s < thresh_rel * s.max()).sum())


def gradgrad_kernel_dim(grid: Grid) -> int:
    """dim N(Gradgrad) on a zero-extension grid (expected 0)."""
    if grid.node_count > _DENSE_NODE_CAP:
        raise GridTooLarge("dense kernel check capped at ~10^3 nodes")
    return _small_svd_count(build_composite(grid, "Gradgrad").matrix)


def devgrad_free_kernel_dim(grid: Grid) -> int:
    """dim N(devGrad) with the free (one-sided) closure (expected 4 = dim RT0)."""
    if grid.node_count > _DENSE_NODE_CAP:
        raise GridTooLarge("dense kernel check capped at ~10^3 nodes")
    return _small_svd_count(build_composite(grid, "devGrad", bc="free").matrix)
