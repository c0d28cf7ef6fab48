"""Four interchangeable solvers for the clamped biharmonic problem, the 2D
decomposition into Poisson / elasticity / Poisson stages, and the discrete
inf-sup constant of the mixed formulation.

All solvers work on zero-extension grids.  The mixed formulation's duality
pairings reduce to plain L2 forms because the double divergence of the
packed symmetric frame is the literal transpose of the packed Hessian, and
divDiv(u I) equals the wide Laplacian as a matrix identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .complex_tools import estimate_constant
from .diffops import (
    build_clamped_hessian,
    build_composite,
    build_first_order,
    laplacian,
    laplacian_compact,
    pack,
    quadrature_weights,
    raw_from_dofs,
    scalar_times_identity_map,
    unpack,
)
from .errors import NoConvergence
from .grid_fields import Grid, ScalarField, subspace
from .krylov import SolveReport, cg, minres


@dataclass
class BiharmonicSolution:
    method: str
    grid: Grid
    u: ScalarField
    p: ScalarField | None = None
    M: object = None          # symmetric TensorField (mixed / ddz)
    M0: object = None
    E: object = None          # trace-free TensorField (decomposed)
    v: object = None          # VectorField (decomposed / 2D elasticity)
    reports: list = dc_field(default_factory=list)
    diagnostics: dict = dc_field(default_factory=dict)


def _require_zero(grid: Grid):
    if grid.bc != "zero":
        raise ValueError("biharmonic solvers need a zero-extension grid")


def _stage(reports, rep: SolveReport, tag: str):
    rep.extra["stage"] = tag
    reports.append(rep)
    return rep


def _poisson(grid: Grid, rhs: np.ndarray, tol: float, maxit, tag: str):
    """Solve (-Lap) x = rhs by CG; Lap is the compact Dirichlet Laplacian."""
    neg_lap = (-laplacian_compact(grid)).tocsr()
    try:
        return cg(neg_lap, rhs, tol=tol, maxit=maxit, check_sym=False,
                  method_tag=tag)
    except NoConvergence as e:
        e.stage = tag
        raise


def solve_primal(f: ScalarField, tol: float = 1e-10,
                 maxit: int | None = None) -> BiharmonicSolution:
    """Fourth-order solve: Gradgrad^T Gradgrad u = f (CG, kernel-free)."""
    grid = f.grid
    _require_zero(grid)
    gg = build_clamped_hessian(grid).matrix
    A = (gg.T @ gg).tocsr()
    b = f.dofs()
    if maxit is None:
        maxit = max(2000, 120 * int(round(b.size ** (1.0 / 3.0))))
    try:
        u_dofs, rep = cg(A, b, tol=tol, maxit=maxit, check_sym=False,
                         method_tag="primal-cg")
    except NoConvergence as e:
        e.stage = "primal"
        raise
    rep.grid_dims = grid.dims
    u = ScalarField(grid, raw_from_dofs(grid, u_dofs, ()))
    vol = grid.cell_volume
    energy = vol * float((gg @ u_dofs) @ (gg @ u_dofs))
    load = vol * float(b @ u_dofs)
    sol = BiharmonicSolution("primal", grid, u, reports=[rep])
    sol.diagnostics["energy_identity_defect"] = abs(energy - load) / max(abs(load), 1e-300)
    return sol


def solve_mixed(f: ScalarField, tol: float = 1e-10,
                maxit: int | None = None) -> BiharmonicSolution:
    """Saddle solve for (M, u): <M,Psi> + <u, divDiv Psi> = 0, divDiv M = -f."""
    grid = f.grid
    _require_zero(grid)
    gg = build_clamped_hessian(grid)
    B = gg.matrix                        # u -> augmented S dofs; divDiv = B^T
    nS, nu = B.shape
    S = sp.bmat([[sp.identity(nS, format="csr"), B],
                 [B.T, None]], format="csr")
    rhs = np.concatenate([np.zeros(nS), -f.dofs()])
    if maxit is None:
        maxit = max(40000, 3000 * int(round(nu ** (1.0 / 3.0))))
    try:
        x, rep = minres(S, rhs, tol=tol, maxit=maxit, check_sym=False,
                        method_tag="mixed-minres")
    except NoConvergence as e:
        e.stage = "mixed"
        raise
    rep.grid_dims = grid.dims
    M_dofs, u_dofs = x[:nS], x[nS:]
    u = ScalarField(grid, raw_from_dofs(grid, u_dofs, ()))
    M = gg.unpack_interior(M_dofs)
    sol = BiharmonicSolution("mixed", grid, u, M=M, reports=[rep])
    sol.diagnostics["hessian_relation_defect"] = (
        np.linalg.norm(M_dofs + B @ u_dofs) / max(np.linalg.norm(M_dofs), 1e-300))
    return sol


def solve_ddz(f: ScalarField, tol: float = 1e-10,
              maxit: int | None = None) -> BiharmonicSolution:
    """Three-stage solve in (p, M0, u) with the divDiv-free constraint on M0.

    Stage 2 imposes divDiv M0 = 0 through a scalar multiplier field paired
    via the transpose (the packed Hessian), so the system stays symmetric.
    Reconstruction: M = p I + M0 equals the negative of the mixed solver's M.
    """
    grid = f.grid
    _require_zero(grid)
    gg = build_clamped_hessian(grid)
    B = gg.matrix
    nS, nu = B.shape
    reports = []

    p_dofs, rep1 = _poisson(grid, -f.dofs(), tol, maxit, "ddz-poisson-p")
    _stage(reports, rep1, "p")

    uI = gg.scalar_times_identity()
    S2 = sp.bmat([[sp.identity(nS, format="csr"), B],
                  [B.T, None]], format="csr")
    rhs2 = np.concatenate([-(uI @ p_dofs), np.zeros(nu)])
    try:
        x2, rep2 = minres(S2, rhs2, tol=tol,
                          maxit=maxit or max(40000, 3000 * int(round(nu ** (1 / 3)))),
                          check_sym=False, method_tag="ddz-minres-M0")
    except NoConvergence as e:
        e.stage = "M0"
        raise
    _stage(reports, rep2, "M0")
    M0_dofs = x2[:nS]

    trM0 = uI.T @ M0_dofs                # trace of the packed symmetric field
    u_dofs, rep3 = _poisson(grid, -(trM0 + 3.0 * p_dofs), tol, maxit, "ddz-poisson-u")
    _stage(reports, rep3, "u")

    p = ScalarField(grid, raw_from_dofs(grid, p_dofs, ()))
    u = ScalarField(grid, raw_from_dofs(grid, u_dofs, ()))
    M0 = gg.unpack_interior(M0_dofs)
    M = gg.unpack_interior(uI @ p_dofs + M0_dofs)
    sol = BiharmonicSolution("ddz", grid, u, p=p, M=M, M0=M0, reports=reports)
    sol.diagnostics["divdiv_M0_residual"] = float(
        np.linalg.norm(B.T @ M0_dofs) / max(np.linalg.norm(M0_dofs), 1e-300))
    return sol


def solve_decomposed(f: ScalarField, tol: float = 1e-10,
                     maxit: int | None = None) -> BiharmonicSolution:
    """Three-stage solve in (p, E, v, u) per the tensor decomposition.

    Stage 2 is the symmetric saddle system in (E, v, RT0 multipliers),
    discretized with the free (one-sided) tensor operators and end-weighted
    node quadrature: that family keeps symRot(devGrad v) = 0 exact (so the
    solution carries v = 0 up to solver tolerance), has the exact sampled
    RT0 kernel that the multipliers pin down, and stays consistent up to
    the boundary for natural boundary conditions.
    """
    grid = f.grid
    _require_zero(grid)
    reports = []

    p_dofs, rep1 = _poisson(grid, -f.dofs(), tol, maxit, "dec-poisson-p")
    _stage(reports, rep1, "p")

    sr = build_composite(grid, "symRot", bc="free")
    dg = build_composite(grid, "devGrad", bc="free")
    SR = sr.matrix                       # T dofs -> S dofs (one-sided)
    dG = dg.matrix                       # v dofs -> T dofs (one-sided)
    wq = quadrature_weights(grid)
    WS = sp.diags(np.tile(wq, 6))
    WT = sp.diags(np.tile(wq, 8))
    K = (SR.T @ WS @ SR).tocsr()
    G = (WT @ dG).tocsr()
    nE, nv = K.shape[0], G.shape[1]
    rt0 = subspace(grid, "RT0")
    sqv = np.sqrt(grid.cell_volume)
    Wv = sp.diags(np.tile(wq, 3))
    R = np.stack([Wv @ pack(b, dg.domain) * sqv for b in rt0.basis], axis=1)
    Rs = sp.csr_matrix(R)
    Z84 = sp.csr_matrix((nE, 4))
    S2 = sp.bmat([[K, G, Z84],
                  [G.T, None, Rs],
                  [Z84.T, Rs.T, None]], format="csr")
    uI = scalar_times_identity_map(grid)
    rhs2 = np.concatenate([-(SR.T @ (WS @ (uI @ p_dofs))), np.zeros(nv + 4)])
    try:
        x2, rep2 = minres(S2, rhs2, tol=tol,
                          maxit=maxit or max(40000, 3000 * int(round(nv ** (1 / 3)))),
                          check_sym=False, method_tag="dec-minres-E")
    except NoConvergence as e:
        e.stage = "E"
        raise
    _stage(reports, rep2, "E")
    E_dofs = x2[:nE]
    v_dofs = x2[nE:nE + nv]

    tr_symrot_E = uI.T @ (SR @ E_dofs)
    u_dofs, rep3 = _poisson(grid, -(3.0 * p_dofs + tr_symrot_E), tol, maxit,
                            "dec-poisson-u")
    _stage(reports, rep3, "u")

    p = ScalarField(grid, raw_from_dofs(grid, p_dofs, ()))
    u = ScalarField(grid, raw_from_dofs(grid, u_dofs, ()))
    E = unpack(E_dofs, sr.domain)
    v = unpack(v_dofs, dg.domain)
    sol = BiharmonicSolution("decomposed", grid, u, p=p, E=E, v=v, reports=reports)
    sol.diagnostics["v_over_E"] = (
        np.linalg.norm(v_dofs) / max(np.linalg.norm(E_dofs), 1e-300))
    # strong residual of stage 2 with the free rotation (discretization-order)
    Rot_free = build_first_order(grid, "Rot", bc="free")
    M_hat = unpack(uI @ p_dofs + SR @ E_dofs, sr.codomain)
    strong = Rot_free.matrix @ M_hat.dofs()
    sol.diagnostics["strong_rot_residual"] = float(
        np.linalg.norm(strong) * np.sqrt(grid.cell_volume))
    return sol


# ---------------------------------------------------------------------------
# 2D decomposition (Poisson -> Neumann elasticity -> Poisson)


def solve_primal_2d(f: ScalarField, tol: float = 1e-10,
                    maxit: int | None = None) -> BiharmonicSolution:
    grid = f.grid
    _require_zero(grid)
    gg = build_clamped_hessian(grid).matrix
    A = (gg.T @ gg).tocsr()
    b = f.dofs()
    try:
        u_dofs, rep = cg(A, b, tol=tol, maxit=maxit or max(4000, 60 * grid.dims[0]),
                         check_sym=False, method_tag="primal2d-cg")
    except NoConvergence as e:
        e.stage = "primal2d"
        raise
    u = ScalarField(grid, raw_from_dofs(grid, u_dofs, ()))
    return BiharmonicSolution("primal2d", grid, u, reports=[rep])


def solve_decomposed_2d(f: ScalarField, tol: float = 1e-10,
                        maxit: int | None = None) -> BiharmonicSolution:
    """2D: Poisson for p, Neumann elasticity for v (RM multipliers), Poisson for u."""
    grid = f.grid
    _require_zero(grid)
    if grid.ndim != 2:
        raise ValueError("solve_decomposed_2d needs a 2D grid")
    reports = []

    p_dofs, rep1 = _poisson(grid, -f.dofs(), tol, maxit, "dec2d-poisson-p")
    _stage(reports, rep1, "p")

    sg = build_composite(grid, "symGrad", bc="free")
    d_os = build_first_order(grid, "div", bc="free")
    wq = quadrature_weights(grid)
    WS = sp.diags(np.tile(wq, 3))
    Wsc = sp.diags(wq)
    Ks = (sg.matrix.T @ WS @ sg.matrix).tocsr()
    rm = subspace(grid, "RM")
    sqv = np.sqrt(grid.cell_volume)
    Wv = sp.diags(np.tile(wq, 2))
    R = np.stack([Wv @ pack(b, sg.domain) * sqv for b in rm.basis], axis=1)
    Rs = sp.csr_matrix(R)
    nv = Ks.shape[0]
    S2 = sp.bmat([[Ks, Rs], [Rs.T, None]], format="csr")
    # <symGrad v, symGrad w> + <p, div w> = 0 for all free w
    rhs2 = np.concatenate([-(d_os.matrix.T @ (Wsc @ p_dofs)), np.zeros(rm.dimension)])
    try:
        x2, rep2 = minres(S2, rhs2, tol=tol,
                          maxit=maxit or max(6000, 80 * grid.dims[0]),
                          check_sym=False, method_tag="dec2d-minres-v")
    except NoConvergence as e:
        e.stage = "v"
        raise
    _stage(reports, rep2, "v")
    v_dofs = x2[:nv]
    mu = x2[nv:]

    u_dofs, rep3 = _poisson(grid, -(2.0 * p_dofs + d_os.matrix @ v_dofs), tol,
                            maxit, "dec2d-poisson-u")
    _stage(reports, rep3, "u")

    p = ScalarField(grid, raw_from_dofs(grid, p_dofs, ()))
    u = ScalarField(grid, raw_from_dofs(grid, u_dofs, ()))
    v = unpack(v_dofs, sg.domain)
    sol = BiharmonicSolution("decomposed2d", grid, u, p=p, v=v, reports=reports)
    resid = rhs2[:nv] - Ks @ v_dofs - Rs @ mu
    rm_comp = np.linalg.norm(R.T @ resid) / max(np.linalg.norm(rhs2), 1e-300)
    sol.diagnostics["rm_orthogonality"] = float(rm_comp)
    return sol


# ---------------------------------------------------------------------------
# discrete inf-sup constant of the mixed form


def check_infsup(grid: Grid, seed: int = 0):
    """Discrete inf-sup constant of the coupling block, plus the test bound.

    Returns a dict with the computed constant beta, the Friedrichs bound
    (3 c_g^2 + 1)^(-1/2) from the same grid, and the quotient achieved by
    the paper-style test tensor Phi = -phi I on a random phi.
    """
    _require_zero(grid)
    if grid.node_count > 729:
        raise NoConvergence("inf-sup evaluation is dense; use a grid <= 9^3")
    gg = build_composite(grid, "Gradgrad")
    B = gg.matrix.toarray()              # u -> S; divDiv = B^T
    L = (-laplacian(grid)).toarray()
    D = B.T                              # S -> u (divDiv)
    Linv = np.linalg.inv(L)
    Y = np.eye(D.shape[1]) + D.T @ Linv @ D
    # beta^2 = lambda_min( L^{-1/2} D Y^{-1} D^T L^{-1/2} )
    Yinv = np.linalg.inv(Y)
    core = D @ Yinv @ D.T
    w, V = np.linalg.eigh(L)
    Lmhalf = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
    G = Lmhalf @ core @ Lmhalf
    beta = float(np.sqrt(max(np.linalg.eigvalsh(G).min(), 0.0)))

    cg_est = estimate_constant("c_g", grid)
    bound = float(1.0 / np.sqrt(3.0 * cg_est.value ** 2 + 1.0))

    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(grid.node_count)
    uI = scalar_times_identity_map(grid).toarray()
    Phi = -(uI @ phi)
    num = float(phi @ (D @ Phi))
    den = float(np.sqrt(phi @ L @ phi) * np.sqrt(Phi @ Y @ Phi))
    test_quotient = abs(num) / den
    return {
        "beta": beta,
        "bound": bound,
        "c_g": cg_est.value,
        "test_quotient": test_quotient,
        "grid": list(grid.dims),
    }
