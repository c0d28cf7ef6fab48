"""Krylov solvers: conjugate gradients and a MINRES wrapper with reports."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, NonSymmetricOperator


@dataclass
class SolveReport:
    method: str
    iterations: int
    relative_residual: float
    wall_time_s: float
    tol: float
    converged: bool
    grid_dims: tuple = ()
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        d = asdict(self)
        d["grid_dims"] = list(self.grid_dims)
        return d


def _as_apply(A):
    if sp.issparse(A):
        return lambda x: A @ x
    if isinstance(A, np.ndarray):
        return lambda x: A @ x
    return A


def check_symmetry(apply_A, n: int, probes: int = 3, seed: int = 99,
                   tol: float = 1e-12) -> None:
    """Probabilistic symmetry check; raises NonSymmetricOperator on failure."""
    rng = np.random.default_rng(seed)
    for _ in range(probes):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        Ax, Ay = apply_A(x), apply_A(y)
        scale = np.linalg.norm(Ax) * np.linalg.norm(y) + np.linalg.norm(Ay) * np.linalg.norm(x)
        defect = abs(float(Ax @ y) - float(x @ Ay))
        if defect > tol * max(scale, 1e-300):
            raise NonSymmetricOperator(f"symmetry defect {defect:.2e} vs scale {scale:.2e}")


def cg(A, b, tol: float = 1e-10, maxit: int | None = None, M=None,
       check_sym: bool = True, method_tag: str = "cg",
       raise_on_fail: bool = True):
    """Preconditioned conjugate gradients for SPD (or consistent SPSD) systems.

    Stops at ||Ax - b|| <= tol * ||b||.  Detects residual stagnation so that
    range-membership certification (NotInRange detection upstream) can rely
    on a finite run time even for inconsistent right-hand sides.
    """
    apply_A = _as_apply(A)
    n = b.size
    if maxit is None:
        maxit = max(200, 50 * int(round(n ** (1.0 / 3.0))))
    if check_sym:
        check_symmetry(apply_A, n)
    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        rep = SolveReport(method_tag, 0, 0.0, time.perf_counter() - t0, tol, True)
        return np.zeros(n), rep
    apply_M = _as_apply(M) if M is not None else (lambda x: x)
    x = np.zeros(n)
    it = 0
    stalled = False
    for _sweep in range(4):
        r = b - apply_A(x)
        if np.linalg.norm(r) <= tol * bnorm or it >= maxit or stalled:
            break
        z = apply_M(r)
        p = z.copy()
        rz = float(r @ z)
        best = np.inf
        stagnant = 0
        while it < maxit:
            it += 1
            Ap = apply_A(p)
            pAp = float(p @ Ap)
            if pAp <= 0.0:
                stalled = True
                break  # lost positivity (kernel direction); bail with best iterate
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            rn = np.linalg.norm(r)
            if rn <= 0.5 * tol * bnorm:
                break
            if rn < 0.9999 * best:
                best, stagnant = rn, 0
            else:
                stagnant += 1
                if stagnant >= 500:
                    stalled = True  # hard plateau: no shrinkage at all
                    break
            z = apply_M(r)
            rz_new = float(r @ z)
            beta = rz_new / rz
            rz = rz_new
            p = z + beta * p
    rel = float(np.linalg.norm(b - apply_A(x)) / bnorm)
    rep = SolveReport(method_tag, it, rel, time.perf_counter() - t0, tol, rel <= tol)
    if not rep.converged and raise_on_fail:
        raise NoConvergence(f"cg: residual {rel:.3e} > tol {tol:.1e} after {it} iters",
                            report=rep)
    return x, rep


def minres(A, b, tol: float = 1e-10, maxit: int | None = None, M=None,
           check_sym: bool = True, method_tag: str = "minres",
           raise_on_fail: bool = True):
    """MINRES for symmetric (possibly indefinite or singular-consistent) systems."""
    apply_A = _as_apply(A)
    n = b.size
    if maxit is None:
        maxit = max(500, 100 * int(round(n ** (1.0 / 3.0))))
    if check_sym:
        check_symmetry(apply_A, n)
    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        rep = SolveReport(method_tag, 0, 0.0, time.perf_counter() - t0, tol, True)
        return np.zeros(n), rep
    lin = spla.LinearOperator((n, n), matvec=apply_A)
    Mop = None
    if M is not None:
        apply_M = _as_apply(M)
        Mop = spla.LinearOperator((n, n), matvec=apply_M)
    iters = [0]

    def cb(xk):
        iters[0] += 1

    # scipy's minres stops on a backward-error test (relative to |A||x|, which
    # can sit orders above tol * |b|); run each sweep to its accuracy floor
    # and restart on the residual equation until the true residual meets tol
    x = np.zeros(n)
    rel = 1.0
    for _ in range(8):
        r = b - apply_A(x)
        rel = float(np.linalg.norm(r) / bnorm)
        if rel <= tol or iters[0] >= maxit:
            break
        dx, info = spla.minres(lin, r, rtol=1e-15,
                               maxiter=maxit - iters[0], M=Mop, callback=cb)
        x = x + dx
    rel = float(np.linalg.norm(b - apply_A(x)) / bnorm)
    converged = rel <= tol
    rep = SolveReport(method_tag, iters[0], rel, time.perf_counter() - t0, tol, converged)
    if not converged and raise_on_fail:
        raise NoConvergence(f"minres: residual {rel:.3e} > tol {tol:.1e}", report=rep)
    return x, rep
