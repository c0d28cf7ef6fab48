"""Closed-form clamped test cases with exact bilaplacian right-hand sides.

Every case is a separable product of one-axis profiles with double roots at
both box faces, so u and its normal derivative vanish on the boundary; f is
the analytic bilaplacian, never a discrete operator applied to samples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UnknownCase
from .grid_fields import Grid, ScalarField


@dataclass
class ManufacturedCase:
    name: str
    ndim: int
    lengths: tuple
    profile: Callable      # profile(axis, order, x) -> d^order s_axis / dx^order
    clamped: bool = True

    def u(self, X) -> np.ndarray:
        out = np.ones_like(X[0])
        for a in range(self.ndim):
            out = out * self.profile(a, 0, X[a])
        return out

    def deriv(self, orders, X) -> np.ndarray:
        """Mixed partial with the given per-axis orders (separable product)."""
        out = np.ones_like(X[0])
        for a in range(self.ndim):
            out = out * self.profile(a, orders[a], X[a])
        return out

    def f(self, X) -> np.ndarray:
        """Bilaplacian of u from fourth/second-derivative profiles."""
        d = self.ndim
        out = np.zeros_like(X[0])
        for i in range(d):
            orders = [0] * d
            orders[i] = 4
            out = out + self.deriv(orders, X)
        for i, j in itertools.combinations(range(d), 2):
            orders = [0] * d
            orders[i] = orders[j] = 2
            out = out + 2.0 * self.deriv(orders, X)
        return out

    def sample_u(self, grid: Grid) -> ScalarField:
        return ScalarField(grid, self.u(grid.coords()))

    def sample_f(self, grid: Grid) -> ScalarField:
        return ScalarField(grid, self.f(grid.coords()))


def _sin2_profile(L: float):
    a = np.pi / L

    def profile(axis, order, x):
        # s = sin^2(a x) = (1 - cos(2 a x)) / 2
        w = 2.0 * a
        if order == 0:
            return 0.5 * (1.0 - np.cos(w * x))
        if order == 1:
            return 0.5 * w * np.sin(w * x)
        if order == 2:
            return 0.5 * w ** 2 * np.cos(w * x)
        if order == 3:
            return -0.5 * w ** 3 * np.sin(w * x)
        if order == 4:
            return -0.5 * w ** 4 * np.cos(w * x)
        raise ValueError("profiles carry derivatives up to order 4")

    return profile


def _poly_profile(L: float):
    def profile(axis, order, x):
        # q = x^2 (L - x)^2
        if order == 0:
            return x * x * (L - x) ** 2
        if order == 1:
            return 2.0 * x * (L - x) * (L - 2.0 * x)
        if order == 2:
            return 2.0 * (L * L - 6.0 * L * x + 6.0 * x * x)
        if order == 3:
            return 12.0 * (2.0 * x - L)
        if order == 4:
            return 24.0 * np.ones_like(x)
        raise ValueError("profiles carry derivatives up to order 4")

    return profile


def get_case(name: str, lengths=None) -> ManufacturedCase:
    if name == "sin2-3d":
        L = lengths or (1.0, 1.0, 1.0)
        return ManufacturedCase(name, 3, tuple(L), _make_separable(_sin2_profile, L))
    if name == "poly-3d":
        L = lengths or (1.0, 1.0, 1.0)
        return ManufacturedCase(name, 3, tuple(L), _make_separable(_poly_profile, L))
    if name == "sin2-2d":
        L = lengths or (1.0, 1.0)
        return ManufacturedCase(name, 2, tuple(L), _make_separable(_sin2_profile, L))
    raise UnknownCase(f"unknown manufactured case {name!r}")


def _make_separable(profile_factory, lengths):
    profiles = [profile_factory(L) for L in lengths]

    def profile(axis, order, x):
        return profiles[axis](axis, order, x)

    return profile


def fd_bilaplacian(case: ManufacturedCase, points: np.ndarray,
                   h: float = 1e-2) -> np.ndarray:
    """Independent 4th-order finite-difference bilaplacian at sample points.

    Applies the 1D five-point fourth-derivative and long second-derivative
    stencils to the analytic u; used as the pre-flight oracle for f.
    """
    c4 = np.array([1.0, -4.0, 6.0, -4.0, 1.0]) / h ** 4
    # second derivative, fourth order: (-1, 16, -30, 16, -1) / (12 h^2)
    c2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    offs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0]) * h
    d = case.ndim
    out = np.zeros(points.shape[0])
    for p_idx, pt in enumerate(points):
        val = 0.0
        for i in range(d):
            for w, o in zip(c4, offs):
                q = pt.copy()
                q[i] += o
                val += w * case.u([np.array(q[a]) for a in range(d)])
        for i, j in itertools.combinations(range(d), 2):
            acc = 0.0
            for wi, oi in zip(c2, offs):
                for wj, oj in zip(c2, offs):
                    q = pt.copy()
                    q[i] += oi
                    q[j] += oj
                    acc += wi * wj * case.u([np.array(q[a]) for a in range(d)])
            val += 2.0 * acc
        out[p_idx] = val
    return out


def convergence_study(case_name: str, method: str, grids, tol: float = 1e-10):
    """Solve on a ladder of grids; returns rows of n, h, L2 error, rate."""
    from . import biharmonic as bh

    case = get_case(case_name)
    solvers = {
        "primal": bh.solve_primal,
        "mixed": bh.solve_mixed,
        "ddz": bh.solve_ddz,
        "decomposed": bh.solve_decomposed,
        "primal2d": bh.solve_primal_2d,
        "decomposed2d": bh.solve_decomposed_2d,
    }
    if method not in solvers:
        raise UnknownCase(f"unknown method {method!r}")
    if len(grids) < 3 or any(b <= a for a, b in zip(grids, grids[1:])):
        raise ValueError("need at least 3 strictly increasing grid sizes")
    rows = []
    prev = None
    for n in grids:
        grid = Grid((n,) * case.ndim, "zero", case.lengths)
        f = case.sample_f(grid)
        sol = solvers[method](f, tol=tol)
        u_exact = case.sample_u(grid)
        diff = sol.u - u_exact
        vol = grid.cell_volume
        err = float(np.sqrt(vol * np.sum(diff.data ** 2)))
        h = grid.spacing[0]
        rate = None
        if prev is not None:
            rate = float(np.log(prev[1] / err) / np.log(prev[0] / h))
        rows.append({"n": n, "h": h, "error": err, "rate": rate,
                     "method": method, "case": case_name})
        prev = (h, err)
    return rows


def write_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "h", "error", "rate", "method", "case"])
        for r in rows:
            w.writerow([r["n"], r["h"], r["error"],
                        "" if r["rate"] is None else r["rate"],
                        r["method"], r["case"]])
