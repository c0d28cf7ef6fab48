"""Batch command-line front end.

Exit codes: 0 pass, 2 embedded assertion failed, 3 configuration error,
4 solver non-convergence.  All reports are JSON (CSV for convergence
tables); outputs are deterministic for a fixed (config, seed).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import biharmonic as bh
from . import complex_tools as ct
from . import identity_suite as ids
from . import manufactured as mnf
from .errors import GgddError, NoConvergence, WrongMode
from .grid_fields import Grid, write_field

EXIT_OK = 0
EXIT_ASSERT = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4

IDENTITY_TOL = 1e-12


def _parse_grids(text):
    try:
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise ValueError(f"bad grid list {text!r}")


def _emit(report, path):
    text = json.dumps(report, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _make_grid(n, mode, ndim=3):
    return Grid((n,) * ndim, "periodic" if mode == "periodic" else "zero")


def cmd_verify_identities(args):
    grids = _parse_grids(args.grid or "8,16")
    seeds = list(range(args.seed, args.seed + args.trials))
    results = []
    ok = True
    for n in grids:
        grid = _make_grid(n, "periodic")
        for id in ids.identity_ids():
            res = max(
                ids.run_identity(id, grid, seed=s,
                                 negate=(id == args.negate_identity))
                for s in seeds
            )
            passed = res <= IDENTITY_TOL
            ok = ok and passed
            results.append({"id": id, "grid": n, "residual": res, "pass": passed})
    _emit(results, args.report)
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_solve(args):
    if not args.case:
        raise ValueError("solve needs --case")
    method = args.method or "primal"
    solvers = {
        "primal": (bh.solve_primal, 3),
        "mixed": (bh.solve_mixed, 3),
        "ddz": (bh.solve_ddz, 3),
        "decomposed": (bh.solve_decomposed, 3),
        "primal2d": (bh.solve_primal_2d, 2),
        "decomposed2d": (bh.solve_decomposed_2d, 2),
    }
    if method not in solvers:
        raise ValueError(f"unknown method {method!r}")
    solver, ndim = solvers[method]
    case = mnf.get_case(args.case if ndim == 3 or args.case.endswith("2d")
                        else args.case)
    if case.ndim != ndim:
        raise ValueError(f"case {case.name} is {case.ndim}D but method {method} is {ndim}D")
    n = _parse_grids(args.grid or "12")[0]
    grid = Grid((n,) * ndim, "zero", case.lengths)
    f = case.sample_f(grid)
    try:
        sol = solver(f, tol=args.tol)
    except NoConvergence as e:
        _emit({"error": str(e), "stage": e.stage}, args.report)
        return EXIT_SOLVER
    report = {
        "method": method,
        "case": case.name,
        "grid": list(grid.dims),
        "reports": [r.as_dict() for r in sol.reports],
        "diagnostics": sol.diagnostics,
    }
    if args.out:
        write_field(args.out, sol.u)
        report["solution_file"] = args.out
    _emit(report, args.report)
    return EXIT_OK


_TAG_ALIASES = {"cg": "c_g", "cr": "c_r", "cd": "c_d",
                "cGg": "c_Gg", "cD": "c_D", "cR": "c_R"}


def cmd_constants(args):
    which = args.which or "chain"
    n = _parse_grids(args.grid or "9")[0]
    grid = _make_grid(n, "zero")
    report = {"grid": list(grid.dims)}
    ok = True
    if which == "chain":
        cr = ct.estimate_constant("c_r", grid, tol=args.tol)
        cd = ct.estimate_constant("c_d", grid, tol=args.tol)
        bound = grid.diameter / np.pi
        report.update({"c_r": cr.value, "c_d": cd.value,
                       "bound_diam_over_pi": bound})
        ok = cr.value <= cd.value * (1 + 1e-9) and cd.value <= bound * 1.02
    else:
        tag = _TAG_ALIASES.get(which, which)
        est = ct.estimate_constant(tag, grid, tol=args.tol)
        report.update(est.as_dict())
        if tag == "c_g":
            target = 1.0 / (np.sqrt(3.0) * np.pi)
            report["analytic"] = target
            report["relative_error"] = abs(est.value - target) / target
            if n % 2 == 1:
                ok = report["relative_error"] <= 0.02
            else:
                # even sizes have no exact checkerboard kernel to deflate;
                # the raw spectrum sits on the half-shifted ladder
                report["note"] = ("analytic anchor checked on odd grids only; "
                                  "see README on checkerboard modes")
    _emit(report, args.report)
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_helmholtz(args):
    from .grid_fields import random_smooth_field

    n = _parse_grids(args.grid or "8")[0]
    grid = _make_grid(n, args.mode)
    v = random_smooth_field(grid, "vector", args.seed, max(1, min(2, n // 4)))
    res = ct.helmholtz_vector(v, tol=args.tol)
    report = res.as_dict()
    report["grid"] = list(grid.dims)
    report["mode"] = args.mode
    ok = (res.orthogonality_max <= 1e-8 and res.reconstruction_residual <= 1e-9)
    if args.mode != "periodic":
        total = sum(x * x for x in res.norms.values())
        ok = ok and res.norms["harmonic"] ** 2 <= 1e-16 * total
    _emit(report, args.report)
    return EXIT_OK if ok else EXIT_ASSERT


def cmd_cohomology(args):
    n = _parse_grids(args.grid or "6")[0]
    topo = args.topology or "box"
    if topo == "torus":
        if n % 2 == 0:
            raise ValueError(
                "torus cohomology needs an odd grid size: even periodic grids "
                "carry checkerboard kernel modes that inflate the counts")
        grid = _make_grid(n, "periodic")
    else:
        grid = _make_grid(n, "zero")
    name = {"derham": "deRham-mathring", "gradgrad": "Gradgrad-mathring"}.get(
        args.complex or "derham")
    if name is None:
        raise ValueError(f"unknown complex {args.complex!r}")
    C = ct.make_complex(grid, name)
    dims = [ct.cohomology_dim(C, k) for k in range(len(C.ops) + 1)]
    expected = None
    if name == "deRham-mathring":
        expected = [1, 3, 3, 1] if topo == "torus" else [0, 0, 0, 0]
    elif name == "Gradgrad-mathring" and topo == "box":
        expected = [0, 0, 0, 0]
    report = {"complex": name, "topology": topo, "grid": list(grid.dims),
              "dims": dims, "expected": expected}
    _emit(report, args.report)
    if expected is not None and dims != expected:
        return EXIT_ASSERT
    return EXIT_OK


def cmd_convergence(args):
    if not args.case:
        raise ValueError("convergence needs --case")
    method = args.method or "primal"
    grids = _parse_grids(args.grid or "8,12,16,24")
    try:
        rows = mnf.convergence_study(args.case, method, grids, tol=args.tol)
    except NoConvergence as e:
        _emit({"error": str(e)}, args.report)
        return EXIT_SOLVER
    if args.out:
        mnf.write_csv(rows, args.out)
    _emit(rows, args.report)
    last_rate = rows[-1]["rate"]
    return EXIT_OK if last_rate is not None and abs(last_rate - 2.0) <= 0.3 else EXIT_ASSERT


def cmd_infsup(args):
    n = _parse_grids(args.grid or "6")[0]
    grid = _make_grid(n, "zero")
    try:
        res = bh.check_infsup(grid, seed=args.seed)
    except NoConvergence as e:
        _emit({"error": str(e)}, args.report)
        return EXIT_SOLVER
    _emit(res, args.report)
    ok = res["beta"] >= res["bound"] - 0.02 and res["test_quotient"] >= res["bound"] - 0.02
    return EXIT_OK if ok else EXIT_ASSERT


def _load_config(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out

_CONFIG_KEYS = {"grid", "mode", "seed", "tol", "case", "method", "which",
                "complex", "topology", "out", "report", "trials"}


def build_parser():
    p = argparse.ArgumentParser(prog="ggdd", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    commands = {
        "verify-identities": cmd_verify_identities,
        "solve": cmd_solve,
        "constants": cmd_constants,
        "helmholtz": cmd_helmholtz,
        "cohomology": cmd_cohomology,
        "convergence": cmd_convergence,
        "infsup": cmd_infsup,
    }
    for name, fn in commands.items():
        q = sub.add_parser(name)
        q.add_argument("--grid", default=None, help="N or N,N,... node counts")
        q.add_argument("--mode", default=None, choices=["periodic", "zero"])
        q.add_argument("--seed", default=None)
        q.add_argument("--tol", default=None)
        q.add_argument("--trials", default=None)
        q.add_argument("--case", default=None)
        q.add_argument("--method", default=None)
        q.add_argument("--which", default=None)
        q.add_argument("--complex", default=None)
        q.add_argument("--topology", default=None)
        q.add_argument("--out", default=None)
        q.add_argument("--report", default=None)
        q.add_argument("--config", default=None)
        q.add_argument("--negate-identity", default=None, help=argparse.SUPPRESS)
        q.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else 0
    try:
        if args.config:
            cfg = _load_config(args.config)
            unknown = set(cfg) - _CONFIG_KEYS
            if unknown:
                raise ValueError(f"unknown config keys {sorted(unknown)}")
            for key, val in cfg.items():
                if getattr(args, key, None) is None:  # flags win over the file
                    setattr(args, key, val)
        args.seed = int(args.seed) if args.seed is not None else 0
        args.trials = int(args.trials) if args.trials is not None else 5
        args.tol = float(args.tol) if args.tol is not None else 1e-10
        args.mode = args.mode or "zero"
        if args.mode not in ("periodic", "zero"):
            raise ValueError(f"bad mode {args.mode!r}")
        return args.fn(args)
    except (ValueError, WrongMode) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except GgddError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())
