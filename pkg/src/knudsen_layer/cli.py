"""Command-line front end: ``knudsen-layer <subcommand> [options]``."""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import checks as ck
from .collision import GasState, VelocityGrid, assemble_kernel
from .config import THREADS_ENV, RunConfig, load_config
from .disk import DiskState
from .disk import trajectory_rows as disk_rows
from .errors import KnudsenError, NotSolvableError
from .io import load_operator, save_operator, save_solution, write_csv, write_summary
from .slab import trajectory_rows as slab_rows
from .solver import (bundled_problem, check_solvability, continuation_solve,
                     project_solvable, solve_fixed, source_weighted_norm)


def _thread_limit(n: int | None):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return nullcontext()
    if n < 1:
        raise ValueError("thread count must be positive")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def build_operator(cfg: RunConfig, n_per_axis: int | None = None, cache: str | None = None):
    gas = cfg.gas.build()
    n = cfg.grids.n_velocity if n_per_axis is None else n_per_axis
    grid = VelocityGrid.uniform(n, cfg.grids.v_max)
    if cache and Path(cache).exists():
        op = load_operator(cache)
        if op.gas == gas and op.grid.n_per_axis == n and op.grid.v_max == grid.v_max \
                and op.n_omega == cfg.grids.n_omega:
            return op
    op = assemble_kernel(gas, grid, n_omega=cfg.grids.n_omega)
    if cache:
        save_operator(cache, op)
    return op


# ---------------------------------------------------------------------------
# solve

def _problem(cfg: RunConfig, gas: GasState, grid: VelocityGrid, d: float | None = None):
    sc = cfg.scenario
    geom = cfg.geometry.build(d)
    n_damp = math.inf if sc.n_damp is None else sc.n_damp
    pr = bundled_problem(geom, gas, grid, n_eta=cfg.grids.n_eta, family=sc.family,
                         amplitude=sc.amplitude, lam=sc.lam, n_damp=n_damp,
                         sigma0=sc.sigma0, boundary=sc.boundary, eta_ratio=cfg.grids.eta_ratio)
    if sc.project and not pr.projected:
        pr = project_solvable(pr)
    rep = check_solvability(pr, cfg.tolerances.solvability)
    if not rep.passed:
        raise NotSolvableError(
            f"solvability conditions violated: source {rep.max_source_defect:.3e}, "
            f"boundary {rep.max_boundary_defect:.3e}",
            {"source": rep.max_source_defect, "boundary": rep.max_boundary_defect})
    return pr, rep


def _solve(cfg: RunConfig, pr, op):
    tol = cfg.tolerances
    if cfg.scenario.continuation:
        return continuation_solve(pr, op, lam_step=tol.lam_step, min_step=tol.lam_min_step,
                                  tol=tol.solver, ramp_tol=tol.ramp, step_iter=tol.max_iter)
    t = tol.picard if cfg.scenario.method == "picard" else tol.solver
    return solve_fixed(pr, op, method=cfg.scenario.method, tol=t, max_iter=tol.max_iter)


def _judge(cfg: RunConfig, diag):
    tol = cfg.tolerances
    flux_ok = bool(np.all(diag.max_flux <= tol.flux * max(diag.field_norm, 1e-300)))
    return {"residual_ok": diag.residual_l2 <= tol.residual, "b1_ok": diag.max_b1 <= tol.b1,
            "flux_ok": flux_ok, "sigma_ok": bool(np.isfinite(diag.sigma_fit) and diag.sigma_fit > 0)}


def run_solve(cfg: RunConfig, out: str | Path, cache: str | None = None,
              d_sweep: bool = False) -> dict:
    """Solve the configured scenario and write the artifact bundle to ``out``."""
    out = Path(out)
    op = build_operator(cfg, cache=cache)
    gas, grid = op.gas, op.grid
    pr, rep = _problem(cfg, gas, grid)
    sol = _solve(cfg, pr, op)
    diag = sol.diagnostics
    flags = _judge(cfg, diag)
    save_solution(out / "solution.bin", sol)
    write_csv(out / "diagnostics.csv",
              ["eta", "b1", "flux_v1", "flux_v1v2", "flux_v1v2sq", "weighted_sup"],
              [(e, b, *fl, w) for e, b, fl, w in
               zip(pr.eta, diag.b1, diag.flux_moments, diag.weighted_sup)])
    conv = [("path", p["n"], p["lam"], p["iterations"], p["residual"],
             int(bool(p.get("rejected", False)))) for p in sol.path]
    conv += [("history", "", "", i + 1, r, 0) for i, r in enumerate(sol.history)]
    write_csv(out / "convergence.csv",
              ["stage", "n", "lam", "iterations", "residual", "rejected"], conv)
    src_norm = source_weighted_norm(pr, op)
    summary = {
        "schema": cfg.schema_version, "d": pr.geom.d, "epsilon": pr.geom.epsilon,
        "n_velocity": grid.n_per_axis, "n_eta": pr.eta.size, "lam": pr.lam,
        "n_damp": pr.n_damp, "method": sol.method, "iterations": sol.iterations,
        "residual": sol.residual, "sigma_fit": diag.sigma_fit,
        "b1_max": diag.max_b1, "flux_v1v2_max": diag.max_flux[0],
        "flux_v1v2sq_max": diag.max_flux[1], "field_norm": diag.field_norm,
        "source_defect": rep.max_source_defect, "boundary_defect": rep.max_boundary_defect,
        "weighted_sup": sol.weighted_sup, "source_norm": src_norm,
        "sup_over_source": sol.weighted_sup / src_norm if src_norm > 0 else math.nan,
        **flags,
    }
    if d_sweep:
        rows = []
        for d in cfg.scenario.d_sweep:
            p2, _ = _problem(cfg, gas, grid, d)
            s2 = _solve(cfg, p2, op)
            sn = source_weighted_norm(p2, op)
            rows.append((d, s2.residual, s2.diagnostics.sigma_fit, s2.diagnostics.max_b1,
                         s2.weighted_sup, sn, s2.weighted_sup / sn))
        write_csv(out / "sweep.csv", ["d", "residual", "sigma_fit", "b1_max", "weighted_sup",
                                      "source_norm", "sup_over_source"], rows)
        ratios = np.array([r[-1] for r in rows])
        summary["sweep_spread"] = float(ratios.max() / ratios.min())
        summary["sweep_ok"] = bool(summary["sweep_spread"] < 2.0)
    summary["passed"] = all(v for k, v in summary.items() if k.endswith("_ok"))
    write_summary(out / "summary.txt", summary)
    return summary


# ---------------------------------------------------------------------------
# trace

def run_trace(cfg: RunConfig, mode: str, out: str | Path) -> Path:
    out = Path(out)
    if mode == "slab":
        tc = cfg.trace
        geom = cfg.geometry.build()
        s = tc.t - np.linspace(0.0, tc.horizon, tc.n_samples)
        rows = slab_rows(geom, tc.t, tc.eta, (tc.v1, tc.v2), s)
        return write_csv(out / "trace_slab.csv",
                         ["s", "X", "V1", "V2", "E1", "E2", "reflections"], rows)
    if mode == "disk":
        dc = cfg.disk
        st = DiskState(dc.r, dc.phi, (dc.vbar1, dc.vbar2))
        s = dc.t - np.linspace(0.0, dc.horizon, dc.n_samples)
        rows = disk_rows(st, dc.t, s)
        return write_csv(out / "trace_disk.csv",
                         ["s", "X", "Phi", "V1", "V2", "x1", "x2", "reflections"], rows)
    raise ValueError(f"unknown trace mode {mode!r}")


# ---------------------------------------------------------------------------
# checks

def run_checks(cfg: RunConfig, seed: int = 0, which: str = "all", cache: str | None = None,
               inject_noise: float | None = None, d_sweep_out: str | Path | None = None,
               refine: bool = True, out: str | Path | None = None) -> ck.CheckReport:
    """Batch of property checks; ``which`` is all, closures, jacobian or kernel.

    With ``out`` set, the Jacobian table and the macro-lift profiles are written as CSV.
    """
    rep = ck.CheckReport()
    gas = cfg.gas.build()
    geom = cfg.geometry.build()
    n = cfg.checks.n_random
    noise = cfg.checks.inject_noise if inject_noise is None else inject_noise
    if which in ("all", "jacobian"):
        rows: list = []
        rep.extend(ck.check_disk_jacobian(n, seed=seed + 2, rows=rows))
        if out is not None:
            write_csv(Path(out) / "jacobian_check.csv", ck.JACOBIAN_COLUMNS, rows)
        rep.extend(ck.check_polar_cartesian(n, seed=seed + 3))
    if which == "all" and geom.epsilon > 0:
        rep.extend([ck.check_slab_conservation(geom, n, seed=seed)])
        rep.extend(ck.check_slab_ode(geom, n, seed=seed + 1))
    if which in ("all", "kernel"):
        ch = cfg.checks
        op = build_operator(cfg, cache=cache)
        if noise:
            op = op.perturbed(noise, seed)
        rep.extend(ck.check_collision(op, seed=seed))
        rep.extend(ck.check_kernel_bound(gas, ch.kernel_beta, ch.kernel_zeta, ch.kernel_speeds))
        del op
    if which in ("all", "closures"):
        refined = None
        if refine:
            refined = ck.refined_kappas(gas, cfg.grids.refined_velocity, cfg.grids.v_max,
                                        cfg.grids.n_omega)
        op = build_operator(cfg, cache=cache)
        rep.extend(ck.check_burnett(op, refined))
        del op
        profiles: list = []
        rep.extend(ck.check_macro_lift(gas, geom, VelocityGrid.uniform(48, cfg.grids.v_max),
                                       profiles=profiles))
        if out is not None:
            write_csv(Path(out) / "closures.csv", ["eta", "A", "B", "C", "D"], profiles)
    if d_sweep_out is not None:
        summary = run_solve(cfg, d_sweep_out, cache=cache, d_sweep=True)
        rep.extend([ck.CheckResult("solve_residual", summary["residual"], cfg.tolerances.residual),
                    ck.CheckResult("solve_b1", summary["b1_max"], cfg.tolerances.b1),
                    ck.CheckResult("solve_sigma_fit", summary["sigma_fit"], 0.0, upper=False),
                    ck.CheckResult("solve_d_sweep_spread", summary["sweep_spread"], 2.0)])
    return rep


# ---------------------------------------------------------------------------
# argument parsing

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="knudsen-layer", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (default: outputs.directory)")
    common.add_argument("--threads", type=int, help=f"BLAS threads (default ${THREADS_ENV})")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized samples")
    common.add_argument("--cache", help="collision operator cache file")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="solve the configured layer problem")
    s.add_argument("--d-sweep", action="store_true", help="also solve for every d in d_sweep")
    t = sub.add_parser("trace", parents=[common], help="write a backward characteristic")
    t.add_argument("--disk", action="store_true", help="trace in the disk instead of the slab")
    sub.add_parser("closures", parents=[common], help="Burnett, kappa and macro-lift checks")
    sub.add_parser("jacobian-check", parents=[common], help="disk Jacobian checks")
    k = sub.add_parser("kernel-check", parents=[common], help="collision operator checks")
    k.add_argument("--inject-noise", type=float, help="relative noise added to the kernel")
    a = sub.add_parser("check-all", parents=[common], help="every property check")
    a.add_argument("--d-sweep", action="store_true", help="include the solver d-sweep")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.outputs.directory)
    t0 = time.perf_counter()
    try:
        with _thread_limit(args.threads):
            if args.command == "solve":
                summary = run_solve(cfg, out, cache=args.cache, d_sweep=args.d_sweep)
                for k, v in summary.items():
                    print(f"{k}={v}")
                ok = summary["passed"]
            elif args.command == "trace":
                path = run_trace(cfg, "disk" if args.disk else "slab", out)
                print(path)
                ok = True
            else:
                which = {"closures": "closures", "jacobian-check": "jacobian",
                         "kernel-check": "kernel", "check-all": "all"}[args.command]
                rep = run_checks(cfg, seed=args.seed, which=which, cache=args.cache,
                                 inject_noise=getattr(args, "inject_noise", None),
                                 d_sweep_out=out if getattr(args, "d_sweep", False) else None,
                                 out=out)
                for line in rep.lines():
                    print(line)
                ok = rep.passed
                print("ALL PASS" if ok else "SOME CHECKS FAILED")
    except (KnudsenError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        print("config:", file=sys.stderr)
        print(cfg.to_json(), file=sys.stderr)
        return 2
    print(f"elapsed {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
