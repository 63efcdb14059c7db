"""Command-line front end.

    inclusol solve <scenario.yaml | bundled-name> [--steps N] [--dims a,b,c]
                   [--seed k] [--out DIR] [--no-plots]
    inclusol list

Each run writes comma-separated column files (one header line), PNG
figures and ``summary.json`` into its output directory.  The exit status
is 0 when every declared check passes, 1 when a check fails and 2 for
unusable input.  ``INCLUSOL_OUT`` sets the default output root.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds as _bounds
from . import control as _control
from . import solver as _solver
from .core import Trajectory
from .oracles import rk4_linear_memory
from .scenario import (
    Scenario,
    ScenarioError,
    build_control_problem,
    build_kernel,
    build_problem,
    bundled,
    load_scenario,
)

log = logging.getLogger("inclusol")


@dataclass
class RunReport:
    name: str
    command: str
    out: Path
    checks: dict = field(default_factory=dict)      # name -> {"passed", "value", "limit"}
    metrics: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [k for k, v in self.checks.items() if not v["passed"]]

    @property
    def passed(self) -> bool:
        return not self.failed

    def check(self, name, passed, value=None, limit=None):
        self.checks[name] = {"passed": bool(passed), "value": _jsonable(value), "limit": _jsonable(limit)}

    def summary(self) -> dict:
        return {
            "name": self.name,
            "command": self.command,
            "passed": self.passed,
            "failed": self.failed,
            "checks": self.checks,
            "metrics": {k: _jsonable(v) for k, v in self.metrics.items()},
            "files": sorted(self.files),
        }


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return None if np.isnan(v) else v
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def write_columns(path: Path, columns: dict) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


class _Writer:
    def __init__(self, report: RunReport, plots: bool):
        self.report = report
        self.plots = plots

    def columns(self, name, cols):
        write_columns(self.report.out / name, cols)
        self.report.files.append(name)

    def figure(self, name, fn, *args, **kwargs):
        if not self.plots:
            return
        from . import plotting

        getattr(plotting, fn)(self.report.out / name, *args, **kwargs)
        self.report.files.append(name)


def _trajectory_columns(traj: Trajectory) -> dict:
    cols = {"t": traj.grid.nodes}
    for i in range(traj.dim):
        cols[f"x{i + 1}"] = traj.states[:, i]
    # velocities live on cells; repeat the last one at t_N to keep one row per node
    V = np.vstack([traj.velocities, traj.velocities[-1:]])
    for i in range(traj.dim):
        cols[f"v{i + 1}"] = V[:, i]
    return cols


def _bound_columns(table: _bounds.BoundTable) -> dict:
    cols = table.columns()
    cols["slack_r"] = table.slack_r
    cols["slack_psi"] = table.slack_psi
    return cols


def _compliance(rep: RunReport, traj, table, tol):
    cr = _bounds.check_bounds(traj, table, tol=tol)
    rep.check("check_bounds", cr.compliant, cr.violations, 0)
    rep.metrics["state_margin"] = cr.state_margin
    rep.metrics["velocity_margin"] = cr.velocity_margin
    return cr


def _oracle_gap(sc: Scenario, spec, traj, steps: int) -> float:
    p = sc.problem
    F, K = p["F"], p["kernel"]
    if F["type"] not in ("zero", "linear") or K["type"] not in ("zero", "linear") or K.get("forcing"):
        raise ScenarioError("the RK4 oracle needs linear F and a linear kernel without forcing")
    from .scenario import _linear_part, _matrix

    D = p["dim"]
    A = np.zeros((D, D))
    forcing = None
    if F["type"] == "linear":
        _, A, forcing = _linear_part(F, D, "F")
    Kmat = _matrix(K, D, "kernel") if K["type"] == "linear" else np.zeros((D, D))
    decay = float(K.get("decay", 0.0))
    n = int(np.ceil(sc.run["oracle_steps"] / steps)) * steps
    _, ref = rk4_linear_memory(A, Kmat, decay, spec.x0, spec.grid.T, n, forcing)
    return float(np.max(np.linalg.norm(traj.states - ref[:: n // steps], axis=1)))


def _study(rep: RunReport, w: _Writer, spec, scheme: str, Ns, order_range=None, min_order=None):
    res = _solver.convergence_study(spec, _solver.SolverConfig(scheme=scheme), Ns)
    rep.metrics["order"] = "exact" if res.exact else res.order
    rep.metrics["study_gaps"] = res.gaps
    w.columns("study.csv", {"h": res.hs, "gap": res.gaps})
    if not res.exact:
        w.figure("study.png", "series_figure", res.hs, {"gap": res.gaps}, xlabel="h",
                 title=f"order {res.order:.3f}", logx=True, logy=True, marker="o")
    if order_range is not None:
        lo, hi = order_range
        rep.check("order", (not res.exact) and lo <= res.order <= hi, rep.metrics["order"], [lo, hi])
    if min_order is not None:
        rep.check("order", res.exact or res.order >= min_order, rep.metrics["order"], min_order)
    return res


def _run_solve(sc, rep, w, steps, dims):
    r = sc.run
    spec = build_problem(sc, steps)
    dims = dims or r["dims"]
    if r["scheme"] == "cascade" or dims:
        cfg = _solver.SolverConfig(scheme="cascade", dims=tuple(dims))
        res = _solver.solve_galerkin_cascade(spec, cfg)
        traj = res.full
        ns = sorted(res.gaps)
        gaps = np.array([res.gaps[n] for n in ns])
        w.columns("cascade.csv", {"n": ns, "gap": gaps})
        w.figure("cascade.png", "series_figure", ns, {"sup gap": np.maximum(gaps, 1e-300)}, xlabel="n",
                 title="gap to full rank", logy=True, marker="o")
        rep.metrics["cascade_gaps"] = gaps
        rep.check("cascade_monotone", bool(np.all(np.diff(gaps) < 0) or len(gaps) < 2), gaps)
        if spec.dim in res.gaps:
            rep.check("cascade_full_rank", res.gaps[spec.dim] == 0.0, res.gaps[spec.dim], 0.0)
        rep.check("cauchy_bound", res.diagnostics.ok, res.diagnostics.violations(), 0)
    else:
        traj = _solver.solve_idi(spec)
    table = _bounds.envelopes(spec)
    _compliance(rep, traj, table, r["tol"])
    w.columns("trajectory.csv", _trajectory_columns(traj))
    w.columns("bounds.csv", _bound_columns(table))
    w.figure("trajectory.png", "trajectory_figure", traj.grid.nodes, traj.states, table.r, sc.name)
    if r["oracle"]:
        gap = _oracle_gap(sc, spec, traj, spec.grid.N)
        rep.metrics["oracle_gap"] = gap
        rep.check("oracle_gap", gap <= r["oracle_tol"], gap, r["oracle_tol"])
    if r["study"]:
        _study(rep, w, spec, "euler", r["study"], order_range=r["order_range"])


def _run_sweep(sc, rep, w, steps, dims):
    r = sc.run
    spec = build_problem(sc, steps)
    spec.require_sweeping()
    table = _bounds.sweeping_envelopes(spec)
    res = table.residuals
    rep.metrics["picard_iterations"] = len(res)
    rep.metrics["picard_residuals"] = res
    rep.check("picard", res[-1] < _bounds.PICARD_TOL, res[-1], _bounds.PICARD_TOL)
    traj = _solver.solve_sweeping(spec) if r["scheme"] == "catchingUp" else _solver.solve_reduced(spec, bounds=table)
    _compliance(rep, traj, table, r["tol"])
    lagged, worst = _solver.constraint_violation(traj, spec.C, lagged=(r["scheme"] == "catchingUp"))
    rep.metrics["constraint_violation_max"] = worst
    limit = r["feasibility_tol"] if r["scheme"] == "catchingUp" else None
    if limit is not None:
        rep.check("constraint_violation", worst <= limit, worst, limit)
    cols = _trajectory_columns(traj)
    cols["violation"] = lagged
    if r["compare_reduced"] and r["scheme"] == "catchingUp":
        red = _solver.solve_reduced(spec, bounds=table)
        _, red_worst = _solver.constraint_violation(red, spec.C)
        gap = float(np.max(np.linalg.norm(red.states - traj.states, axis=1)))
        rep.metrics["reduction_gap"] = gap
        rep.metrics["reduced_violation_max"] = red_worst
        for i in range(spec.dim):
            cols[f"reduced_x{i + 1}"] = red.states[:, i]
    w.columns("trajectory.csv", cols)
    w.columns("bounds.csv", _bound_columns(table))
    w.figure("trajectory.png", "trajectory_figure", traj.grid.nodes, traj.states, table.r, sc.name)
    w.figure("violation.png", "series_figure", traj.grid.nodes, {"d(x, C)": lagged},
             title="constraint violation")
    if r["exact_path"] is not None:
        from .scenario import _expr_vector

        fs = _expr_vector(r["exact_path"], spec.dim, ("t",), "run.exact_path")
        exact = np.column_stack([f(traj.grid.nodes) for f in fs])
        err = float(np.max(np.linalg.norm(traj.states - exact, axis=1)))
        limit = r["path_tol_h"] * spec.grid.h
        rep.metrics["path_error"] = err
        rep.check("exact_path", err <= limit, err, limit)
    if r["study"]:
        _study(rep, w, spec, r["scheme"], r["study"], min_order=r["min_order"])


def _run_bounds(sc, rep, w, steps, dims):
    spec = build_problem(sc, steps)
    if sc.run["picard"]:
        table = _bounds.sweeping_envelopes(spec)
        rep.metrics["picard_residuals"] = table.residuals
        rep.check("picard", table.residuals[-1] < _bounds.PICARD_TOL, table.residuals[-1], _bounds.PICARD_TOL)
    else:
        table = _bounds.envelopes(spec)
    finite = bool(np.all(np.isfinite(table.r)) and np.all(np.isfinite(table.psi)))
    rep.check("finite_envelopes", finite)
    if np.isfinite(spec.rho):
        pieces = _bounds.horizon_split(spec, table.psi)
        rep.metrics["horizon_pieces"] = pieces
    rep.metrics["r_T"] = table.r[-1]
    rep.metrics["psi_T"] = table.psi[-1]
    w.columns("bounds.csv", _bound_columns(table))
    w.figure("bounds.png", "series_figure", table.grid.nodes, {"r": table.r, "psi": table.psi}, title="envelopes")


def _run_study(sc, rep, w, steps, dims):
    spec = build_problem(sc, steps)
    _study(rep, w, spec, sc.run["scheme"], sc.run["steps"], order_range=sc.run["order_range"])


def _run_control(sc, rep, w, steps, dims, seed):
    r = sc.run
    P = build_control_problem(sc, steps)
    res = _control.optimize(P, starts=r["starts"], iterations=r["iterations"], seed=seed, tol=r["tol"])
    rep.metrics["cost"] = res.cost
    rep.metrics["grad_norm"] = res.grad_norm
    rep.metrics["best_start"] = res.start
    rep.metrics["iterations"] = len(res.log) - 1
    costs = np.array([c for _, c, _ in res.log])
    rep.check("descent", bool(np.all(np.diff(costs) <= 1e-12 * max(1.0, abs(costs[0])))))
    rep.check("control_feasible", res.control.check(P.U))
    if r["oracle_cost"] is not None:
        rel = abs(res.cost - r["oracle_cost"]) / abs(r["oracle_cost"])
        rep.metrics["oracle_rel_gap"] = rel
        rep.check("cost_vs_oracle", rel <= r["cost_rtol"], rel, r["cost_rtol"])
    traj = res.trajectory
    grid = traj.grid
    ucols = {"t": grid.nodes[:-1]}
    for i in range(P.control_dim):
        ucols[f"u{i + 1}"] = res.control.values[:, i]
    w.columns("control.csv", ucols)
    w.columns("trajectory.csv", _trajectory_columns(traj))
    w.columns("optimizer_log.csv", {"iteration": [i for i, _, _ in res.log], "cost": costs,
                                    "grad_norm": [g for _, _, g in res.log]})
    w.figure("control.png", "series_figure", grid.nodes[:-1],
             {f"u{i + 1}": res.control.values[:, i] for i in range(P.control_dim)}, title="control")
    w.figure("trajectory.png", "trajectory_figure", grid.nodes, traj.states, None, sc.name)


def _run_probe(sc, rep, w, steps, dims):
    r = sc.run
    p = sc.problem
    kernel, m = build_kernel(p["kernel"], p["dim"])
    res = _control.weak_continuity_probe(kernel, modes=r["modes"], T=p["T"], dim=p["dim"],
                                         low=[r["low"]] * m, high=[r["high"]] * m)
    rep.metrics["residuals"] = res.residuals
    rep.metrics["flagged"] = res.flagged
    w.columns("probe.csv", {"n": res.ns, "residual": res.residuals})
    w.figure("probe.png", "series_figure", res.ns, {"residual": res.residuals}, xlabel="n",
             title="weak continuity probe", logx=True, marker="o")
    if r["expect_flagged"] is not None:
        rep.check("probe_flag", res.flagged == bool(r["expect_flagged"]), res.flagged, r["expect_flagged"])
        if not r["expect_flagged"]:
            rep.check("probe_monotone", bool(np.all(np.diff(res.residuals) < 0)), res.residuals)


def output_dir(sc: Scenario, out: Optional[str] = None) -> Path:
    if out:
        return Path(out)
    if sc.output:
        return Path(sc.output)
    root = os.environ.get("INCLUSOL_OUT", "inclusol_out")
    return Path(root) / sc.name


def run_scenario(sc: Scenario, out: Optional[str] = None, steps: Optional[int] = None,
                 dims=None, seed: Optional[int] = None, plots: bool = True) -> RunReport:
    """Run the scenario's command, write its files and return the report.

    Failures inside a component are recorded as a failed check named after
    the component rather than raised."""
    path = output_dir(sc, out)
    path.mkdir(parents=True, exist_ok=True)
    rep = RunReport(sc.name, sc.command, path)
    w = _Writer(rep, plots)
    seed = sc.seed if seed is None else seed
    handlers = {
        "solve": _run_solve, "sweep": _run_sweep, "bounds": _run_bounds, "study": _run_study, "probe": _run_probe,
    }
    try:
        if sc.command == "control":
            _run_control(sc, rep, w, steps, dims, seed)
        else:
            handlers[sc.command](sc, rep, w, steps, dims)
    except _bounds.ConvergenceError as exc:
        rep.check("picard", False, exc.residual, _bounds.PICARD_TOL)
        rep.metrics["error"] = str(exc)
    except (RuntimeError, ValueError, FloatingPointError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        rep.check(sc.command, False)
        rep.metrics["error"] = str(exc)
    rep.metrics["steps"] = steps or sc.problem["steps"]
    rep.metrics["seed"] = seed
    with open(path / "summary.json", "w") as fh:
        json.dump(rep.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rep


def _dims(text: str):
    try:
        dims = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dims expects comma-separated integers, got {text!r}") from None
    if not dims:
        raise argparse.ArgumentTypeError("--dims is empty")
    return dims


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--steps must be positive")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inclusol", description="Integro-differential inclusion scenarios.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("solve", help="run a scenario file or bundled scenario")
    s.add_argument("scenario")
    s.add_argument("--steps", type=_positive)
    s.add_argument("--dims", type=_dims)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--no-plots", action="store_true")
    sub.add_parser("list", help="list bundled scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.cmd == "list":
        for name in bundled():
            print(name)
        return 0
    try:
        sc = load_scenario(args.scenario)
    except (ScenarioError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    try:
        rep = run_scenario(sc, args.out, args.steps, args.dims, args.seed, plots=not args.no_plots)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    elapsed = time.perf_counter() - start
    for name, c in rep.checks.items():
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}  value={c['value']}  limit={c['limit']}")
    print(f"{sc.name}: {'all checks passed' if rep.passed else 'failed: ' + ', '.join(rep.failed)}"
          f"  ({elapsed:.2f} s, output in {rep.out})")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
