"""Scenario files: YAML declarations of a problem plus one run command.

A scenario has four top-level keys::

    name: linear_idi
    problem:            # dimension, horizon, F, kernel, moving set, envelope
      ...
    run:
      command: solve    # solve | sweep | bounds | control | study | probe
      ...
    output: out/linear_idi

Everything is validated when the file is loaded: the problem is built once
so that range checks on sets and envelopes fire early.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import sets as _sets
from .control import ControlProblem
from .core import GrowthEnvelope, ProblemSpec, make_grid, zero_kernel
from .expr import ExpressionError, compile_expr
from .solver import SingletonMap, TranslatedSet, zero_map

__all__ = [
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "parse_scenario",
    "serialize",
    "build_problem",
    "build_control_problem",
    "bundled",
    "bundled_path",
]


class ScenarioError(ValueError):
    pass


PROBLEM_DEFAULTS = {
    "dim": None,
    "T": 1.0,
    "steps": 100,
    "x0": None,
    "F": {"type": "zero"},
    "kernel": {"type": "zero"},
    "set": None,
    "envelope": {},
    "alpha0": 1.0,
    "rho": math.inf,
}
ENVELOPE_KEYS = ("c", "d", "sigma", "mu", "k", "k_tilde")
ENVELOPE_VARS = {"sigma": ("t", "s"), "mu": ("r", "t")}

RUN_DEFAULTS = {
    "solve": {
        "scheme": "euler", "dims": [], "tol": 1e-6, "oracle": False, "oracle_steps": 100000,
        "oracle_tol": 5e-3, "study": [], "order_range": None,
    },
    "sweep": {
        "scheme": "catchingUp", "tol": 1e-6, "feasibility_tol": 1e-12, "compare_reduced": True,
        "study": [], "min_order": None, "exact_path": None, "path_tol_h": 2.0,
    },
    "bounds": {"picard": False},
    "study": {"scheme": "euler", "steps": [], "order_range": None},
    "control": {
        "control_set": {"lo": [-1.0], "hi": [1.0]}, "running": {"control_weight": 1.0, "state_weight": 0.0},
        "terminal": {"weight": 0.0, "target": None}, "terminal_box": None, "starts": 1,
        "iterations": 200, "tol": 1e-7, "oracle_cost": None, "cost_rtol": 0.05,
    },
    "probe": {"modes": 6, "low": -1.0, "high": 1.0, "expect_flagged": None},
}

F_TYPES = ("zero", "linear", "box", "ball", "attract_ball")
KERNEL_TYPES = ("zero", "linear", "control_linear", "control_square")
SHAPES = ("halfspace", "box", "ball", "complement_ball")


@dataclass
class Scenario:
    name: str
    problem: dict
    run: dict
    output: str = ""
    seed: int = 0
    source: Optional[str] = field(default=None, compare=False)

    @property
    def command(self) -> str:
        return self.run["command"]

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "output": self.output,
                "problem": copy.deepcopy(self.problem), "run": copy.deepcopy(self.run)}


# --- normalisation -----------------------------------------------------------

def _floats(v):
    if isinstance(v, (list, tuple)):
        return [_floats(x) for x in v]
    if isinstance(v, bool):
        raise ScenarioError(f"expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            raise ScenarioError(f"expected a number, got {v!r}") from None
    raise ScenarioError(f"expected a number, got {v!r}")


def _fill(raw: dict, defaults: dict, where: str) -> dict:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ScenarioError(f"{where} must be a mapping")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(raw))
    return out


def _expr_value(v):
    # numbers stay numbers so the file round-trips unchanged
    if isinstance(v, bool):
        raise ScenarioError(f"expected a number or expression, got {v!r}")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        return v
    raise ScenarioError(f"expected a number or expression, got {v!r}")


def _normalise_problem(raw) -> dict:
    p = _fill(raw, PROBLEM_DEFAULTS, "problem")
    if p["x0"] is None and p["dim"] is None:
        raise ScenarioError("problem needs x0 or dim")
    if p["x0"] is None:
        p["x0"] = [0.0] * int(p["dim"])
    if not isinstance(p["x0"], list):
        p["x0"] = [p["x0"]]
    p["x0"] = _floats(p["x0"])
    if p["dim"] is None:
        p["dim"] = len(p["x0"])
    p["dim"] = int(p["dim"])
    if len(p["x0"]) != p["dim"]:
        raise ScenarioError(f"x0 has {len(p['x0'])} entries but dim is {p['dim']}")
    p["T"] = float(p["T"])
    p["steps"] = int(p["steps"])
    p["alpha0"] = float(p["alpha0"])
    p["rho"] = float(p["rho"])
    for key in ("F", "kernel"):
        if not isinstance(p[key], dict) or "type" not in p[key]:
            raise ScenarioError(f"problem.{key} needs a type")
    if p["F"]["type"] not in F_TYPES:
        raise ScenarioError(f"unknown F variant {p['F']['type']!r} (known: {', '.join(F_TYPES)})")
    if p["kernel"]["type"] not in KERNEL_TYPES:
        raise ScenarioError(f"unknown kernel variant {p['kernel']['type']!r} (known: {', '.join(KERNEL_TYPES)})")
    if p["set"] is not None:
        s = p["set"]
        if not isinstance(s, dict) or s.get("shape") not in SHAPES:
            raise ScenarioError(f"set needs a shape among {', '.join(SHAPES)}")
    env = p["envelope"] or {}
    unknown = set(env) - set(ENVELOPE_KEYS)
    if unknown:
        raise ScenarioError(f"unknown envelope function(s): {', '.join(sorted(unknown))}")
    p["envelope"] = {k: _expr_value(env.get(k, 0.0)) for k in ENVELOPE_KEYS}
    return p


def _normalise_run(raw) -> dict:
    if not isinstance(raw, dict) or "command" not in raw:
        raise ScenarioError("run block needs a command")
    cmd = raw["command"]
    if cmd not in RUN_DEFAULTS:
        raise ScenarioError(f"unknown command {cmd!r} (known: {', '.join(RUN_DEFAULTS)})")
    body = {k: v for k, v in raw.items() if k != "command"}
    out = _fill(body, RUN_DEFAULTS[cmd], f"run ({cmd})")
    out["command"] = cmd
    return out


def _from_mapping(data, source=None) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario file must be a mapping at top level")
    unknown = set(data) - {"name", "problem", "run", "output", "seed"}
    if unknown:
        raise ScenarioError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    if "name" not in data or not str(data["name"]).strip():
        raise ScenarioError("scenario needs a name")
    name = str(data["name"])
    sc = Scenario(
        name=name,
        problem=_normalise_problem(data.get("problem")),
        run=_normalise_run(data.get("run") or {"command": "solve"}),
        output=str(data.get("output") or ""),
        seed=int(data.get("seed", 0)),
        source=source,
    )
    validate(sc)
    return sc


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ScenarioError(f"{where}: parse error: {problem}") from None
    return _from_mapping(data, source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        candidate = bundled_path(str(path))
        if candidate is None:
            raise FileNotFoundError(f"no scenario file {path}")
        path = candidate
    return parse_scenario(path.read_text(), str(path))


def serialize(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False, default_flow_style=None)


def bundled() -> list:
    root = resources.files("inclusol") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name: str) -> Optional[Path]:
    stem = name[:-5] if name.endswith(".yaml") else name
    p = Path(str(resources.files("inclusol") / "scenarios" / f"{stem}.yaml"))
    return p if p.exists() else None


# --- builders ----------------------------------------------------------------

def _matrix(decl: dict, dim: int, where: str, default: float = 0.0) -> np.ndarray:
    given = [k for k in ("matrix", "diag", "scale") if k in decl]
    if len(given) > 1:
        raise ScenarioError(f"{where}: give only one of matrix, diag, scale")
    if not given:
        return default * np.eye(dim)
    key = given[0]
    if key == "scale":
        return float(decl["scale"]) * np.eye(dim)
    if key == "diag":
        d = np.asarray(_floats(decl["diag"]))
        if d.shape != (dim,):
            raise ScenarioError(f"{where}: diag must have {dim} entries")
        return np.diag(d)
    A = np.asarray(_floats(decl["matrix"]))
    if A.shape != (dim, dim):
        raise ScenarioError(f"{where}: matrix must be {dim}x{dim}, got {A.shape}")
    return A


def _vector(v, dim: int, where: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(_floats(v)))
    if a.size == 1 and dim > 1:
        a = np.full(dim, a[0])
    if a.shape != (dim,):
        raise ScenarioError(f"{where}: expected {dim} entries")
    return a


def _expr_vector(exprs, dim: int, variables, where: str):
    if not isinstance(exprs, list):
        exprs = [exprs] * dim
    if len(exprs) != dim:
        raise ScenarioError(f"{where}: expected {dim} expressions")
    try:
        fs = [compile_expr(e, variables) for e in exprs]
    except ExpressionError as exc:
        raise ScenarioError(f"{where}: {exc}") from None
    return fs


def _check_keys(decl: dict, allowed, where: str):
    unknown = set(decl) - set(allowed) - {"type"}
    if unknown:
        raise ScenarioError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _linear_part(decl: dict, dim: int, where: str):
    A = _matrix(decl, dim, where)
    forcing = None
    if decl.get("forcing") is not None:
        fs = _expr_vector(decl["forcing"], dim, ("t",), f"{where}.forcing")
        forcing = lambda t: np.array([f(t) for f in fs])  # noqa: E731

    def center(t, x):
        out = x @ A.T
        return out if forcing is None else out + forcing(t)

    return center, A, forcing


def build_F(decl: dict, dim: int):
    kind = decl["type"]
    linear_keys = ("matrix", "diag", "scale", "forcing")
    if kind == "zero":
        _check_keys(decl, (), "F")
        return zero_map()
    if kind == "linear":
        _check_keys(decl, linear_keys, "F")
        center, _, _ = _linear_part(decl, dim, "F")
        return SingletonMap(center)
    if kind == "box":
        _check_keys(decl, linear_keys + ("lo", "hi"), "F")
        center, _, _ = _linear_part(decl, dim, "F")
        return TranslatedSet(center, _sets.Box(_vector(decl["lo"], dim, "F.lo"), _vector(decl["hi"], dim, "F.hi")))
    if kind == "ball":
        _check_keys(decl, linear_keys + ("radius",), "F")
        center, _, _ = _linear_part(decl, dim, "F")
        return TranslatedSet(center, _sets.Ball(np.zeros(dim), float(decl["radius"])))
    # attract_ball: x' = -gain (x - proj_B(x)), pulls the state back into a ball
    _check_keys(decl, ("center", "radius", "gain"), "F")
    c = _vector(decl.get("center", 0.0), dim, "F.center")
    R = float(decl["radius"])
    gain = float(decl.get("gain", 1.0))

    def pull(t, x):
        d = x - c
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        excess = np.maximum(n - R, 0.0) / np.where(n > 0, n, 1.0)
        return -gain * excess * d

    return SingletonMap(pull)


def build_kernel(decl: dict, dim: int):
    """Returns (kernel, control_dim); control_dim is 0 for uncontrolled kernels."""
    kind = decl["type"]
    if kind == "zero":
        _check_keys(decl, (), "kernel")
        return zero_kernel, 0
    if kind == "linear":
        _check_keys(decl, ("matrix", "diag", "scale", "decay", "forcing"), "kernel")
        A = _matrix(decl, dim, "kernel")
        lam = float(decl.get("decay", 0.0))
        fs = None
        if decl.get("forcing") is not None:
            fs = _expr_vector(decl["forcing"], dim, ("t", "s"), "kernel.forcing")

        def g(t, s, x, u=None):
            w = np.exp(-lam * (t - s))[:, None] if lam else 1.0
            out = w * (x @ A.T)
            if fs is not None:
                out = out + np.stack([f(t, s) for f in fs], axis=-1)
            return out

        return g, 0
    if kind == "control_linear":
        _check_keys(decl, ("control_dim", "input", "state", "decay"), "kernel")
        m = int(decl.get("control_dim", 1))
        B = np.asarray(_floats(decl.get("input", 1.0)))
        B = B * np.ones((dim, m)) if B.ndim == 0 else B.reshape(dim, m)
        lam = float(decl.get("decay", 0.0))
        a = float(decl.get("state", 0.0))
        scalar = B.shape == (1, 1)

        def g(t, s, x, u):
            out = u * B[0, 0] if scalar else u @ B.T
            if a:
                w = np.exp(-lam * (t - s))[:, None] if lam else 1.0
                out = out + w * a * x
            return out

        return g, m
    _check_keys(decl, ("control_dim", "scale"), "kernel")
    m = int(decl.get("control_dim", dim))
    if m != dim:
        raise ScenarioError("control_square kernel needs control_dim equal to dim")
    a = float(decl.get("scale", 1.0))
    return (lambda t, s, x, u: a * u ** 2), m


def build_moving_set(decl: dict, dim: int) -> _sets.MovingSet:
    allowed = ("shape", "normal", "offset", "lo", "hi", "center", "radius", "path", "path_rate", "coupling", "L")
    unknown = set(decl) - set(allowed)
    if unknown:
        raise ScenarioError(f"unknown key(s) in set: {', '.join(sorted(unknown))}")
    shape = decl["shape"]
    if shape == "halfspace":
        base = _sets.Halfspace(_vector(decl["normal"], dim, "set.normal"), float(decl.get("offset", 0.0)))
    elif shape == "box":
        base = _sets.Box(_vector(decl["lo"], dim, "set.lo"), _vector(decl["hi"], dim, "set.hi"))
    elif shape == "ball":
        base = _sets.Ball(_vector(decl.get("center", 0.0), dim, "set.center"), float(decl["radius"]))
    else:
        base = _sets.ComplementOfBall(_vector(decl.get("center", 0.0), dim, "set.center"), float(decl["radius"]))
    coupling = None
    if decl.get("coupling") is not None:
        coupling = np.asarray(_floats(decl["coupling"]))
        coupling = coupling * np.eye(dim) if coupling.ndim == 0 else coupling.reshape(dim, dim)
    declared_L = decl.get("L")
    if declared_L is not None and not (0.0 <= float(declared_L) < 1.0):
        raise ScenarioError("L must lie in [0,1)")
    if decl.get("path") is None and coupling is None:
        return _sets.static(base)
    path_fs = _expr_vector(decl.get("path", 0.0), dim, ("t",), "set.path")
    path = lambda t: np.array([f(t) for f in path_fs])  # noqa: E731
    rate = None
    if decl.get("path_rate") is not None:
        rate_fs = _expr_vector(decl["path_rate"], dim, ("t",), "set.path_rate")
        rate = lambda t: np.array([f(t) for f in rate_fs])  # noqa: E731
    M = _sets.translating(base, path, rate, coupling)
    if declared_L is not None:
        L = float(declared_L)
        if L < M.L - 1e-12:
            raise ScenarioError(f"declared L={L} is below the coupling norm {M.L:.6g}")
        M = _sets.MovingSet(M.family, M.zeta_dot, L, "state" if (coupling is not None or L > 0) else "time")
    return M


def build_envelope(env: dict) -> GrowthEnvelope:
    fns = {}
    for key in ENVELOPE_KEYS:
        try:
            fns[key] = compile_expr(env[key], ENVELOPE_VARS.get(key, ("t",)))
        except ExpressionError as exc:
            raise ScenarioError(f"envelope {key}: {exc}") from None
    return GrowthEnvelope(**fns)


def build_problem(sc: Scenario, steps: Optional[int] = None) -> ProblemSpec:
    p = sc.problem
    dim = p["dim"]
    grid = make_grid(p["T"], steps or p["steps"])
    F = build_F(p["F"], dim)
    g, _ = build_kernel(p["kernel"], dim)
    C = build_moving_set(p["set"], dim) if p["set"] is not None else None
    envelope = build_envelope(p["envelope"])
    envelope.validate(grid)
    spec = ProblemSpec(np.array(p["x0"]), grid, F, g, C, envelope, p["alpha0"], p["rho"], sc.name)
    if C is not None and sc.command in ("sweep",):
        spec.require_sweeping()
    return spec


def build_control_problem(sc: Scenario, steps: Optional[int] = None) -> ControlProblem:
    spec = build_problem(sc, steps)
    dim = sc.problem["dim"]
    _, m = build_kernel(sc.problem["kernel"], dim)
    if m == 0:
        raise ScenarioError("control runs need a controlled kernel (control_linear or control_square)")
    r = sc.run
    cs = r["control_set"]
    if "radius" in cs:
        U = _sets.Ball(_vector(cs.get("center", 0.0), m, "control_set.center"), float(cs["radius"]))
    else:
        U = _sets.Box(_vector(cs["lo"], m, "control_set.lo"), _vector(cs["hi"], m, "control_set.hi"))
    wu = float(r["running"].get("control_weight", 1.0))
    wx = float(r["running"].get("state_weight", 0.0))
    wT = float(r["terminal"].get("weight", 0.0))
    target = r["terminal"].get("target")
    target = np.zeros(dim) if target is None else _vector(target, dim, "terminal.target")

    def running(s, X, V, U_):
        return wu * np.sum(U_ ** 2, axis=-1) + wx * np.sum(X ** 2, axis=-1)

    def terminal(x0, xT):
        return wT * np.sum((xT - target) ** 2, axis=-1)

    box = None
    if r["terminal_box"] is not None:
        box = _sets.Box(_vector(r["terminal_box"]["lo"], dim, "terminal_box.lo"),
                        _vector(r["terminal_box"]["hi"], dim, "terminal_box.hi"))
    return ControlProblem(spec, running, terminal, U, m, box, eta=lambda s: 0.0)


def validate(sc: Scenario) -> None:
    """Eager checks: builds every declared object once."""
    try:
        if sc.command == "control":
            build_control_problem(sc)
        else:
            build_problem(sc)
        if sc.command == "sweep" and sc.problem["set"] is None:
            raise ScenarioError("sweep runs need a moving set")
        if sc.command == "probe":
            _, m = build_kernel(sc.problem["kernel"], sc.problem["dim"])
            if m == 0:
                raise ScenarioError("probe runs need a controlled kernel")
        if sc.command == "study" and len(sc.run["steps"]) < 2:
            raise ScenarioError("study runs need at least two step counts")
    except ScenarioError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        if isinstance(exc, KeyError):
            msg = f"missing key {msg!r}"
        raise ScenarioError(str(msg)) from None
