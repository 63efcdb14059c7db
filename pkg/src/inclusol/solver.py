"""Time-stepping solvers for integro-differential inclusions and sweeping processes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import sets as _sets
from .bounds import BoundTable, ExpFactor, envelopes, pi_factor, sweeping_envelopes
from .core import GrowthEnvelope, ProblemSpec, Trajectory, _history, make_grid
from .galerkin import Projector, apply

__all__ = [
    "SingletonMap",
    "TranslatedSet",
    "velocity_box",
    "zero_map",
    "SolverConfig",
    "CauchyDiagnostics",
    "CascadeResult",
    "ConvergenceResult",
    "select",
    "solve_idi",
    "solve_galerkin_cascade",
    "solve_sweeping",
    "solve_reduced",
    "uniqueness_gap",
    "constraint_violation",
    "convergence_study",
    "solve",
]


@dataclass(frozen=True)
class SingletonMap:
    """F(t, x) = {fn(t, x)}.  ``fn`` should broadcast over leading axes of x."""

    fn: Callable


@dataclass(frozen=True)
class TranslatedSet:
    """F(t, x) = center(t, x) + shape, with ``shape`` a closed convex set."""

    center: Callable
    shape: _sets.SetGeometry

    def __post_init__(self):
        if not self.shape.convex:
            raise ValueError("velocity sets must be convex")


def zero_map() -> SingletonMap:
    return SingletonMap(lambda t, x: np.zeros_like(x))


def velocity_box(lo, hi) -> TranslatedSet:
    return TranslatedSet(lambda t, x: np.zeros_like(x), _sets.Box(lo, hi))


def select(F, t: float, x) -> np.ndarray:
    """Least-norm element of F(t, x)."""
    x = np.asarray(x, dtype=float)
    if isinstance(F, SingletonMap):
        return np.broadcast_to(np.asarray(F.fn(t, x), dtype=float), x.shape).copy()
    if isinstance(F, TranslatedSet):
        c = np.broadcast_to(np.asarray(F.center(t, x), dtype=float), x.shape)
        if c.ndim == 1:
            return c + F.shape.project(-c)
        flat = c.reshape(-1, c.shape[-1])
        out = np.array([ci + F.shape.project(-ci) for ci in flat])
        return out.reshape(c.shape)
    raise TypeError(f"unsupported set-valued map representation: {type(F).__name__}")


SCHEMES = ("euler", "cascade", "catchingUp", "reduced")


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "euler"
    selection: str = "leastNorm"
    dims: tuple = ()
    tol_projection: float = 1e-12
    quad_refine: int = 4
    basis: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.selection != "leastNorm":
            raise ValueError("only the leastNorm selection is implemented")
        dims = tuple(int(n) for n in self.dims)
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ValueError("dims must be strictly increasing")
        if self.tol_projection <= 0 or self.quad_refine < 1:
            raise ValueError("tolerances must be positive")
        object.__setattr__(self, "dims", dims)


def _euler(spec: ProblemSpec, projector: Optional[Projector] = None, controls=None) -> np.ndarray:
    """Explicit Euler for x' in F(t, Px) + int_0^t g(t, s, Px(s)) ds, x(0) = P x0.

    ``controls`` (node values, shape (..., N+1, m)) switch to the controlled
    kernel g(t, s, x, u) and add leading batch axes.
    """
    grid = spec.grid
    nodes, h = grid.nodes, grid.steps
    batch = () if controls is None else controls.shape[:-2]
    D = spec.dim
    X = np.empty(batch + (grid.N + 1, D))
    x0 = spec.x0 if projector is None else apply(projector, spec.x0)
    X[..., 0, :] = x0
    Y = X if projector is None else np.empty_like(X)
    if projector is not None:
        Y[..., 0, :] = apply(projector, X[..., 0, :])
    for k in range(grid.N):
        yk = Y[..., k, :]
        v = select(spec.F, nodes[k], yk) + _history(nodes, Y, spec.g, k, controls)
        X[..., k + 1, :] = X[..., k, :] + h[k] * v
        if projector is not None:
            Y[..., k + 1, :] = apply(projector, X[..., k + 1, :])
    return X


def solve_idi(spec: ProblemSpec, cfg: Optional[SolverConfig] = None) -> Trajectory:
    """Explicit Euler with least-norm selection and trapezoid history."""
    if spec.C is not None:
        raise ValueError("solve_idi takes problems without a moving set; use solve_sweeping")
    X = _euler(spec)
    return Trajectory.from_states(spec.grid, X)


@dataclass
class CauchyDiagnostics:
    theta: dict = field(default_factory=dict)      # (n, m) -> 1/2 ||P_n x_n - P_m x_m||^2
    bound: dict = field(default_factory=dict)      # (n, m) -> theta(0) pi(t, 0) + slack
    vartheta: Optional[np.ndarray] = None
    vartheta_bound: Optional[np.ndarray] = None
    pi: Optional[ExpFactor] = None
    slack: dict = field(default_factory=dict)

    def violations(self) -> int:
        count = sum(int(np.sum(self.theta[key] > self.bound[key])) for key in self.theta)
        if self.vartheta is not None:
            count += int(np.sum(self.vartheta > self.vartheta_bound))
        return count

    @property
    def ok(self) -> bool:
        return self.violations() == 0


def _gap_bound(diff_states: np.ndarray, grid, pi: ExpFactor):
    """theta_k = 1/2 ||a_k||^2, its bound theta_0 pi(t_k, 0) and an O(h) slack.

    An Euler step changes theta by h <a_k, w_k> + h^2 ||w_k||^2 / 2, w_k the
    increment rate of a; the second term has no continuous counterpart, so
    it is summed (without the 1/2) and amplified by max_j pi(t_k, t_j)."""
    t = grid.nodes
    theta = 0.5 * np.sum(diff_states ** 2, axis=1)
    dv = np.diff(diff_states, axis=0) / grid.steps[:, None]
    local = grid.steps * np.sum(dv ** 2, axis=1)          # h_j ||delta v_j||^2
    growth = pi(0.0, t)                                  # pi(t_k, 0)
    slack = np.zeros_like(theta)
    for k in range(1, t.size):
        spread = np.max(pi(t[:k], t[k]))                 # max_j pi(t_k, t_j)
        slack[k] = grid.h * np.sum(local[:k]) * spread
    return theta, theta[0] * growth, slack


@dataclass
class CascadeResult:
    trajectories: dict
    full: Trajectory
    gaps: dict
    diagnostics: CauchyDiagnostics


def solve_galerkin_cascade(spec: ProblemSpec, cfg: Optional[SolverConfig] = None) -> CascadeResult:
    """Euler solutions of the projected problems x' in F(t, P_n x) + int g(t, s, P_n x(s)) ds,
    x(0) = P_n x0, for every rank in ``cfg.dims``, with Cauchy diagnostics."""
    cfg = cfg or SolverConfig(scheme="cascade")
    D = spec.dim
    dims = cfg.dims or tuple(range(1, D + 1))
    if dims[-1] > D:
        raise ValueError(f"rank {dims[-1]} exceeds dimension {D}")
    if spec.C is not None:
        raise ValueError("cascade applies to problems without a moving set")
    full = solve_idi(spec)
    projectors = {n: Projector(n, D, cfg.basis) for n in dims}
    trajs = {n: Trajectory.from_states(spec.grid, _euler(spec, projectors[n])) for n in dims}
    gaps = {n: float(np.max(np.linalg.norm(trajs[n].states - full.states, axis=1))) for n in dims}

    radius = float(np.max(envelopes(spec, cfg.quad_refine).r))
    pi = pi_factor(spec.envelope, spec.grid, radius, cfg.quad_refine)
    diag = CauchyDiagnostics(pi=pi)
    for i, n in enumerate(dims):
        for m in dims[:i]:
            a = apply(projectors[n], trajs[n].states) - apply(projectors[m], trajs[m].states)
            theta, bound, slack = _gap_bound(a, spec.grid, pi)
            diag.theta[(n, m)] = theta
            diag.bound[(n, m)] = bound + slack
            diag.slack[(n, m)] = slack
    return CascadeResult(trajs, full, gaps, diag)


def uniqueness_gap(traj1: Trajectory, traj2: Trajectory, envelope: GrowthEnvelope,
                   radius: Optional[float] = None, refine: int = 4) -> CauchyDiagnostics:
    """vartheta = 1/2 ||x1 - x2||^2 against vartheta(0) pi(t, 0) + K h.

    ``radius`` selects mu_R; by default the largest state norm seen on either
    path, which is all the Lipschitz estimate needs."""
    if not traj1.grid.same_as(traj2.grid):
        raise ValueError("grid mismatch between trajectories")
    if radius is None:
        radius = float(max(np.max(traj1.norms()), np.max(traj2.norms())))
    pi = pi_factor(envelope, traj1.grid, radius, refine)
    theta, bound, slack = _gap_bound(traj1.states - traj2.states, traj1.grid, pi)
    return CauchyDiagnostics(vartheta=theta, vartheta_bound=bound + slack, pi=pi, slack={"vartheta": slack})


def solve_sweeping(spec: ProblemSpec, cfg: Optional[SolverConfig] = None) -> Trajectory:
    """Catching-up scheme x_{k+1} = proj_{C(t_{k+1}, x_k)}(x_k + h (f_k + history_k)).

    The stored velocity is the realised increment, projection included."""
    if spec.C is None:
        raise ValueError("solve_sweeping needs a moving set")
    grid = spec.grid
    nodes, h = grid.nodes, grid.steps
    X = np.empty((grid.N + 1, spec.dim))
    X[0] = spec.x0
    for k in range(grid.N):
        v = select(spec.F, nodes[k], X[k]) + _history(nodes, X, spec.g, k)
        X[k + 1] = spec.C.at(nodes[k + 1], X[k]).project(X[k] + h[k] * v)
    return Trajectory.from_states(grid, X)


def solve_reduced(spec: ProblemSpec, cfg: Optional[SolverConfig] = None,
                  bounds: Optional[BoundTable] = None) -> Trajectory:
    """Euler for x' in -m(t) dd_{C(t,x)}(x) + F(t, x) + int g, the unconstrained
    reduction of the sweeping process.  Inside the set the subgradient is 0."""
    if spec.C is None:
        raise ValueError("solve_reduced needs a moving set")
    cfg = cfg or SolverConfig(scheme="reduced")
    if bounds is None:
        bounds = sweeping_envelopes(spec, cfg.quad_refine)
    if bounds.m is None:
        raise ValueError("bound table carries no m")
    grid = spec.grid
    nodes, h = grid.nodes, grid.steps
    X = np.empty((grid.N + 1, spec.dim))
    X[0] = spec.x0
    for k in range(grid.N):
        S = spec.C.at(nodes[k], X[k])
        v = select(spec.F, nodes[k], X[k]) + _history(nodes, X, spec.g, k)
        if S.distance(X[k]) > cfg.tol_projection:
            v = v - bounds.m[k] * _sets.distance_subgradient(S, X[k])
        X[k + 1] = X[k] + h[k] * v
    return Trajectory.from_states(grid, X)


def constraint_violation(traj: Trajectory, M: _sets.MovingSet, lagged: bool = False):
    """Per-node d(x_k, C(t_k, x_k)); with ``lagged`` the catching-up pairing
    d(x_{k+1}, C(t_{k+1}, x_k)) (node 0 checked against C(0, x_0))."""
    t, X = traj.grid.nodes, traj.states
    out = np.empty(t.size)
    out[0] = M.at(t[0], X[0]).distance(X[0])
    for k in range(1, t.size):
        anchor = X[k - 1] if lagged else X[k]
        out[k] = M.at(t[k], anchor).distance(X[k])
    return out, float(np.max(out))


def solve(spec: ProblemSpec, cfg: SolverConfig) -> Trajectory:
    if cfg.scheme in ("euler", "cascade"):
        return solve_idi(spec, cfg)
    if cfg.scheme == "catchingUp":
        return solve_sweeping(spec, cfg)
    return solve_reduced(spec, cfg)


@dataclass
class ConvergenceResult:
    Ns: list
    hs: np.ndarray
    gaps: np.ndarray
    order: float
    exact: bool

    @property
    def label(self) -> str:
        return "exact" if self.exact else f"{self.order:.3f}"


def convergence_study(spec: ProblemSpec, cfg: SolverConfig, Ns: Sequence[int],
                      exact_tol: float = 1e-12) -> ConvergenceResult:
    """Sup-node gaps between consecutive refinements and the least-squares
    slope of log(gap) against log(h)."""
    Ns = [int(n) for n in Ns]
    if len(Ns) < 2:
        raise ValueError("need at least two step counts")
    for a, b in zip(Ns, Ns[1:]):
        if b <= a or b % a:
            raise ValueError(f"misaligned grids: {a} does not divide {b}")
    T = spec.grid.T
    trajs = [solve(spec.with_grid(make_grid(T, n)), cfg) for n in Ns]
    gaps = []
    for (a, ta), (b, tb) in zip(zip(Ns, trajs), zip(Ns[1:], trajs[1:])):
        fine = tb.states[:: b // a]
        gaps.append(float(np.max(np.linalg.norm(ta.states - fine, axis=1))))
    gaps = np.array(gaps)
    hs = np.array([T / n for n in Ns[:-1]])
    scale = max(1.0, max(float(np.max(np.abs(tr.states))) for tr in trajs))
    if np.all(gaps <= exact_tol * scale):
        return ConvergenceResult(Ns, hs, gaps, float("inf"), True)
    ok = gaps > 0
    slope = np.polyfit(np.log(hs[ok]), np.log(gaps[ok]), 1)[0] if ok.sum() >= 2 else float("nan")
    return ConvergenceResult(Ns, hs, gaps, float(slope), False)
