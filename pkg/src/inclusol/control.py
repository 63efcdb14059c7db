"""Direct transcription of the optimal control problem

    min  l(x(0), x(T)) + int_0^T phi(s, x, x', u) ds
    s.t. x' in F(t, x) + int_0^t g(t, s, x(s), u(s)) ds,  u(t) in U,

with piecewise-constant controls, plus a probe of norm-weak continuity of
the controlled history integral.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import sets as _sets
from .core import ProblemSpec, TimeGrid, Trajectory, control_nodes, make_grid
from .solver import _euler

__all__ = [
    "ControlProblem",
    "ControlGrid",
    "OptimizeResult",
    "ProbeResult",
    "forward_simulate",
    "evaluate_cost",
    "optimize",
    "weak_continuity_probe",
    "square_wave",
]

log = logging.getLogger(__name__)

FD_STEP = 1e-5
ENDPOINT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Transcribed control problem.

    ``dynamics.g`` is the controlled kernel g(t, s, X, U).  ``running_cost``
    is called as phi(s, X, V, U) on arrays with a leading node axis (and
    possibly batch axes before it) and returns one value per node;
    ``terminal_cost`` as l(x0, xT) on arrays of states.
    """

    dynamics: ProblemSpec
    running_cost: Callable
    terminal_cost: Callable
    U: _sets.SetGeometry
    control_dim: int = 1
    terminal_box: Optional[_sets.Box] = None
    eta: Optional[Callable] = None
    strengthened_growth: bool = True

    def __post_init__(self):
        if isinstance(self.U, _sets.Box):
            if not np.all(np.isfinite(self.U.lo)) or not np.all(np.isfinite(self.U.hi)):
                raise ValueError("control set U must be bounded")
            if self.U.lo.size != self.control_dim:
                raise ValueError("control set dimension disagrees with control_dim")
        elif not isinstance(self.U, _sets.Ball):
            raise ValueError("control set U must be a box or a ball")

    @property
    def grid(self) -> TimeGrid:
        return self.dynamics.grid

    def project_controls(self, u: np.ndarray) -> np.ndarray:
        if isinstance(self.U, _sets.Box):
            return np.clip(u, self.U.lo, self.U.hi)
        d = u - self.U.center
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        scale = np.where(n > self.U.radius, self.U.radius / np.where(n > 0, n, 1.0), 1.0)
        return self.U.center + d * scale

    def sample_controls(self, rng: np.random.Generator) -> np.ndarray:
        N, m = self.grid.N, self.control_dim
        if isinstance(self.U, _sets.Box):
            return rng.uniform(self.U.lo, self.U.hi, size=(N, m))
        return self.project_controls(self.U.center + self.U.radius * rng.uniform(-1, 1, size=(N, m)))


@dataclass(frozen=True, eq=False)
class ControlGrid:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.values, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if u.shape[0] != self.grid.N:
            raise ValueError(f"expected {self.grid.N} control values, got {u.shape[0]}")
        object.__setattr__(self, "values", u)

    def check(self, U: _sets.SetGeometry, tol: float = 1e-12) -> bool:
        return all(U.distance(v) <= tol for v in self.values)


def _simulate(P: ControlProblem, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return _euler(P.dynamics, controls=control_nodes(u, P.grid.N))


def forward_simulate(P: ControlProblem, u: ControlGrid) -> Trajectory:
    if not u.grid.same_as(P.grid):
        raise ValueError("control grid differs from the dynamics grid")
    return Trajectory.from_states(P.grid, _simulate(P, u.values))


def _cost_from_states(P: ControlProblem, X: np.ndarray, u: np.ndarray) -> np.ndarray:
    grid = P.grid
    t, h = grid.nodes, grid.steps
    V = np.diff(X, axis=-2) / h[:, None]
    left = P.running_cost(t[:-1], X[..., :-1, :], V, u)
    right = P.running_cost(t[1:], X[..., 1:, :], V, u)
    running = np.sum(0.5 * h * (np.asarray(left) + np.asarray(right)), axis=-1)
    cost = np.asarray(P.terminal_cost(X[..., 0, :], X[..., -1, :]), dtype=float) + running
    bad = np.any(np.abs(X[..., 0, :] - P.dynamics.x0) > ENDPOINT_TOL, axis=-1)
    if P.terminal_box is not None:
        xT = X[..., -1, :]
        bad = bad | np.any((xT < P.terminal_box.lo - ENDPOINT_TOL) | (xT > P.terminal_box.hi + ENDPOINT_TOL), axis=-1)
    return np.where(bad, np.inf, cost)


def evaluate_cost(P: ControlProblem, traj: Trajectory, u: ControlGrid) -> float:
    """l(x(0), x(T)) plus the trapezoid rule of phi on each cell, using the cell's
    velocity and control at both ends.  Endpoints outside C give +inf."""
    if not (traj.grid.same_as(P.grid) and u.grid.same_as(P.grid)):
        raise ValueError("grids are not aligned")
    return float(_cost_from_states(P, traj.states, u.values))


def _reduced_cost(P: ControlProblem, u: np.ndarray) -> np.ndarray:
    return _cost_from_states(P, _simulate(P, u), u)


def _fd_gradient(P: ControlProblem, u: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of the reduced cost, all perturbations in one batch."""
    flat = u.ravel()
    n = flat.size
    delta = step * np.maximum(1.0, np.abs(flat))
    batch = np.repeat(flat[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    batch[idx, idx] += delta
    batch[n + idx, idx] -= delta
    J = _reduced_cost(P, batch.reshape((2 * n,) + u.shape))
    return ((J[:n] - J[n:]) / (2 * delta)).reshape(u.shape)


@dataclass
class OptimizeResult:
    control: ControlGrid
    trajectory: Trajectory
    cost: float
    grad_norm: float
    log: list = field(default_factory=list)   # (iteration, cost, gradient-mapping norm)
    start: int = 0
    starts: list = field(default_factory=list)


def _descend(P: ControlProblem, u: np.ndarray, iterations: int, tol: float):
    h = P.grid.h
    J = float(_reduced_cost(P, u))
    if not np.isfinite(J):
        raise RuntimeError("initial control gives a non-finite cost")
    grad = _fd_gradient(P, u) / h     # L2-metric gradient
    step = 1.0
    history = []
    gmap = np.inf
    for it in range(iterations + 1):
        gmap = float(np.sqrt(h * np.sum((u - P.project_controls(u - grad)) ** 2)))
        history.append((it, J, gmap))
        if gmap < tol or it == iterations:
            break
        if it >= 2 and history[-3][1] - J <= 1e-13 * max(1.0, abs(J)):
            break   # stagnated at the finite-difference noise floor
        accepted = False
        for _ in range(60):
            trial = P.project_controls(u - step * grad)
            move = trial - u
            Jt = float(_reduced_cost(P, trial))
            if not np.isfinite(Jt) and np.isfinite(J):
                step *= 0.5
                continue
            if Jt <= J - 1e-4 / step * h * np.sum(move ** 2):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if step < 1e-14:
                log.info("line search stalled at iteration %d (gradient-mapping norm %.3e)", it, gmap)
                break
            raise RuntimeError("divergent line search: no descent step found")
        new_grad = _fd_gradient(P, trial) / h
        s, y = (trial - u).ravel(), (new_grad - grad).ravel()
        sy = float(h * s @ y)
        # Barzilai-Borwein initial step for the next backtracking search
        step = float(h * s @ s) / sy if sy > 1e-300 else min(step * 2.0, 1e6)
        u, J, grad = trial, Jt, new_grad
    return u, J, gmap, history


def optimize(P: ControlProblem, starts: int = 1, iterations: int = 200, seed: int = 0,
             tol: float = 1e-7) -> OptimizeResult:
    """Projected gradient descent on the control grid, multi-start.

    Start 0 is the projection of the zero control onto U; further starts are
    uniform samples from deterministic seeds ``seed + i``.  Backtracking
    keeps the recorded cost sequence nonincreasing."""
    if starts < 1:
        raise ValueError("starts must be >= 1")
    N, m = P.grid.N, P.control_dim
    best = None
    summary = []
    for i in range(starts):
        if i == 0:
            u0 = P.project_controls(np.zeros((N, m)))
        else:
            u0 = P.sample_controls(np.random.default_rng(seed + i))
        u, J, gmap, history = _descend(P, u0, iterations, tol)
        summary.append((i, J, gmap))
        if best is None or J < best[1]:
            best = (u, J, gmap, history, i)
    u, J, gmap, history, i = best
    cg = ControlGrid(P.grid, u)
    traj = Trajectory.from_states(P.grid, _simulate(P, u))
    return OptimizeResult(cg, traj, J, gmap, history, i, summary)


def square_wave(s: np.ndarray, n: int, T: float, low, high) -> np.ndarray:
    """u_n(s): ``high`` on the first half of each of n periods, ``low`` on the second."""
    low, high = np.atleast_1d(low).astype(float), np.atleast_1d(high).astype(float)
    phase = np.floor(2 * n * np.asarray(s) / T).astype(int) % 2
    return np.where(phase[:, None] == 0, high, low)


@dataclass
class ProbeResult:
    ns: list
    times: np.ndarray
    tables: dict        # n -> residual ||G(x, u_n)(t) - G(x, u_bar)(t)|| at ``times``
    residuals: np.ndarray
    flagged: bool


def weak_continuity_probe(kernel: Callable, modes: int = 6, T: float = 1.0, dim: int = 1,
                          low=-1.0, high=1.0, x: Optional[Callable] = None,
                          cells_per_period: int = 64, eval_points: int = 64) -> ProbeResult:
    """Residuals of the controlled history integral along square waves u_n,
    n = 1, 2, 4, ..., 2^(modes-1), which converge weakly to (low + high)/2.

    Kernels linear in u give residuals O(1/n); a residual that does not
    decay (last one above half the first) flags the kernel."""
    if modes < 1:
        raise ValueError("modes must be >= 1")
    ns = [2 ** i for i in range(modes)]
    N = 2 * ns[-1] * cells_per_period
    grid = make_grid(T, N)
    mids = 0.5 * (grid.nodes[1:] + grid.nodes[:-1])
    stride = N // eval_points
    times = grid.nodes[::stride]
    if x is None:
        X = np.zeros((N, dim))
    else:
        X = np.asarray([np.atleast_1d(x(s)) for s in mids], dtype=float)
    low_v, high_v = np.atleast_1d(low).astype(float), np.atleast_1d(high).astype(float)
    ubar = np.broadcast_to(0.5 * (low_v + high_v), (N, low_v.size))

    def G(u):
        out = np.zeros((times.size, X.shape[1]))
        for i, t in enumerate(times):
            k = i * stride
            if k == 0:
                continue
            vals = np.broadcast_to(kernel(t, mids[:k], X[:k], u[:k]), (k, X.shape[1]))
            out[i] = grid.steps[:k] @ vals
        return out

    base = G(ubar)
    tables, residuals = {}, []
    for n in ns:
        diff = G(square_wave(mids, n, T, low_v, high_v)) - base
        tables[n] = np.linalg.norm(diff, axis=1)
        residuals.append(float(np.max(tables[n])))
    residuals = np.array(residuals)
    flagged = bool(residuals[0] > 1e-12 and residuals[-1] > 0.5 * residuals[0])
    return ProbeResult(ns, times, tables, residuals, flagged)
