"""Problem model, time grids, trajectories and history-integral quadrature."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

__all__ = [
    "TimeGrid",
    "Trajectory",
    "GrowthEnvelope",
    "ProblemSpec",
    "make_grid",
    "interpolate",
    "history_integral",
    "trapezoid_weights",
    "tabulate",
    "tabulate2",
    "zero_kernel",
]


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("empty grid")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at t=0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h(self) -> float:
        """Largest step (equal to T/N on uniform grids)."""
        return float(np.max(self.steps))

    def refine(self, factor: int) -> "TimeGrid":
        if factor < 1:
            raise ValueError("refinement factor must be >= 1")
        if factor == 1:
            return self
        parts = [np.linspace(a, b, factor + 1)[:-1] for a, b in zip(self.nodes[:-1], self.nodes[1:])]
        return TimeGrid(np.concatenate(parts + [self.nodes[-1:]]))

    def index_of(self, t: float) -> int:
        k = int(np.searchsorted(self.nodes, t))
        if k >= self.nodes.size or abs(self.nodes[k] - t) > 1e-12 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a grid node")
        return k

    def same_as(self, other: "TimeGrid") -> bool:
        return self.nodes.shape == other.nodes.shape and np.array_equal(self.nodes, other.nodes)

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and self.same_as(other)

    __hash__ = None


def make_grid(T: float, N: int) -> TimeGrid:
    """Uniform partition of [0, T] into N steps."""
    if N < 1:
        raise ValueError("empty grid: N must be >= 1")
    if not T > 0:
        raise ValueError("horizon T must be positive")
    nodes = np.linspace(0.0, float(T), int(N) + 1)
    nodes[-1] = float(T)
    return TimeGrid(nodes)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear absolutely continuous path on a grid.

    ``states`` has shape (N+1, D) and ``velocities`` shape (N, D); on each
    cell the path moves with the stored constant velocity.
    """

    grid: TimeGrid
    states: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.array(self.states, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape[0] != self.grid.N + 1 or v.shape != (self.grid.N, x.shape[1]):
            raise ValueError(f"shape mismatch: states {x.shape}, velocities {v.shape}, N={self.grid.N}")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "velocities", v)
        scale = 1.0 + float(np.max(np.abs(x), initial=0.0))
        if self.consistency_defect() > 1e-9 * scale:
            raise ValueError("velocities disagree with state increments")

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @classmethod
    def from_states(cls, grid: TimeGrid, states) -> "Trajectory":
        x = np.asarray(states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        v = np.diff(x, axis=0) / grid.steps[:, None]
        return cls(grid, x, v)

    def consistency_defect(self) -> float:
        """max_k ||x_{k+1} - x_k - h_k v_k||."""
        h = self.grid.steps[:, None]
        r = self.states[1:] - self.states[:-1] - h * self.velocities
        return float(np.max(np.linalg.norm(r, axis=1), initial=0.0))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=1)


def interpolate(traj: Trajectory, t: float) -> np.ndarray:
    nodes = traj.grid.nodes
    if t < 0 or t > traj.grid.T:
        raise ValueError(f"t={t} outside [0, {traj.grid.T}]")
    k = int(np.searchsorted(nodes, t, side="right")) - 1
    k = min(k, traj.grid.N - 1)
    if t == nodes[k]:
        return traj.states[k].copy()
    if t == nodes[k + 1]:
        return traj.states[k + 1].copy()
    return traj.states[k] + (t - nodes[k]) * traj.velocities[k]


def trapezoid_weights(s: np.ndarray) -> np.ndarray:
    """Composite trapezoid weights for the nodes ``s``."""
    w = np.zeros_like(s, dtype=float)
    if s.size < 2:
        return w
    ds = np.diff(s)
    w[:-1] += 0.5 * ds
    w[1:] += 0.5 * ds
    return w


def zero_kernel(t, s, x, u=None):
    return np.zeros_like(x)


def _history(nodes: np.ndarray, states: np.ndarray, g, k: int, controls=None) -> np.ndarray:
    # states: (..., >=k+1, D); controls: (..., >=k+1, m) already evaluated at nodes
    if k == 0:
        return np.zeros(states.shape[:-2] + states.shape[-1:])
    s = nodes[: k + 1]
    x = states[..., : k + 1, :]
    if controls is None:
        vals = g(nodes[k], s, x)
    else:
        vals = g(nodes[k], s, x, controls[..., : k + 1, :])
    vals = np.broadcast_to(np.asarray(vals, dtype=float), x.shape)
    return np.einsum("k,...kd->...d", trapezoid_weights(s), vals)


def history_integral(traj: Trajectory, g: Callable, t_k: float, u: Optional[np.ndarray] = None) -> np.ndarray:
    """Trapezoid approximation of int_0^{t_k} g(t_k, s, x(s)) ds over grid nodes.

    Kernels are vectorised over the history: ``g(t, s, X)`` receives the
    node times ``s`` (shape (k+1,)) and states ``X`` (shape (k+1, D)) and
    returns an array of shape (k+1, D).  With ``u`` given (node values of a
    control, shape (N+1, m) or (N, m) for piecewise-constant controls) the
    kernel is called as ``g(t, s, X, U)``.
    """
    k = traj.grid.index_of(t_k)
    controls = None
    if u is not None:
        controls = control_nodes(np.asarray(u, dtype=float), traj.grid.N)
    return _history(traj.grid.nodes, traj.states, g, k, controls)


def control_nodes(u: np.ndarray, N: int) -> np.ndarray:
    """Node values of a piecewise-constant control (last cell value repeated at t_N)."""
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[-2] == N + 1:
        return u
    if u.shape[-2] != N:
        raise ValueError(f"control has {u.shape[-2]} values, expected {N} or {N + 1}")
    return np.concatenate([u, u[..., -1:, :]], axis=-2)


def _const(value: float):
    value = float(value)

    def f(*args):
        return np.full(np.broadcast(*[np.asarray(a, dtype=float) for a in args]).shape, value) if args else value

    f.constant = value
    return f


def as_function(f: Any) -> Callable:
    if callable(f):
        return f
    return _const(f)


def tabulate(f: Callable, t: np.ndarray) -> np.ndarray:
    """Evaluate a scalar function of time on an array, with a pointwise fallback."""
    t = np.asarray(t, dtype=float)
    try:
        out = np.asarray(f(t), dtype=float)
        if out.shape == t.shape:
            return out
        if out.ndim == 0:
            return np.full(t.shape, float(out))
    except (TypeError, ValueError):
        pass
    return np.array([float(f(float(ti))) for ti in t.ravel()]).reshape(t.shape)


def tabulate2(f: Callable, t, s) -> np.ndarray:
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    try:
        out = np.asarray(f(t, s), dtype=float)
        if out.shape == t.shape:
            return out
        if out.ndim == 0:
            return np.full(t.shape, float(out))
    except (TypeError, ValueError):
        pass
    return np.array([float(f(float(a), float(b))) for a, b in zip(t.ravel(), s.ravel())]).reshape(t.shape)


@dataclass(frozen=True)
class GrowthEnvelope:
    """Growth and regularity data of an inclusion.

    c, d, k, k_tilde are functions of t; sigma is a function of (t, s) on
    s <= t; mu is a function of (radius, t).  Plain numbers are accepted
    and turned into constant functions.
    """

    c: Any = 0.0
    d: Any = 0.0
    sigma: Any = 0.0
    mu: Any = 0.0
    k: Any = 0.0
    k_tilde: Any = 0.0

    def __post_init__(self):
        for name in ("c", "d", "sigma", "mu", "k", "k_tilde"):
            object.__setattr__(self, name, as_function(getattr(self, name)))

    def mu_at(self, radius: float) -> Callable:
        mu = self.mu
        return lambda t: tabulate(lambda tt: mu(radius, tt), t)

    def validate(self, grid: TimeGrid, radii=(0.0, 1.0, 10.0)) -> None:
        t = grid.refine(2).nodes
        for name in ("c", "d", "k"):
            if np.any(tabulate(getattr(self, name), t) < 0):
                raise ValueError(f"envelope function {name} must be nonnegative")
        tt, ss = np.meshgrid(t[::4], t[::4], indexing="ij")
        low = tt >= ss
        if np.any(tabulate2(self.sigma, tt[low], ss[low]) < 0):
            raise ValueError("envelope function sigma must be nonnegative")
        prev = None
        for r in radii:
            m = tabulate(lambda x: self.mu(r, x), t)
            if np.any(m < 0):
                raise ValueError("envelope function mu must be nonnegative")
            if prev is not None and np.any(m < prev - 1e-12):
                raise ValueError("mu_r must be nondecreasing in r")
            prev = m


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """One inclusion instance x' in F(t,x) + int_0^t g(t,s,x(s)) ds, x(0)=x0,
    optionally swept by a moving set C(t, x)."""

    x0: np.ndarray
    grid: TimeGrid
    F: Any
    g: Callable = zero_kernel
    C: Any = None
    envelope: GrowthEnvelope = field(default_factory=GrowthEnvelope)
    alpha0: float = 1.0
    rho: float = float("inf")
    name: str = ""

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float)).copy()
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if not (0 < self.alpha0 <= 1):
            raise ValueError("alpha0 must lie in (0, 1]")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.C is not None:
            start = self.C.at(0.0, x0)
            if start.distance(x0) > 1e-12:
                raise ValueError("infeasible start: x0 must lie in C(0, x0)")

    @property
    def dim(self) -> int:
        return self.x0.size

    def with_grid(self, grid: TimeGrid) -> "ProblemSpec":
        return ProblemSpec(self.x0, grid, self.F, self.g, self.C, self.envelope, self.alpha0, self.rho, self.name)

    def require_sweeping(self) -> None:
        if self.C is None:
            raise ValueError("problem has no moving set")
        if not self.alpha0 ** 2 > self.C.L:
            raise ValueError(f"alpha0^2 = {self.alpha0 ** 2} must exceed L = {self.C.L}")
