"""Constraint-set geometry: distance, projection, distance subgradients,
alpha-far estimation and moving-set families C(t, x)."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "SetGeometry",
    "Halfspace",
    "Box",
    "Ball",
    "Polyhedron",
    "ComplementOfBall",
    "FiniteUnion",
    "MovingSet",
    "LipschitzReport",
    "distance",
    "project",
    "distance_subgradient",
    "alpha_far_estimate",
    "lipschitz_probe",
    "min_norm_in_hull",
    "translating",
    "static",
]

BOUNDARY_TOL = 1e-12
TIE_RTOL = 1e-6


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def _lex_max(points: Sequence[np.ndarray]) -> np.ndarray:
    return max(points, key=lambda p: tuple(p))


class SetGeometry:
    """Closed nonempty subset of R^D.  Subclasses provide the nearest-point map."""

    convex = True

    def project(self, x) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x) -> float:
        x = _vec(x)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, x, tol: float = BOUNDARY_TOL) -> bool:
        return self.distance(x) <= tol

    def candidates(self, x, rtol: float = TIE_RTOL) -> list:
        """Points of S at distance within a relative ``rtol`` of d_S(x)."""
        return [self.project(x)]

    def outward_normal(self, x, tol: float = BOUNDARY_TOL) -> Optional[np.ndarray]:
        """Unit outward normal at a boundary point, or None in the interior."""
        raise NotImplementedError

    def translate(self, shift) -> "SetGeometry":
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Halfspace(SetGeometry):
    """{x : <a, x> <= b}."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = _vec(self.a)
        if not np.linalg.norm(a) > 0:
            raise ValueError("halfspace normal must be nonzero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def project(self, x):
        x = _vec(x)
        excess = x @ self.a - self.b
        if excess <= 0:
            return x.copy()
        return x - (excess / (self.a @ self.a)) * self.a

    def distance(self, x):
        return max(0.0, float((_vec(x) @ self.a - self.b) / np.linalg.norm(self.a)))

    def outward_normal(self, x, tol=BOUNDARY_TOL):
        na = np.linalg.norm(self.a)
        if (_vec(x) @ self.a - self.b) / na >= -tol * max(1.0, abs(self.b) / na):
            return self.a / na
        return None

    def translate(self, shift):
        return Halfspace(self.a, self.b + float(self.a @ _vec(shift)))


@dataclass(frozen=True, eq=False)
class Box(SetGeometry):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo), _vec(self.hi)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("box needs lo <= hi with matching shapes")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, x):
        return np.clip(_vec(x), self.lo, self.hi)

    def outward_normal(self, x, tol=BOUNDARY_TOL):
        x = _vec(x)
        for i in range(x.size):
            scale = tol * max(1.0, abs(x[i]))
            if x[i] >= self.hi[i] - scale:
                n = np.zeros_like(x)
                n[i] = 1.0
                return n
            if x[i] <= self.lo[i] + scale:
                n = np.zeros_like(x)
                n[i] = -1.0
                return n
        return None

    def translate(self, shift):
        shift = _vec(shift)
        return Box(self.lo + shift, self.hi + shift)


@dataclass(frozen=True, eq=False)
class Ball(SetGeometry):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    def project(self, x):
        x = _vec(x)
        dx = x - self.center
        n = np.linalg.norm(dx)
        if n <= self.radius:
            return x.copy()
        return self.center + (self.radius / n) * dx

    def distance(self, x):
        return max(0.0, float(np.linalg.norm(_vec(x) - self.center) - self.radius))

    def outward_normal(self, x, tol=BOUNDARY_TOL):
        dx = _vec(x) - self.center
        n = np.linalg.norm(dx)
        if n >= self.radius * (1 - tol):
            return dx / n
        return None

    def translate(self, shift):
        return Ball(self.center + _vec(shift), self.radius)


def _polyhedron_projection(A: np.ndarray, b: np.ndarray, x: np.ndarray, tol: float) -> np.ndarray:
    # exact active-set enumeration (small problems); KKT point of a strictly convex QP is the optimum
    m, D = A.shape
    best, best_d = None, np.inf
    for size in range(1, min(m, D) + 1):
        for S in combinations(range(m), size):
            AS = A[list(S)]
            lam, *_ = np.linalg.lstsq(AS @ AS.T, AS @ x - b[list(S)], rcond=None)
            if np.any(lam < -tol):
                continue
            y = x - AS.T @ lam
            if np.all(A @ y <= b + tol * (1 + np.abs(b))):
                d = np.linalg.norm(x - y)
                if d < best_d:
                    best, best_d = y, d
        if best is not None:
            return best
    raise RuntimeError("polyhedron projection failed (empty polyhedron?)")


def _polyhedron_projection_dual(A, b, x, tol):
    # Hildreth dual coordinate ascent, then polish on the detected active set
    m = A.shape[0]
    lam = np.zeros(m)
    y = x.copy()
    row_sq = np.einsum("ij,ij->i", A, A)
    for _ in range(20000):
        change = 0.0
        for i in range(m):
            step = max(-lam[i], (A[i] @ y - b[i]) / row_sq[i])
            if step != 0.0:
                lam[i] += step
                y -= step * A[i]
                change = max(change, abs(step))
        if change < 1e-15:
            break
    active = np.flatnonzero(lam > 0)
    if active.size:
        AS = A[active]
        mu, *_ = np.linalg.lstsq(AS @ AS.T, AS @ x - b[active], rcond=None)
        z = x - AS.T @ mu
        if np.all(mu >= -tol) and np.all(A @ z <= b + tol * (1 + np.abs(b))):
            return z
    return y


@dataclass(frozen=True, eq=False)
class Polyhedron(SetGeometry):
    """{x : A x <= b}, assumed nonempty."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = _vec(self.b)
        if A.shape[0] != b.size:
            raise ValueError("polyhedron A and b disagree in row count")
        if np.any(np.linalg.norm(A, axis=1) == 0):
            raise ValueError("polyhedron rows must be nonzero")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def project(self, x):
        x = _vec(x)
        tol = 1e-13
        if np.all(self.A @ x <= self.b):
            return x.copy()
        m, D = self.A.shape
        work = sum(comb(m, k) for k in range(1, min(m, D) + 1))
        if work <= 5000:
            return _polyhedron_projection(self.A, self.b, x, tol)
        return _polyhedron_projection_dual(self.A, self.b, x, tol)

    def outward_normal(self, x, tol=BOUNDARY_TOL):
        x = _vec(x)
        norms = np.linalg.norm(self.A, axis=1)
        slack = (self.A @ x - self.b) / norms
        for i in range(len(slack)):
            if slack[i] >= -tol * max(1.0, abs(self.b[i]) / norms[i]):
                return self.A[i] / norms[i]
        return None

    def translate(self, shift):
        return Polyhedron(self.A, self.b + self.A @ _vec(shift))


@dataclass(frozen=True, eq=False)
class ComplementOfBall(SetGeometry):
    """{x : ||x - c|| >= R}; uniformly prox-regular with constant R."""

    center: np.ndarray
    radius: float
    convex = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    def project(self, x):
        x = _vec(x)
        dx = x - self.center
        n = np.linalg.norm(dx)
        if n >= self.radius:
            return x.copy()
        if n == 0.0:
            # every sphere point is nearest; lexicographically largest is c + R e_1
            e = np.zeros_like(x)
            e[0] = 1.0
            return self.center + self.radius * e
        return self.center + (self.radius / n) * dx

    def distance(self, x):
        return max(0.0, float(self.radius - np.linalg.norm(_vec(x) - self.center)))

    def candidates(self, x, rtol=TIE_RTOL):
        x = _vec(x)
        n = np.linalg.norm(x - self.center)
        if n <= rtol * self.radius:
            # near the centre the nearest-point set is (almost) the whole sphere
            eye = np.eye(x.size)
            return [self.center + s * self.radius * e for e in eye for s in (1.0, -1.0)]
        return [self.project(x)]

    def outward_normal(self, x, tol=BOUNDARY_TOL):
        dx = _vec(x) - self.center
        n = np.linalg.norm(dx)
        if n <= self.radius * (1 + tol) and n > 0:
            return -dx / n
        return None

    def translate(self, shift):
        return ComplementOfBall(self.center + _vec(shift), self.radius)


@dataclass(frozen=True, eq=False)
class FiniteUnion(SetGeometry):
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("finite union needs at least one member")
        if not all(m.convex for m in members):
            raise ValueError("finite union members must be convex")
        object.__setattr__(self, "members", members)

    @property
    def convex(self):
        return len(self.members) == 1

    def _nearest(self, x):
        projs = [m.project(x) for m in self.members]
        dists = np.array([np.linalg.norm(x - p) for p in projs])
        return projs, dists

    def project(self, x):
        x = _vec(x)
        projs, dists = self._nearest(x)
        dmin = dists.min()
        tied = [p for p, d in zip(projs, dists) if d <= dmin + 1e-12 * max(1.0, dmin)]
        return _lex_max(tied).copy()

    def distance(self, x):
        return float(min(m.distance(x) for m in self.members))

    def candidates(self, x, rtol=TIE_RTOL):
        x = _vec(x)
        projs, dists = self._nearest(x)
        dmin = dists.min()
        return [p for p, d in zip(projs, dists) if d <= dmin * (1 + rtol)]

    def outward_normal(self, x, tol=BOUNDARY_TOL):
        x = _vec(x)
        normals = []
        for m in self.members:
            if m.distance(x) > tol:
                continue
            n = m.outward_normal(x, tol)
            if n is None:
                return None
            normals.append(n)
        return normals[0] if normals else None

    def translate(self, shift):
        return FiniteUnion(tuple(m.translate(shift) for m in self.members))


def distance(S: SetGeometry, x) -> float:
    return S.distance(_vec(x))


def project(S: SetGeometry, x) -> np.ndarray:
    """One element of Proj_S(x); ties go to the lexicographically largest point."""
    return S.project(_vec(x))


def distance_subgradient(S: SetGeometry, x, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Unit element of the Clarke subdifferential of d_S at x.

    Off the set this is (x - p)/||x - p|| with p = project(S, x); on the
    boundary the variant's outward normal is returned.
    """
    x = _vec(x)
    p = S.project(x)
    diff = x - p
    d = np.linalg.norm(diff)
    if d > tol * max(1.0, np.linalg.norm(x)):
        return diff / d
    n = S.outward_normal(x, tol)
    if n is None:
        raise ValueError("no nonzero subgradient selected: x lies in the interior of S")
    return n


def min_norm_in_hull(V) -> float:
    """Norm of the least-norm point of conv{rows of V}."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    k = V.shape[0]
    if k == 1:
        return float(np.linalg.norm(V[0]))
    if k > 12:
        big = 1e4
        Aug = np.vstack([V.T, big * np.ones((1, k))])
        rhs = np.concatenate([np.zeros(V.shape[1]), [big]])
        w, _ = optimize.nnls(Aug, rhs)
        w /= w.sum()
        return float(np.linalg.norm(w @ V))
    best = min(np.linalg.norm(v) for v in V)
    for size in range(2, k + 1):
        for S in combinations(range(k), size):
            W = V[list(S)]
            G = W @ W.T
            M = np.block([[G, np.ones((size, 1))], [np.ones((1, size)), np.zeros((1, 1))]])
            rhs = np.zeros(size + 1)
            rhs[-1] = 1.0
            sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            w = sol[:size]
            if np.all(w >= -1e-12) and abs(w.sum() - 1) < 1e-9:
                best = min(best, np.linalg.norm(w @ W))
    return float(best)


def alpha_far_estimate(S: SetGeometry, rho: float, samples) -> float:
    """Sampled inf of d(0, subdifferential of d_S) over the tube 0 < d_S < rho."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    best = np.inf
    used = 0
    for x in samples:
        d = S.distance(x)
        if not (0 < d < rho):
            continue
        used += 1
        dirs = []
        for p in S.candidates(x):
            diff = x - p
            dirs.append(diff / np.linalg.norm(diff))
        # a unique nearest point gives a unit subgradient: exactly 1
        best = min(best, 1.0 if len(dirs) == 1 else min_norm_in_hull(np.array(dirs)))
    if used == 0:
        raise ValueError("empty tube sample: no sample satisfies 0 < d(x, S) < rho")
    return float(min(1.0, best))


@dataclass(frozen=True, eq=False)
class MovingSet:
    """Family (t, x) -> C(t, x) with Lipschitz data (zeta, L).

    ``kind`` is "state" for state-dependent families and "time" for
    families that ignore x (then L must be 0).
    """

    family: Callable
    zeta_dot: Callable = lambda t: 0.0
    L: float = 0.0
    kind: str = "state"
    zeta: Optional[Callable] = None

    def __post_init__(self):
        if not (0.0 <= self.L < 1.0):
            raise ValueError("L must lie in [0,1)")
        if self.kind not in ("state", "time"):
            raise ValueError("kind must be 'state' or 'time'")
        if self.kind == "time" and self.L != 0.0:
            raise ValueError("time-only families have L = 0")

    def at(self, t: float, x=None) -> SetGeometry:
        if self.kind == "time":
            return self.family(t, None)
        return self.family(t, x)

    def zeta_value(self, t: float) -> float:
        if self.zeta is not None:
            return float(self.zeta(t))
        if t == 0:
            return 0.0
        val, _ = integrate.quad(lambda s: abs(float(self.zeta_dot(s))), 0.0, t, limit=200)
        return val

    def zeta_rate(self, t: np.ndarray, h: Optional[float] = None) -> np.ndarray:
        """|zeta'| on an array of times; forward differences if only zeta is known."""
        t = np.asarray(t, dtype=float)
        if self.zeta_dot is not None:
            from .core import tabulate

            return np.abs(tabulate(self.zeta_dot, t))
        h = h or 1e-6
        z0 = np.array([self.zeta_value(s) for s in t])
        z1 = np.array([self.zeta_value(s + h) for s in t])
        return np.abs(z1 - z0) / h


def translating(base: SetGeometry, path: Callable, path_rate: Optional[Callable] = None,
                coupling=None) -> MovingSet:
    """C(t, x) = base + path(t) + W x.

    The distance moves at most ||path(t) - path(s)|| + ||W|| ||x - y||, so
    zeta is the arclength of the path and L the spectral norm of W.
    """
    W = None if coupling is None else np.atleast_2d(np.asarray(coupling, dtype=float))
    L = 0.0 if W is None else float(np.linalg.norm(W, 2))

    if path_rate is None:
        def path_rate(t, _h=1e-7):
            return (_vec(path(t + _h)) - _vec(path(t))) / _h

    def zeta_dot(t):
        if np.ndim(t):
            return np.array([zeta_dot(float(s)) for s in np.ravel(t)]).reshape(np.shape(t))
        return float(np.linalg.norm(_vec(path_rate(t))))

    def family(t, x):
        shift = _vec(path(t))
        if W is not None:
            shift = shift + W @ _vec(x)
        return base.translate(shift)

    return MovingSet(family, zeta_dot, L, "time" if W is None else "state")


def static(base: SetGeometry) -> MovingSet:
    return MovingSet(lambda t, x: base, lambda t: 0.0, 0.0, "time", zeta=lambda t: 0.0)


@dataclass
class LipschitzReport:
    worst_ratio: float
    zeta_rate: float
    L_estimate: float
    pairs: int
    compliant: bool
    violations: list = field(default_factory=list)


def lipschitz_probe(M: MovingSet, probes, tol: float = 1e-9) -> LipschitzReport:
    """Check sampled |d(z,C(t,x)) - d(z,C(s,y))| against |zeta(t)-zeta(s)| + L||x-y||."""
    probes = [(float(t), _vec(x), _vec(z)) for t, x, z in probes]
    zetas = [M.zeta_value(t) for t, _, _ in probes]
    sets = [M.at(t, x) for t, x, _ in probes]
    worst = zrate = lest = 0.0
    violations = []
    count = 0
    for i in range(len(probes)):
        for j in range(len(probes)):
            if i == j:
                continue
            ti, xi, z = probes[i]
            tj, xj, _ = probes[j]
            var = abs(sets[i].distance(z) - sets[j].distance(z))
            dz = abs(zetas[i] - zetas[j])
            dx = float(np.linalg.norm(xi - xj)) if M.kind == "state" else 0.0
            bound = dz + M.L * dx
            count += 1
            if var <= tol:
                ratio = 0.0
            elif bound == 0.0:
                ratio = np.inf
            else:
                ratio = var / bound
            worst = max(worst, ratio)
            if dx == 0.0 and dz > 0:
                zrate = max(zrate, var / dz)
            if dz == 0.0 and dx > 0:
                lest = max(lest, var / dx)
            if var > bound + tol:
                violations.append((i, j, var, bound))
    return LipschitzReport(float(worst), float(zrate), float(lest), count, not violations, violations)
