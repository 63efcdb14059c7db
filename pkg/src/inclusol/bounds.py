"""Gronwall engine and a-priori envelopes.

All time integrals use the composite trapezoid rule on the problem grid
refined by ``refine`` (4 by default); tables are reported at grid nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import GrowthEnvelope, ProblemSpec, TimeGrid, Trajectory, make_grid, tabulate, tabulate2

__all__ = [
    "ExpFactor",
    "BoundTable",
    "ComplianceReport",
    "ConvergenceError",
    "exp_factor",
    "gronwall_bound",
    "state_envelope",
    "velocity_envelope",
    "envelopes",
    "sweeping_envelopes",
    "horizon_split",
    "check_bounds",
    "pi_factor",
    "cumtrapz",
]

REFINE = 4
PICARD_TOL = 1e-10
PICARD_MAX_ITER = 200


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def cumtrapz(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def _constant_of(f) -> Optional[float]:
    return getattr(f, "constant", None)


class _Triangle:
    """Rows of a kernel k(t_i, s) on s in [0, t_i] over refined nodes, with
    trapezoid row integrals against arbitrary weights."""

    CACHE_LIMIT = 3000

    def __init__(self, kernel: Callable, t: np.ndarray):
        self.t = t
        self.kernel = kernel
        self.const = _constant_of(kernel)
        self.rows = None
        if self.const is None and t.size <= self.CACHE_LIMIT:
            tt, ss = np.meshgrid(t, t, indexing="ij")
            full = tabulate2(kernel, tt, ss)
            self.rows = np.tril(full)

    def _row(self, i):
        if self.rows is not None:
            return self.rows[i, : i + 1]
        return tabulate2(self.kernel, np.full(i + 1, self.t[i]), self.t[: i + 1])

    def integrate(self, weights: Optional[np.ndarray] = None, stride: int = 1) -> np.ndarray:
        """out[i] = int_0^{t_i} k(t_i, s) w(s) ds; ``stride`` > 1 uses only every
        stride-th node in s (coarse-grid trapezoid) for rows that are multiples of it."""
        t = self.t
        n = t.size
        w = np.ones(n) if weights is None else weights
        if self.const is not None and stride == 1:
            return self.const * cumtrapz(w, t)
        out = np.zeros(n)
        for i in range(1, n):
            if stride > 1 and i % stride:
                continue
            idx = slice(0, i + 1, stride)
            s = t[idx]
            vals = (self.const if self.const is not None else self._row(i)[idx]) * w[idx]
            out[i] = np.sum(0.5 * (vals[1:] + vals[:-1]) * np.diff(s))
        return out


class ExpFactor:
    """(t1, t2) -> exp(int_{t1}^{t2} (beta(s) + int_0^s gamma(s, tau) dtau) ds).

    Built once on a fine grid; the cumulative exponent is interpolated
    linearly between nodes, so the cocycle identity holds to rounding.
    """

    def __init__(self, t: np.ndarray, exponent: np.ndarray):
        self.t = t
        self.exponent = exponent

    @classmethod
    def build(cls, t: np.ndarray, beta: Callable, gamma: Callable) -> "ExpFactor":
        rate = tabulate(beta, t) + _Triangle(gamma, t).integrate()
        return cls(t, cumtrapz(rate, t))

    def E(self, t):
        return np.interp(t, self.t, self.exponent)

    def __call__(self, t1, t2):
        return np.exp(self.E(t2) - self.E(t1))


def exp_factor(t1: float, t2: float, beta: Callable, gamma: Callable, steps: int = 4096) -> float:
    """e(t2, t1) for t1 <= t2 with trapezoid quadrature on ``steps`` cells of [0, t2]."""
    if t1 > t2:
        raise ValueError("exp_factor needs t1 <= t2")
    if t2 == 0:
        return 1.0
    t = make_grid(t2, steps).nodes
    return float(ExpFactor.build(t, _fn(beta), _fn2(gamma))(t1, t2))


def _fn(f):
    from .core import as_function

    return as_function(f)


_fn2 = _fn


def gronwall_bound(u0: float, alpha, beta, gamma, grid: TimeGrid, refine: int = REFINE) -> np.ndarray:
    """t -> u0 e(t,0) + int_0^t alpha(s) e(t,s) ds at the grid nodes."""
    if u0 < 0:
        raise ValueError("u0 must be nonnegative")
    alpha, beta, gamma = _fn(alpha), _fn(beta), _fn2(gamma)
    t = grid.refine(refine).nodes
    ef = ExpFactor.build(t, beta, gamma)
    E = ef.exponent
    inner = cumtrapz(tabulate(alpha, t) * np.exp(-E), t)
    bound = np.exp(E) * (u0 + inner)
    return bound[::refine]


@dataclass
class BoundTable:
    grid: TimeGrid
    r: np.ndarray
    psi: np.ndarray
    m: Optional[np.ndarray] = None
    exp_factor: Optional[ExpFactor] = None
    slack_r: Optional[np.ndarray] = None
    slack_psi: Optional[np.ndarray] = None
    residuals: list = field(default_factory=list)

    def __post_init__(self):
        n = self.grid.N + 1
        self.r = np.asarray(self.r, dtype=float) * np.ones(n)
        self.psi = np.asarray(self.psi, dtype=float) * np.ones(n)
        if self.m is not None:
            self.m = np.asarray(self.m, dtype=float) * np.ones(n)
        if self.slack_r is None:
            self.slack_r = np.zeros(n)
        if self.slack_psi is None:
            self.slack_psi = np.zeros(n)

    def columns(self) -> dict:
        cols = {"t": self.grid.nodes, "r": self.r, "psi": self.psi}
        cols["m"] = self.m if self.m is not None else np.zeros_like(self.r)
        return cols


class _EnvelopeData:
    """Envelope functions tabulated on the refined grid."""

    def __init__(self, spec: ProblemSpec, refine: int):
        env: GrowthEnvelope = spec.envelope
        self.refine = refine
        self.t = spec.grid.refine(refine).nodes
        self.c = tabulate(env.c, self.t)
        self.d = tabulate(env.d, self.t)
        self.sigma = _Triangle(env.sigma, self.t)
        self.Sig = self.sigma.integrate()
        self.ef = ExpFactor(self.t, cumtrapz(self.c + self.Sig, self.t))
        self.x0 = float(np.linalg.norm(spec.x0))

    def r_given(self, extra: np.ndarray) -> np.ndarray:
        # r(t) = |x0| e(t,0) + int_0^t (d + extra + Sig) e(t,s) ds
        E = self.ef.exponent
        inner = cumtrapz((self.d + extra + self.Sig) * np.exp(-E), self.t)
        return np.exp(E) * (self.x0 + inner)

    def psi_core(self, r: np.ndarray) -> np.ndarray:
        # c r + d + int sigma + int sigma r
        return self.c * r + self.d + self.Sig + self.sigma.integrate(r)

    def slack(self, r: np.ndarray, psi: np.ndarray, grid: TimeGrid):
        """Discrete majorant of the left-endpoint/quadrature defect of an Euler
        path against (r, psi) at grid nodes."""
        q = self.refine
        rg, pg = r[::q], psi[::q]
        # trapezoid on the solver grid versus the refined rule, for the history part
        coarse = self.sigma.integrate(1.0 + r, stride=q)[::q]
        fine = (self.Sig + self.sigma.integrate(r))[::q]
        quad = np.abs(coarse - fine)
        sig_grid = self.sigma.integrate(None, stride=q)[::q] if q > 1 else self.Sig
        amp = self.c[::q] + sig_grid
        h = grid.steps
        S = np.zeros(rg.size)
        P = np.zeros(rg.size)
        for k in range(rg.size - 1):
            P[k] = quad[k] + amp[k] * S[k]
            deficit = h[k] * (pg[k] + P[k]) - (rg[k + 1] - rg[k])
            S[k + 1] = S[k] + max(0.0, deficit)
        P[-1] = quad[-1] + amp[-1] * S[-1]
        return S, P


def envelopes(spec: ProblemSpec, refine: int = REFINE) -> BoundTable:
    """r and psi of the approximation principle, with quadrature slack."""
    data = _EnvelopeData(spec, refine)
    r = data.r_given(np.zeros_like(data.t))
    psi = data.psi_core(r)
    S, P = data.slack(r, psi, spec.grid)
    return BoundTable(spec.grid, r[::refine], psi[::refine], None, data.ef, S, P)


def state_envelope(spec: ProblemSpec, refine: int = REFINE) -> np.ndarray:
    """r(t) = |x0| e(t,0) + int_0^t (d(s) + int_0^s sigma) e(t,s) ds at grid nodes."""
    return envelopes(spec, refine).r


def velocity_envelope(spec: ProblemSpec, r: np.ndarray, refine: int = REFINE) -> np.ndarray:
    """psi = c r + d + int sigma + int sigma r, with r given at grid nodes
    (linearly interpolated onto the refined grid)."""
    data = _EnvelopeData(spec, refine)
    r_f = np.interp(data.t, spec.grid.nodes, np.asarray(r, dtype=float))
    return data.psi_core(r_f)[::refine]


def sweeping_envelopes(spec: ProblemSpec, refine: int = REFINE, tol: float = PICARD_TOL,
                       max_iter: int = PICARD_MAX_ITER) -> BoundTable:
    """Picard iteration for the coupled (m, r) system of the sweeping reduction.

    m = (|zeta'| + (1+L)(c r + d + int sigma + int sigma r)) / (alpha0^2 - L)
    r = |x0| eps(t,0) + int_0^t (d + m + int sigma) eps(t,s) ds
    """
    spec.require_sweeping()
    L = spec.C.L
    gap = spec.alpha0 ** 2 - L
    data = _EnvelopeData(spec, refine)
    zr = spec.C.zeta_rate(data.t)
    m = np.zeros_like(data.t)
    r = data.r_given(m)
    residuals = []
    for _ in range(max_iter):
        m_new = (zr + (1 + L) * data.psi_core(r)) / gap
        r_new = data.r_given(m_new)
        scale = max(1.0, np.max(np.abs(m_new)), np.max(np.abs(r_new)))
        res = max(np.max(np.abs(m_new - m)), np.max(np.abs(r_new - r))) / scale
        residuals.append(float(res))
        m, r = m_new, r_new
        if res < tol:
            break
    else:
        raise ConvergenceError("Picard iteration for (m, r) did not converge", residuals[-1])
    psi = data.psi_core(r) + m
    S, P = data.slack(r, psi, spec.grid)
    return BoundTable(spec.grid, r[::refine], psi[::refine], m[::refine], data.ef, S, P, residuals)


def horizon_split(spec: ProblemSpec, psi: np.ndarray, margin: float = 0.9) -> list:
    """Consecutive pieces [a, b] of [0, T] with int_a^b (|zeta'| + (1+L) psi) <= margin rho."""
    grid = spec.grid
    L = spec.C.L if spec.C is not None else 0.0
    if not (0.0 <= L < 1.0):
        raise ValueError("L must lie in [0,1)")
    rho = spec.rho
    if not rho > 0:
        raise ValueError("rho must be positive")
    if np.isinf(rho):
        return [(0.0, grid.T)]
    zr = spec.C.zeta_rate(grid.nodes) if spec.C is not None else np.zeros(grid.N + 1)
    q = zr + (1 + L) * np.asarray(psi, dtype=float)
    cells = 0.5 * (q[1:] + q[:-1]) * grid.steps
    cap = margin * rho
    if np.any(cells > cap):
        raise ValueError("rho too small for grid: a single step violates the condition")
    pieces, start, acc = [], 0, 0.0
    for j, cell in enumerate(cells):
        if acc + cell > cap * (1 + 1e-12):
            pieces.append((float(grid.nodes[start]), float(grid.nodes[j])))
            start, acc = j, 0.0
        acc += cell
    pieces.append((float(grid.nodes[start]), grid.T))
    return pieces


@dataclass
class ComplianceReport:
    state_ok: np.ndarray
    velocity_ok: np.ndarray
    state_margin: float
    velocity_margin: float

    @property
    def compliant(self) -> bool:
        return bool(np.all(self.state_ok) and np.all(self.velocity_ok))

    @property
    def violations(self) -> int:
        return int(np.sum(~self.state_ok) + np.sum(~self.velocity_ok))


def check_bounds(traj: Trajectory, table: BoundTable, tol: float = 1e-6, use_slack: bool = True) -> ComplianceReport:
    """||x_k|| <= r(t_k) + tol and ||v_k|| <= psi(t_k) + tol (plus quadrature slack)."""
    if not traj.grid.same_as(table.grid):
        raise ValueError("grid mismatch between trajectory and bound table")
    xs, vs = traj.norms(), traj.speed()
    sr = table.slack_r if use_slack else 0.0
    sp = table.slack_psi[:-1] if use_slack else 0.0
    state_ok = xs <= table.r + sr + tol
    velocity_ok = vs <= table.psi[:-1] + sp + tol
    return ComplianceReport(
        state_ok,
        velocity_ok,
        float(np.min(table.r - xs)),
        float(np.min(table.psi[:-1] - vs)) if vs.size else np.inf,
    )


def pi_factor(envelope: GrowthEnvelope, grid: TimeGrid, radius: float, refine: int = REFINE) -> ExpFactor:
    """pi(t2, t1) = exp(int_{t1}^{t2} (2 k~(s) + 2 int_0^s mu_R(tau) dtau) ds).

    With a memory term (mu not identically zero) the comparison argument only
    goes through for a nonnegative rate, so k~ is replaced by max(k~, 0)."""
    t = grid.refine(refine).nodes
    mu = tabulate(lambda s: envelope.mu(radius, s), t)
    kt = tabulate(envelope.k_tilde, t)
    if np.any(mu != 0):
        kt = np.maximum(kt, 0.0)
    rate = 2 * kt + 2 * cumtrapz(mu, t)
    return ExpFactor(t, cumtrapz(rate, t))
