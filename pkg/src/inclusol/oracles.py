"""Reference solutions used to check the time stepping."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

__all__ = ["rk4_linear_memory"]


def rk4_linear_memory(A, K, decay: float, x0, T: float, N: int,
                      forcing: Optional[Callable] = None) -> tuple:
    """RK4 for x' = A x + f(t) + int_0^t exp(-decay (t-s)) K x(s) ds.

    The memory term y(t) obeys y' = K x - decay y, y(0) = 0, so the pair
    (x, y) is an ordinary linear ODE.  Returns (nodes, states)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    D = x0.size
    A = np.broadcast_to(np.atleast_2d(np.asarray(A, dtype=float)), (D, D)) if np.ndim(A) == 2 else float(A) * np.eye(D)
    K = np.broadcast_to(np.atleast_2d(np.asarray(K, dtype=float)), (D, D)) if np.ndim(K) == 2 else float(K) * np.eye(D)
    M = np.block([[A, np.eye(D)], [K, -decay * np.eye(D)]])
    f = (lambda t: np.zeros(D)) if forcing is None else (lambda t: np.asarray(forcing(t), dtype=float))

    def rhs(t, z):
        out = M @ z
        out[:D] += f(t)
        return out

    h = T / N
    t = np.linspace(0.0, T, N + 1)
    Z = np.empty((N + 1, 2 * D))
    Z[0] = np.concatenate([x0, np.zeros(D)])
    z = Z[0].copy()
    if forcing is None:
        # autonomous: one RK4 step is multiplication by the degree-4 Taylor matrix
        hM = h * M
        step = np.eye(2 * D) + hM @ (np.eye(2 * D) + hM @ (np.eye(2 * D) / 2 + hM @ (np.eye(2 * D) / 6 + hM / 24)))
        for n in range(N):
            z = step @ z
            Z[n + 1] = z
        return t, Z[:, :D]
    for n in range(N):
        tn = t[n]
        k1 = rhs(tn, z)
        k2 = rhs(tn + h / 2, z + h / 2 * k1)
        k3 = rhs(tn + h / 2, z + h / 2 * k2)
        k4 = rhs(tn + h, z + h * k3)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        Z[n + 1] = z
    return t, Z[:, :D]
