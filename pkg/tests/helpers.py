"""Independent reference integrators used by the tests."""
import numpy as np


def rk4(rhs, y0, T, N):
    y = np.atleast_1d(np.asarray(y0, dtype=float)).copy()
    h = T / N
    out = np.empty((N + 1, y.size))
    out[0] = y
    t = 0.0
    for n in range(N):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        out[n + 1] = y
    return np.linspace(0.0, T, N + 1), out


def equality_ode(u0, alpha, beta, gamma_int, T, N):
    """u' = alpha + (beta + int_0^t gamma(t, tau) dtau) u, the ODE whose solution is
    the Gronwall bound; ``gamma_int(t)`` is the inner integral."""
    return rk4(lambda t, y: np.array([alpha(t) + (beta(t) + gamma_int(t)) * y[0]]), [u0], T, N)


def separable_equality(u0, alpha, beta, a, b, T, N):
    """W(t) = u0 + int alpha + int beta W + int_0^t int_0^s a e^{b(s-tau)} W(tau) dtau ds.

    With z(s) = int_0^s a e^{b(s-tau)} W(tau) dtau this is W' = alpha + beta W + z,
    z' = a W + b z."""
    def rhs(t, y):
        W, z = y
        return np.array([alpha(t) + beta(t) * W + z, a * W + b * z])

    t, Y = rk4(rhs, [u0, 0.0], T, N)
    return t, Y[:, 0]
