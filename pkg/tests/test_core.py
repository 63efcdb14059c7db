import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inclusol.core import (
    GrowthEnvelope,
    ProblemSpec,
    TimeGrid,
    Trajectory,
    history_integral,
    interpolate,
    make_grid,
)
from inclusol.sets import Ball, static
from inclusol.solver import zero_map


def test_make_grid_nodes():
    assert np.array_equal(make_grid(1, 4).nodes, [0, 0.25, 0.5, 0.75, 1])
    assert np.array_equal(make_grid(2, 1).nodes, [0, 2])


def test_make_grid_rejects_empty():
    with pytest.raises(ValueError, match="empty grid"):
        make_grid(1, 0)
    with pytest.raises(ValueError):
        make_grid(0.0, 4)


def test_grid_invariants():
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 0.5, 0.4, 1.0]))
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.1, 1.0]))
    g = make_grid(3, 7)
    assert g.T == 3 and g.N == 7 and g.h == pytest.approx(3 / 7)
    assert g.refine(4).N == 28
    assert g.refine(4).nodes[::4] == pytest.approx(g.nodes)


def test_interpolate_examples():
    g = make_grid(2, 2)
    traj = Trajectory.from_states(g, np.array([[0.0], [1.0], [4.0]]))
    assert interpolate(traj, 1.5)[0] == pytest.approx(2.5)
    t2 = Trajectory.from_states(make_grid(1, 1), np.array([[0.0], [1.0]]))
    assert interpolate(t2, 0.5)[0] == pytest.approx(0.5)
    const = Trajectory.from_states(make_grid(1, 5), np.tile([3.0, -1.0], (6, 1)))
    assert np.allclose(interpolate(const, 0.37), [3.0, -1.0])
    with pytest.raises(ValueError):
        interpolate(traj, 2.5)


def test_history_integral_examples():
    g = make_grid(1, 4)
    traj = Trajectory.from_states(g, np.random.default_rng(0).normal(size=(5, 1)))
    assert history_integral(traj, lambda t, s, x: np.zeros_like(x), 1.0)[0] == 0.0
    assert history_integral(traj, lambda t, s, x: np.ones_like(x), 0.75)[0] == 0.75
    assert history_integral(traj, lambda t, s, x: np.broadcast_to(s[:, None], x.shape), 1.0)[0] == 0.5
    assert history_integral(traj, lambda t, s, x: x, 0.0)[0] == 0.0


def test_history_integral_with_controls():
    g = make_grid(1, 4)
    traj = Trajectory.from_states(g, np.zeros((5, 1)))
    u = np.ones((4, 1))
    assert history_integral(traj, lambda t, s, x, uu: uu, 1.0, u)[0] == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_history_integral_additive_and_affine_exact(N, a, b, seed):
    g = make_grid(1.0, N)
    X = np.random.default_rng(seed).normal(size=(N + 1, 2))
    traj = Trajectory.from_states(g, X)
    k = N // 2 + 1
    tk = g.nodes[k]
    g1 = lambda t, s, x: np.sin(x) + t  # noqa: E731
    g2 = lambda t, s, x: x ** 2 * s[:, None]  # noqa: E731
    total = history_integral(traj, lambda t, s, x: g1(t, s, x) + g2(t, s, x), tk)
    parts = history_integral(traj, g1, tk) + history_integral(traj, g2, tk)
    assert np.allclose(total, parts, atol=1e-13, rtol=0)
    affine = history_integral(traj, lambda t, s, x: np.broadcast_to((a + b * s)[:, None], x.shape), tk)
    assert np.allclose(affine, a * tk + b * tk ** 2 / 2, atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_trajectory_consistency_and_node_interpolation(N, D, seed):
    rng = np.random.default_rng(seed)
    nodes = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, N))])
    g = TimeGrid(nodes)
    traj = Trajectory.from_states(g, rng.normal(size=(N + 1, D)))
    assert traj.consistency_defect() <= 1e-12
    for k in range(N + 1):
        assert np.array_equal(interpolate(traj, g.nodes[k]), traj.states[k])


def test_trajectory_rejects_inconsistent_velocities():
    g = make_grid(1, 2)
    with pytest.raises(ValueError):
        Trajectory(g, np.zeros((3, 1)), np.ones((2, 1)))


def test_envelope_validation():
    g = make_grid(1, 10)
    GrowthEnvelope(c=1, d=0, sigma=1, mu=lambda r, t: r, k=1, k_tilde=-3).validate(g)
    with pytest.raises(ValueError, match="nonnegative"):
        GrowthEnvelope(d=-1).validate(g)
    with pytest.raises(ValueError, match="nondecreasing"):
        GrowthEnvelope(mu=lambda r, t: np.full_like(t, 1.0 / (1.0 + r))).validate(g)


def test_problem_spec_feasible_start_and_sweeping_condition():
    g = make_grid(1, 10)
    C = static(Ball([0.0], 1.0))
    ProblemSpec([0.5], g, zero_map(), C=C)
    with pytest.raises(ValueError, match="infeasible start"):
        ProblemSpec([2.0], g, zero_map(), C=C)
    with pytest.raises(ValueError):
        ProblemSpec([0.0], g, zero_map(), alpha0=0.0)
