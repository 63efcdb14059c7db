import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inclusol.bounds import check_bounds, envelopes, sweeping_envelopes
from inclusol.core import GrowthEnvelope, ProblemSpec, Trajectory, make_grid
from inclusol.oracles import rk4_linear_memory
from inclusol.sets import Ball, Halfspace, static, translating
from inclusol.solver import (
    SingletonMap,
    SolverConfig,
    TranslatedSet,
    constraint_violation,
    convergence_study,
    select,
    solve_galerkin_cascade,
    solve_idi,
    solve_reduced,
    solve_sweeping,
    uniqueness_gap,
    velocity_box,
    zero_map,
)


def memory_kernel(t, s, X):
    return X


def halfline(N=1000, x0=0.0):
    M = translating(Halfspace([-1.0], 0.0), lambda t: [t], lambda t: [1.0])
    return ProblemSpec(np.array([x0]), make_grid(1.0, N), zero_map(), C=M)


def sine_wall(N=500):
    M = translating(Halfspace([-1.0], 0.0), lambda t: [np.sin(t)], lambda t: [np.cos(t)])
    return ProblemSpec(np.array([1.0]), make_grid(1.0, N), zero_map(), C=M)


def diagonal(D=16, N=400):
    rates = np.arange(1, D + 1, dtype=float)
    return ProblemSpec(np.ones(D) / np.sqrt(D), make_grid(1.0, N), SingletonMap(lambda t, x: -rates * x),
                       envelope=GrowthEnvelope(c=D, k_tilde=-1.0))


def test_select_examples():
    x = np.array([3.0, 0.0])
    assert np.array_equal(select(SingletonMap(lambda t, x: -x), 0.0, x), -x)
    ball = TranslatedSet(lambda t, x: -x, Ball([0.0, 0.0], 1.0))
    assert np.allclose(select(ball, 0.0, x), [-2.0, 0.0], atol=1e-15)
    assert np.array_equal(select(velocity_box([-1.0, -1.0], [1.0, 1.0]), 0.0, x), [0.0, 0.0])
    with pytest.raises(TypeError, match="unsupported"):
        select(object(), 0.0, x)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_select_is_least_norm_member(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(scale=3, size=2)
    F = TranslatedSet(lambda t, x: c, Ball([0.0, 0.0], rng.uniform(0.1, 2)))
    v = select(F, 0.0, np.zeros(2))
    assert F.shape.distance(v - c) <= 1e-12
    members = c + np.array([F.shape.project(z) for z in rng.normal(scale=3, size=(50, 2))])
    assert np.all(np.linalg.norm(members, axis=1) >= np.linalg.norm(v) - 1e-12)


def test_solve_idi_examples():
    g = make_grid(1.0, 100)
    traj = solve_idi(ProblemSpec(np.array([0.7, -1.0]), g, zero_map()))
    assert np.all(traj.states == [0.7, -1.0])

    g = make_grid(1.0, 2000)
    traj = solve_idi(ProblemSpec(np.array([1.0]), g, SingletonMap(lambda t, x: -x)))
    assert abs(traj.states[-1, 0] - np.exp(-1)) < 5e-3

    spec = ProblemSpec(np.array([1.0]), g, SingletonMap(lambda t, x: -x), memory_kernel)
    _, ref = rk4_linear_memory(-np.eye(1), np.eye(1), 0.0, [1.0], 1.0, 100_000)
    assert np.max(np.abs(solve_idi(spec).states[:, 0] - ref[::50, 0])) < 5e-3
    assert traj.consistency_defect() < 1e-14

    with pytest.raises(ValueError, match="moving set"):
        solve_idi(halfline())


def test_solve_idi_envelope_compliance():
    env = GrowthEnvelope(c=1.0, sigma=1.0, k_tilde=-1.0)
    spec = ProblemSpec(np.array([1.0, 0.5]), make_grid(1.0, 400), SingletonMap(lambda t, x: -x),
                       memory_kernel, envelope=env)
    assert check_bounds(solve_idi(spec), envelopes(spec)).compliant


def test_cascade_full_rank_is_bitwise():
    spec = diagonal(D=6, N=200)
    res = solve_galerkin_cascade(spec, SolverConfig(scheme="cascade", dims=(2, 6)))
    assert np.array_equal(res.trajectories[6].states, solve_idi(spec).states)
    assert res.gaps[6] == 0.0


def test_cascade_diagonal_gaps_strictly_decrease():
    spec = diagonal()
    res = solve_galerkin_cascade(spec)
    gaps = [res.gaps[n] for n in range(1, 17)]
    assert np.all(np.diff(gaps) < 0) and gaps[-1] == 0.0
    assert res.diagnostics.ok


def test_cascade_rank_one_exact_when_dynamics_confined():
    D = 4
    spec = ProblemSpec(np.r_[1.0, np.zeros(D - 1)], make_grid(1.0, 200),
                       SingletonMap(lambda t, x: np.concatenate([-x[..., :1], np.zeros_like(x[..., 1:])], axis=-1)))
    res = solve_galerkin_cascade(spec, SolverConfig(scheme="cascade", dims=(1, D)))
    assert res.gaps[1] == 0.0


def test_sweeping_examples():
    spec = halfline()
    traj = solve_sweeping(spec)
    assert np.array_equal(traj.states[:, 0], spec.grid.nodes)
    _, worst = constraint_violation(traj, spec.C, lagged=True)
    assert worst <= 1e-12

    still = ProblemSpec(np.array([0.2, -0.3]), make_grid(1.0, 100), zero_map(), C=static(Ball([0.0, 0.0], 1.0)))
    assert np.all(solve_sweeping(still).states == [0.2, -0.3])

    assert np.all(solve_sweeping(sine_wall()).states == 1.0)
    with pytest.raises(ValueError):
        solve_sweeping(ProblemSpec(np.array([0.0]), make_grid(1.0, 10), zero_map()))


def test_reduced_examples():
    # static convex set containing the flow of F: the drive term never acts
    spec = ProblemSpec(np.array([0.5]), make_grid(1.0, 200), SingletonMap(lambda t, x: -x),
                       C=static(Ball([0.0], 1.0)))
    free = solve_idi(ProblemSpec(spec.x0, spec.grid, spec.F))
    assert np.array_equal(solve_reduced(spec).states, free.states)

    gaps, viols = [], []
    for N in (250, 500, 1000, 2000):
        spec = halfline(N)
        table = sweeping_envelopes(spec)
        assert np.allclose(table.m, 1.0)
        red = solve_reduced(spec, bounds=table)
        h = spec.grid.h
        assert np.max(np.abs(red.states[:, 0] - spec.grid.nodes)) <= 2 * h
        gaps.append(np.max(np.abs(red.states - solve_sweeping(spec).states)))
        viols.append(constraint_violation(red, spec.C)[1])
    assert np.all(np.diff(gaps) < 0) and np.all(np.diff(viols) < 0)


def test_constraint_violation_of_infeasible_constant():
    spec = halfline(100)
    still = Trajectory.from_states(spec.grid, np.zeros((101, 1)))
    dist, worst = constraint_violation(still, spec.C)
    assert np.allclose(dist, spec.grid.nodes, atol=1e-15) and worst == pytest.approx(1.0)


def test_convergence_study_examples():
    const = ProblemSpec(np.array([2.0]), make_grid(1.0, 10), zero_map())
    res = convergence_study(const, SolverConfig(), [100, 200, 400])
    assert res.exact and res.label == "exact"

    lin = ProblemSpec(np.array([1.0]), make_grid(1.0, 10), SingletonMap(lambda t, x: -x), memory_kernel)
    res = convergence_study(lin, SolverConfig(), [200, 400, 800, 1600])
    assert 0.8 <= res.order <= 1.2

    res = convergence_study(sine_wall(), SolverConfig(scheme="catchingUp"), [250, 500, 1000])
    assert res.exact

    with pytest.raises(ValueError, match="misaligned"):
        convergence_study(const, SolverConfig(), [100, 150])


def test_uniqueness_examples():
    g = make_grid(1.0, 1000)
    env = GrowthEnvelope(c=1.0, sigma=1.0, k_tilde=-1.0, mu=1.0)
    F = SingletonMap(lambda t, x: -x)
    a = solve_idi(ProblemSpec(np.array([1.0]), g, F, memory_kernel))
    b = solve_idi(ProblemSpec(np.array([1.1]), g, F, memory_kernel))
    assert uniqueness_gap(a, a, env).vartheta.max() == 0.0
    assert uniqueness_gap(a, b, env).ok

    # nonexpansive case: k~ = 0, mu = 0, pi = 1
    ball = TranslatedSet(lambda t, x: -x, Ball([0.0], 0.3))
    a = solve_idi(ProblemSpec(np.array([1.0]), g, ball))
    b = solve_idi(ProblemSpec(np.array([-0.4]), g, ball))
    diag = uniqueness_gap(a, b, GrowthEnvelope())
    assert diag.ok
    assert np.all(np.diff(diag.vartheta) <= 1e-9)

    with pytest.raises(ValueError, match="grid mismatch"):
        uniqueness_gap(a, solve_idi(ProblemSpec(np.array([1.0]), make_grid(1.0, 10), F)), env)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(dims=(3, 2))
    with pytest.raises(ValueError):
        SolverConfig(tol_projection=0.0)
