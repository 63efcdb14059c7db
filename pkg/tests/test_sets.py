import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inclusol.sets import (
    Ball,
    Box,
    ComplementOfBall,
    FiniteUnion,
    Halfspace,
    MovingSet,
    Polyhedron,
    alpha_far_estimate,
    distance,
    distance_subgradient,
    lipschitz_probe,
    min_norm_in_hull,
    project,
    static,
    translating,
)

TWO_INTERVALS = FiniteUnion([Box([-2.0], [-1.0]), Box([1.0], [2.0])])


def random_set(rng, D):
    kind = rng.integers(6)
    if kind == 0:
        return Halfspace(rng.normal(size=D), rng.normal())
    if kind == 1:
        lo = rng.normal(size=D)
        return Box(lo, lo + rng.uniform(0.1, 2, D))
    if kind == 2:
        return Ball(rng.normal(size=D), rng.uniform(0.2, 2))
    if kind == 3:
        A = rng.normal(size=(D + 2, D))
        return Polyhedron(A, np.abs(rng.normal(size=D + 2)) + 0.1)  # contains 0
    if kind == 4:
        return ComplementOfBall(rng.normal(size=D), rng.uniform(0.2, 2))
    lo1, lo2 = rng.normal(size=D) - 2, rng.normal(size=D) + 2
    return FiniteUnion([Box(lo1, lo1 + 1), Ball(lo2, 0.7)])


def sample_members(S, rng, D, n=400):
    """Points of S: projections of a wide random cloud."""
    cloud = rng.normal(scale=3.0, size=(n, D))
    return np.array([project(S, z) for z in cloud])


def test_distance_examples():
    assert distance(Ball([0.0, 0.0], 1.0), [0.0, 0.0]) == 0.0
    assert distance(Halfspace([1.0, 0.0], 0.0), [2.0, 0.0]) == 2.0
    assert distance(ComplementOfBall([0.0, 0.0], 1.0), [0.0, 0.0]) == 1.0


def test_project_examples():
    S = Ball([0.0, 0.0], 1.0)
    x = np.array([0.3, -0.2])
    assert np.array_equal(project(S, x), x)
    a, b = np.array([1.0, 2.0]), 1.0
    x = np.array([3.0, 4.0])
    assert np.allclose(project(Halfspace(a, b), x), x - (a @ x - b) / (a @ a) * a, atol=1e-15)
    assert project(TWO_INTERVALS, [0.0])[0] == 1.0


def test_subgradient_examples():
    assert np.allclose(distance_subgradient(Ball([0.0, 0.0], 1.0), [2.0, 0.0]), [1.0, 0.0])
    assert np.allclose(distance_subgradient(ComplementOfBall([0.0, 0.0], 1.0), [0.5, 0.0]), [-1.0, 0.0])
    assert np.allclose(distance_subgradient(Halfspace([1.0, 0.0], 0.0), [3.0, 4.0]), [1.0, 0.0])
    # boundary point: outward normal of the active piece
    assert np.allclose(distance_subgradient(Box([0.0, 0.0], [1.0, 1.0]), [1.0, 0.5]), [1.0, 0.0])
    with pytest.raises(ValueError, match="no nonzero subgradient selected"):
        distance_subgradient(Ball([0.0, 0.0], 1.0), [0.1, 0.1])


def test_alpha_far_examples():
    rng = np.random.default_rng(1)
    samples = rng.uniform(-4, 4, size=(300, 2))
    for S in (Ball([0.0, 0.0], 1.0), Halfspace([1.0, 1.0], 0.5), Box([-1.0, -1.0], [1.0, 0.0]),
              Polyhedron([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [1.0, 1.0, 1.0])):
        assert alpha_far_estimate(S, 1.0, samples) == 1.0
    line = np.linspace(-3, 3, 601)[:, None]
    assert alpha_far_estimate(TWO_INTERVALS, 0.5, line) == 1.0
    assert alpha_far_estimate(TWO_INTERVALS, 1.5, np.vstack([line, [[0.0]]])) < 0.2
    with pytest.raises(ValueError, match="empty tube sample"):
        alpha_far_estimate(Ball([0.0], 1.0), 0.5, np.array([[0.0], [5.0]]))


def test_min_norm_in_hull():
    assert min_norm_in_hull(np.array([[1.0], [-1.0]])) == 0.0
    assert min_norm_in_hull(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(np.sqrt(0.5))
    assert min_norm_in_hull(np.array([[0.6, 0.8]])) == pytest.approx(1.0)


def test_lipschitz_probe_examples():
    probes = [(t, [0.0], [z]) for t in (0.0, 0.3, 0.7) for z in (-1.0, 0.5)]
    rep = lipschitz_probe(static(Ball([0.0], 1.0)), probes)
    assert rep.compliant and rep.worst_ratio == 0.0

    halfline = translating(Halfspace([-1.0], 0.0), lambda t: [t], lambda t: [1.0])
    probes = [(t, [0.0], [-2.0]) for t in (0.0, 0.25, 0.5, 1.0)]
    rep = lipschitz_probe(halfline, probes)
    assert rep.compliant and rep.zeta_rate == pytest.approx(1.0)

    def fam(t, x):
        return Halfspace([-1.0, 0.0], -0.5 * np.linalg.norm(x))    # {y : y1 >= 0.5 |x|}

    M = MovingSet(fam, lambda t: 0.0, 0.4, "state", zeta=lambda t: 0.0)
    probes = [(0.0, [r, 0.0], [-3.0, 0.0]) for r in (0.0, 1.0, 2.0)]
    rep = lipschitz_probe(M, probes)
    assert not rep.compliant and rep.L_estimate == pytest.approx(0.5)


def test_moving_set_rejects_L():
    with pytest.raises(ValueError, match=r"L must lie in \[0,1\)"):
        MovingSet(lambda t, x: Ball([0.0], 1.0), lambda t: 0.0, 1.2)


def test_projection_optimality_sampling():
    rng = np.random.default_rng(2024)
    violations = 0
    for _ in range(1000):
        D = int(rng.integers(1, 4))
        S = random_set(rng, D)
        x = rng.normal(scale=2.5, size=D)
        p = project(S, x)
        assert S.contains(p, tol=1e-9)
        d = np.linalg.norm(x - p)
        assert d == pytest.approx(distance(S, x), abs=1e-12)
        members = sample_members(S, rng, D, n=40)
        violations += int(np.any(np.linalg.norm(members - x, axis=1) < d - 1e-9))
    assert violations == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_convex_projection_nonexpansive(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 4))
    S = random_set(rng, D)
    if not S.convex:
        return
    x, y = rng.normal(scale=3, size=(2, D))
    assert np.linalg.norm(project(S, x) - project(S, y)) <= np.linalg.norm(x - y) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_subgradient_steps_back_onto_set(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 4))
    S = random_set(rng, D)
    x = rng.normal(scale=3, size=D)
    d = distance(S, x)
    if d <= 1e-9:
        return
    n = distance_subgradient(S, x)
    assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
    assert n @ (x - project(S, x)) >= 0
    assert distance(S, x - d * n) <= 1e-9


def boundary_pair(S, rng, D):
    out = []
    for _ in range(10000):
        if len(out) == 2:
            break
        x = rng.normal(scale=3, size=D)
        if distance(S, x) > 1e-6:
            p = project(S, x)
            out.append((p, distance_subgradient(S, x)))
    return out


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_convex_normals_monotone(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 4))
    kind = seed % 3
    if kind == 0:
        S = Ball(rng.normal(size=D), 1.0)
    elif kind == 1:
        a = rng.normal(size=D)
        S = Halfspace(a / np.linalg.norm(a), 0.3)
    else:
        S = Box(-np.ones(D), np.ones(D))
    (x1, n1), (x2, n2) = boundary_pair(S, rng, D)
    assert (n1 - n2) @ (x1 - x2) >= -1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.3, 3.0))
def test_complement_of_ball_prox_regular(seed, R):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(2, 4))
    c = rng.normal(size=D)
    S = ComplementOfBall(c, R)
    # points outside S lie inside the removed ball
    dirs = rng.normal(size=(2, D))
    inner = c + R * rng.uniform(0.05, 0.95, (2, 1)) * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    (x1, n1), (x2, n2) = [(project(S, z), distance_subgradient(S, z)) for z in inner]
    assert (n1 - n2) @ (x1 - x2) >= -(2 / R) * np.sum((x1 - x2) ** 2) - 1e-9


def test_union_tie_break_is_lexicographic():
    U = FiniteUnion([Ball([-1.0, 0.0], 0.5), Ball([1.0, 0.0], 0.5)])
    assert np.allclose(project(U, [0.0, 0.0]), [0.5, 0.0])
    C = ComplementOfBall([0.0, 0.0], 1.0)
    assert np.allclose(project(C, [0.0, 0.0]), [1.0, 0.0])


def test_polyhedron_projection_matches_qp():
    from scipy.optimize import minimize

    rng = np.random.default_rng(7)
    for _ in range(30):
        A = rng.normal(size=(5, 3))
        b = np.abs(rng.normal(size=5)) + 0.1
        S = Polyhedron(A, b)
        x = rng.normal(scale=3, size=3)
        res = minimize(lambda y: 0.5 * np.sum((y - x) ** 2), np.zeros(3), jac=lambda y: y - x,
                       constraints=[{"type": "ineq", "fun": lambda y: b - A @ y, "jac": lambda y: -A}],
                       method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        assert np.linalg.norm(project(S, x) - res.x) < 1e-6
        assert distance(S, x) <= np.linalg.norm(x - res.x) + 1e-9
