"""Orthonormal projectors P_n, radial truncation and noncompactness diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np

__all__ = [
    "Projector",
    "apply",
    "radial_truncate",
    "hausdorff_estimate",
    "NoncompactnessEstimate",
    "kcenter_radius",
    "kuratowski_cover",
]


@dataclass(frozen=True, eq=False)
class Projector:
    """P_n x = sum_{k<=n} <x, e_k> e_k for an orthonormal basis (rows of ``basis``).

    ``basis=None`` means the canonical basis, for which P_n zeroes the
    trailing coordinates without any floating-point arithmetic.
    """

    n: int
    dim: int
    basis: Optional[np.ndarray] = None

    def __post_init__(self):
        if not (1 <= self.n <= self.dim):
            raise ValueError(f"rank n={self.n} must satisfy 1 <= n <= {self.dim}")
        if self.basis is not None:
            B = np.asarray(self.basis, dtype=float)
            if B.shape != (self.dim, self.dim):
                raise ValueError("basis must be a D x D array of row vectors")
            if np.max(np.abs(B @ B.T - np.eye(self.dim))) > 1e-12:
                raise ValueError("basis is not orthonormal")
            object.__setattr__(self, "basis", B)

    def __call__(self, x) -> np.ndarray:
        return apply(self, x)

    @property
    def full_rank(self) -> bool:
        return self.n == self.dim


def apply(P: Projector, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != P.dim:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} != {P.dim}")
    if P.basis is None:
        out = x.copy()
        out[..., P.n:] = 0.0
        return out
    if P.full_rank:
        return x.copy()
    Bn = P.basis[: P.n]
    return (x @ Bn.T) @ Bn


def radial_truncate(x, r: float) -> np.ndarray:
    """p_r(x): x inside the closed r-ball, r x/||x|| outside."""
    if r < 0:
        raise ValueError("truncation radius must be nonnegative")
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x)
    if n <= r:
        return x.copy()
    return (r / n) * x


@dataclass
class NoncompactnessEstimate:
    lower: float
    upper: float
    profile: np.ndarray  # profile[n-1] = sup_x ||(I - P_n) x||, n = 1..D

    def __iter__(self):
        return iter((self.lower, self.upper, self.profile))


def hausdorff_estimate(cloud, basis: Optional[np.ndarray] = None) -> NoncompactnessEstimate:
    """Gohberg-Goldenstein-Markus bounds for the Hausdorff measure of a cloud.

    For orthogonal projectors ||I - P_n|| <= 1, so the lower bound equals
    the upper one.  A finite cloud in R^D always gives 0 at n = D; the
    residual profile over n is the useful output.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.shape[0] == 0:
        raise ValueError("empty cloud")
    D = cloud.shape[1]
    coeffs = cloud if basis is None else cloud @ np.asarray(basis, dtype=float).T
    # ||(I - P_n) x||^2 = sum_{k > n} <x, e_k>^2
    tails = np.cumsum((coeffs ** 2)[:, ::-1], axis=1)[:, ::-1]
    tail_after = np.concatenate([tails[:, 1:], np.zeros((cloud.shape[0], 1))], axis=1)
    profile = np.sqrt(np.max(tail_after, axis=0))
    profile[D - 1] = 0.0
    upper = float(profile.min())
    return NoncompactnessEstimate(upper, upper, profile)


def kcenter_radius(cloud, pieces: int) -> tuple:
    """Exact discrete k-center: min over ``pieces`` centres drawn from the cloud of
    the covering radius.  Exponential; meant for small test clouds."""
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    n = cloud.shape[0]
    pieces = min(pieces, n)
    dist = np.linalg.norm(cloud[:, None, :] - cloud[None, :, :], axis=2)
    best, best_c = np.inf, None
    for centres in combinations(range(n), pieces):
        r = dist[:, list(centres)].min(axis=1).max()
        if r < best:
            best, best_c = r, centres
    return float(best), best_c


def _max_diameter(cloud, labels) -> float:
    worst = 0.0
    for lab in np.unique(labels):
        part = cloud[labels == lab]
        if len(part) > 1:
            worst = max(worst, np.max(np.linalg.norm(part[:, None] - part[None], axis=2)))
    return float(worst)


def kuratowski_cover(cloud, pieces: int) -> float:
    """Upper estimate of the least max-diameter over partitions into ``pieces`` parts.

    Takes the better of a greedy farthest-point partition and the partition
    induced by the exact discrete k-center, so that
    kcenter_radius <= kuratowski_cover <= 2 kcenter_radius.
    Restricted to D <= 3 and at most 64 points.
    """
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.shape[1] > 3 or cloud.shape[0] > 64:
        raise ValueError("kuratowski_cover is a test oracle for D <= 3, <= 64 points")
    pieces = min(pieces, cloud.shape[0])
    dist = np.linalg.norm(cloud[:, None, :] - cloud[None, :, :], axis=2)
    # greedy farthest-point seeds
    seeds = [0]
    while len(seeds) < pieces:
        seeds.append(int(np.argmax(dist[:, seeds].min(axis=1))))
    greedy = _max_diameter(cloud, np.argmin(dist[:, seeds], axis=1))
    _, centres = kcenter_radius(cloud, pieces)
    induced = _max_diameter(cloud, np.argmin(dist[:, list(centres)], axis=1))
    return min(greedy, induced)
