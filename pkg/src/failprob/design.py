"""Initial space-filling design: quantile-truncated box and maximin LHS.

The design region is the product of per-dimension quantile intervals
[q_eps, q_{1-eps}] of the input marginals. A Latin hypercube is drawn by
permuting bin indices per dimension with points at bin centers, and the
best of Q random candidates under the maximin criterion (largest minimum
pairwise distance on the unit cube) is affinely mapped to the box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InputDistribution

__all__ = ["TruncatedBox", "truncated_box", "maximin_lhs"]


@dataclass(frozen=True)
class TruncatedBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must have the same shape")
        if not np.all(self.lower < self.upper):
            raise ValueError("need lower < upper in every dimension")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def truncated_box(input_dist: InputDistribution, epsilon: float) -> TruncatedBox:
    """Box of per-dimension quantiles [q_eps, q_{1-eps}]."""
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must be in (0, 0.5)")
    return TruncatedBox(input_dist.quantile(epsilon), input_dist.quantile(1.0 - epsilon))


def maximin_lhs(n0: int, box: TruncatedBox, q_candidates: int,
                rng: np.random.Generator, chunk: int = 512) -> np.ndarray:
    """Best-of-Q maximin Latin hypercube, mapped to the box.

    Each candidate places one point at the center of each of the n0 axis
    bins per dimension (randomized by per-dimension permutations); the
    winner maximizes the minimum pairwise Euclidean distance on [0,1]^d,
    ties broken by first occurrence.
    """
    if n0 < 2:
        raise ValueError("n0 must be >= 2")
    if q_candidates < 1:
        raise ValueError("need at least one candidate design")
    d = box.dim
    best_design: np.ndarray | None = None
    best_score = -np.inf
    iu = np.triu_indices(n0, k=1)
    base = np.arange(n0, dtype=float)
    for start in range(0, q_candidates, chunk):
        nq = min(chunk, q_candidates - start)
        perms = rng.permuted(np.broadcast_to(base, (nq, d, n0)).copy(), axis=2)
        unit = (perms.transpose(0, 2, 1) + 0.5) / n0  # (nq, n0, d)
        diff = unit[:, :, None, :] - unit[:, None, :, :]
        dist2 = np.einsum("qijd,qijd->qij", diff, diff)
        scores = dist2[:, iu[0], iu[1]].min(axis=1)
        k = int(np.argmax(scores))  # first occurrence wins ties
        if scores[k] > best_score:
            best_score = float(scores[k])
            best_design = unit[k]
    assert best_design is not None
    return box.lower + best_design * (box.upper - box.lower)
