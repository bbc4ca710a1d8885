"""Coverage and misclassification functions, and the stepwise-uncertainty-
reduction acquisition rule.

The next evaluation point is chosen among the current particles by
minimizing the weighted sum, over (pruned) particles, of the expected
posterior misclassification probability after the candidate evaluation.
The expectation has a closed form in the posterior mean/variance at the
integration point, the cross quantity s_n(x, x_new), and the bivariate
normal CDF; everything is evaluated as one (integration point x candidate)
matrix so the bivariate CDF is called on flat arrays.

Degenerate-variance guards: points whose posterior variance is below
1e-12 * sigma2 count as classified; pairs with s_n^2 below the same floor
count as uncorrelated (the candidate teaches nothing about that point).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .core import ParticleSystem
from .gp import GpModel
from .stats import binorm_cdf

__all__ = [
    "VAR_FLOOR_REL",
    "model_var_floor",
    "coverage_g",
    "log_coverage_g",
    "log_misclass_tau",
    "misclass_tau",
    "expected_misclass_after",
    "CandidateSet",
    "build_candidates",
    "prune",
    "SurSelection",
    "select_next_point",
]

VAR_FLOOR_REL = 1e-12
_TIE_TOL = 1e-12
_LOG_FLOOR = -700.0


def model_var_floor(model) -> float:
    """Classification floor for posterior variances.

    At least VAR_FLOOR_REL * sigma2, but always above the factorization
    nugget so that evaluated design points count as classified by their
    observed value (the no-nugget semantics of exact interpolation).
    """
    jitter = getattr(model, "jitter", 0.0)
    return max(VAR_FLOOR_REL, 10.0 * jitter) * model.hyper.sigma2


def coverage_g(mean, sd, u):
    """P(xi(x) > u) under the posterior: Phi((mean - u)/sd); indicator for sd = 0."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if np.any(sd < 0.0):
        raise ValueError("coverage_g requires sd >= 0")
    mean_b, sd_b = np.broadcast_arrays(mean, sd)
    out = np.where(
        sd_b > 0.0,
        ndtr(np.where(sd_b > 0.0, (mean_b - u) / np.where(sd_b > 0.0, sd_b, 1.0), 0.0)),
        (mean_b > u).astype(float),
    )
    return float(out[()]) if out.ndim == 0 else out


def log_coverage_g(mean, sd, u):
    """log of coverage_g, exact in the deep tail via log_ndtr."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    mean_b, sd_b = np.broadcast_arrays(mean, sd)
    pos = sd_b > 0.0
    z = (mean_b - u) / np.where(pos, sd_b, 1.0)
    out = np.where(pos, log_ndtr(np.where(pos, z, 0.0)),
                   np.where(mean_b > u, 0.0, -np.inf))
    return float(out[()]) if out.ndim == 0 else out


def misclass_tau(g):
    """min(g, 1 - g) for g in [0, 1]."""
    g = np.asarray(g, dtype=float)
    if np.any(g < -1e-12) or np.any(g > 1.0 + 1e-12):
        raise ValueError("misclass_tau requires g in [0, 1]")
    g = np.clip(g, 0.0, 1.0)
    out = np.minimum(g, 1.0 - g)
    return float(out[()]) if out.ndim == 0 else out


def log_misclass_tau(mean, sd, u):
    """log of min(g, 1-g) from the posterior (both tails via log_ndtr)."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    mean_b, sd_b = np.broadcast_arrays(mean, sd)
    pos = sd_b > 0.0
    z = np.where(pos, (mean_b - u) / np.where(pos, sd_b, 1.0), 0.0)
    out = np.where(pos, np.minimum(log_ndtr(z), log_ndtr(-z)), -np.inf)
    return float(out[()]) if out.ndim == 0 else out


def _expected_misclass_matrix(mean_x, sd_x, s_mat, u, var_floor):
    """Expected post-evaluation misclassification, rows = integration points,
    columns = candidates. Applies the degenerate-variance guards."""
    sd_floor = np.sqrt(var_floor)
    mean_x = np.asarray(mean_x, dtype=float)
    sd_x = np.asarray(sd_x, dtype=float)
    tau_x = np.minimum(ndtr((mean_x - u) / np.maximum(sd_x, sd_floor)),
                       ndtr((u - mean_x) / np.maximum(sd_x, sd_floor)))
    tau_x = np.where(sd_x > sd_floor, tau_x, 0.0)

    n_x, n_c = s_mat.shape
    E = np.tile(tau_x[:, None], (1, n_c))  # default: uninformative candidate
    row_ok = sd_x > sd_floor
    valid = row_ok[:, None] & (s_mat > sd_floor)
    if np.any(valid):
        ix, ic = np.nonzero(valid)
        num = u - mean_x[ix]
        b1 = num / s_mat[ix, ic]
        b2 = num / sd_x[ix]
        rho = np.clip(s_mat[ix, ic] / sd_x[ix], 0.0, 1.0)
        vals = ndtr(b2) + ndtr(b1) - 2.0 * binorm_cdf(b1, b2, rho)
        E[ix, ic] = np.clip(vals, 0.0, 1.0)
    E[~row_ok, :] = 0.0
    return E, tau_x


def expected_misclass_after(model: GpModel, x, x_new, u) -> float:
    """Expected misclassification probability at x after evaluating at x_new."""
    x = np.asarray(x, dtype=float)
    mean_x, var_x = model.predict(x)
    var_floor = model_var_floor(model)
    if var_x <= var_floor:
        return 0.0
    s = model.cross_sd(x, x_new, var_floor=var_floor)
    E, _ = _expected_misclass_matrix(
        np.atleast_1d(mean_x), np.sqrt(np.atleast_1d(var_x)),
        np.atleast_2d(s), u, var_floor,
    )
    return float(E[0, 0])


@dataclass
class CandidateSet:
    """Particle-indexed candidates with cached posterior values and the
    weighted misclassification scores used for pruning."""

    indices: np.ndarray
    points: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    log_g_prev: np.ndarray
    log_weights: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


def build_candidates(particles: ParticleSystem, mean: np.ndarray, sd: np.ndarray,
                     log_g_prev: np.ndarray, u_t: float, var_floor: float) -> CandidateSet:
    """Score every particle: tau-tilde = weight * tau(x) / g_prev(x)."""
    sd_floor = np.sqrt(var_floor)
    log_tau = log_misclass_tau(mean, np.where(sd > sd_floor, sd, 0.0), u_t)
    log_c = particles.log_weights - np.maximum(log_g_prev, _LOG_FLOOR)
    log_score = np.clip(log_c, None, 700.0) + log_tau
    scores = np.exp(np.clip(log_score, _LOG_FLOOR, 700.0))
    scores = np.where(np.isneginf(log_score), 0.0, scores)
    return CandidateSet(
        indices=np.arange(particles.m),
        points=particles.points,
        mean=np.asarray(mean, dtype=float),
        sd=np.asarray(sd, dtype=float),
        log_g_prev=np.asarray(log_g_prev, dtype=float),
        log_weights=particles.log_weights,
        scores=scores,
    )


def prune(candidates: CandidateSet, m0_max: int = 1000, rho: float = 0.99) -> CandidateSet:
    """Keep the smallest score-descending prefix holding a fraction rho of the
    total score mass, capped at m0_max. All-zero scores fall back to the
    single highest-weight candidate."""
    scores = candidates.scores
    total = float(scores.sum())
    if total <= 0.0:
        keep = np.array([int(np.argmax(candidates.log_weights))])
    else:
        order = np.argsort(-scores, kind="stable")
        csum = np.cumsum(scores[order])
        k = int(np.searchsorted(csum, rho * total)) + 1
        k = min(k, m0_max, int(np.count_nonzero(scores)))
        keep = np.sort(order[:k])
    return CandidateSet(
        indices=candidates.indices[keep],
        points=candidates.points[keep],
        mean=candidates.mean[keep],
        sd=candidates.sd[keep],
        log_g_prev=candidates.log_g_prev[keep],
        log_weights=candidates.log_weights[keep],
        scores=candidates.scores[keep],
    )


@dataclass
class SurSelection:
    x_new: np.ndarray
    criterion: float
    particle_index: int
    n_scored: int
    n_pruned: int
    n_candidates: int


def select_next_point(model: GpModel, particles: ParticleSystem,
                      log_g_prev: np.ndarray, u_t: float, *,
                      mean: np.ndarray | None = None, sd: np.ndarray | None = None,
                      m0_max: int = 1000, rho: float = 0.99) -> SurSelection:
    """Exhaustive discrete SUR search over the pruned particle set.

    The pruned set serves both as integration support and as the candidate
    pool. Duplicate particle locations (resampling copies) are merged: their
    integration coefficients add exactly, and the merged candidate keeps the
    lowest original particle index for tie-breaking.
    """
    if mean is None or sd is None:
        mean, var = model.predict(particles.points)
        sd = np.sqrt(var)
    var_floor = model_var_floor(model)
    cands = build_candidates(particles, mean, sd, log_g_prev, u_t, var_floor)
    pruned = prune(cands, m0_max=m0_max, rho=rho)

    # merge duplicate locations
    _, first, inverse = np.unique(pruned.points, axis=0, return_index=True, return_inverse=True)
    n_u = first.shape[0]
    rep = np.full(n_u, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(rep, inverse, pruned.indices)
    coeff = np.zeros(n_u)
    log_c = np.clip(pruned.log_weights - np.maximum(pruned.log_g_prev, _LOG_FLOOR), _LOG_FLOOR, 700.0)
    np.add.at(coeff, inverse, np.exp(log_c))
    order = np.argsort(rep, kind="stable")
    U = pruned.points[first][order]
    mean_u = pruned.mean[first][order]
    sd_u = pruned.sd[first][order]
    coeff = coeff[order]
    rep = rep[order]

    # cross quantities: s_n(x_row, cand_col) = |k_n| / sd(cand)
    K = model.posterior_cov(U, U)
    sd_floor = np.sqrt(var_floor)
    denom = np.where(sd_u > sd_floor, sd_u, np.inf)
    s_mat = np.abs(K) / denom[None, :]

    E, _ = _expected_misclass_matrix(mean_u, sd_u, s_mat, u_t, var_floor)
    J = coeff @ E
    j_min = float(J.min())
    pick = int(np.argmax(J <= j_min + _TIE_TOL * (1.0 + abs(j_min))))
    return SurSelection(
        x_new=U[pick].copy(),
        criterion=float(J[pick]),
        particle_index=int(rep[pick]),
        n_scored=len(cands),
        n_pruned=len(pruned),
        n_candidates=n_u,
    )
