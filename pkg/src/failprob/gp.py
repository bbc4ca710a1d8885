"""Gaussian process regression for limit-state surrogates.

The prior is a stationary anisotropic Matern covariance of regularity 5/2
over an unknown constant mean. The mean is profiled out exactly by
generalized least squares, so the posterior mean is the ordinary kriging
predictor, and hyperparameters (process variance and per-dimension ranges)
are estimated by restricted maximum likelihood with multi-start L-BFGS-B on
the log scale, using analytic gradients.

A fixed relative jitter is added to the correlation diagonal for
factorization stability; interpolation and the posterior-variance floor are
exact up to that jitter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

__all__ = [
    "REGULARITY",
    "DEFAULT_JITTER",
    "matern52_corr",
    "covariance",
    "CovarianceHyperparams",
    "GpModel",
    "fit_reml",
    "reml_objective",
    "save_design",
    "load_design",
]

REGULARITY = 2.5
DEFAULT_JITTER = 1e-10
_SQRT10 = math.sqrt(10.0)
_LOG_2PI = math.log(2.0 * math.pi)


def matern52_corr(h):
    """Matern 5/2 correlation (1 + t + t^2/3) exp(-t), t = sqrt(10)|h|, for h >= 0."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0.0):
        raise ValueError("matern52_corr requires h >= 0")
    t = _SQRT10 * h
    out = (1.0 + t + t * t / 3.0) * np.exp(-t)
    return float(out[()]) if out.ndim == 0 else out


def _dcorr_over_h(h):
    """kappa'(h)/h; smooth through h = 0 where it equals -10/3."""
    t = _SQRT10 * h
    return -(10.0 / 3.0) * (1.0 + t) * np.exp(-t)


@dataclass(frozen=True)
class CovarianceHyperparams:
    """Process variance, per-dimension ranges, and the (fixed) regularity."""

    sigma2: float
    ranges: np.ndarray
    regularity: float = REGULARITY
    converged: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "ranges", np.atleast_1d(np.asarray(self.ranges, dtype=float)))
        if not (self.sigma2 > 0.0):
            raise ValueError("sigma2 must be positive")
        if np.any(self.ranges <= 0.0):
            raise ValueError("all ranges must be positive")
        if self.regularity != REGULARITY:
            raise ValueError("only regularity 5/2 is supported")

    @property
    def dim(self) -> int:
        return self.ranges.shape[0]


def covariance(x, y, hyper: CovarianceHyperparams) -> float:
    """Covariance sigma2 * kappa(scaled distance) between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape or x.shape[0] != hyper.dim:
        raise ValueError("covariance: dimension mismatch")
    h = math.sqrt(float(np.sum(((x - y) / hyper.ranges) ** 2)))
    return hyper.sigma2 * matern52_corr(h)


def _corr_matrix(Xa: np.ndarray, Xb: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    return matern52_corr(cdist(Xa / ranges, Xb / ranges))


class GpModel:
    """Ordinary-kriging posterior from design data and fixed hyperparameters.

    Immutable once factorized: predictions and posterior covariances are
    read-only and may run concurrently. Refitting builds a fresh model.
    """

    def __init__(self, design_points, design_values, hyper: CovarianceHyperparams,
                 jitter: float = DEFAULT_JITTER):
        X = np.atleast_2d(np.asarray(design_points, dtype=float))
        y = np.asarray(design_values, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("design_points and design_values disagree on n")
        if X.shape[1] != hyper.dim:
            raise ValueError("design dimension does not match hyperparameters")
        self.design_points = X
        self.design_values = y
        self.hyper = hyper
        self.jitter = float(jitter)

        n = X.shape[0]
        R = _corr_matrix(X, X, hyper.ranges)
        R[np.diag_indices(n)] += self.jitter
        self._cho = cho_factor(R, lower=True)
        ones = np.ones(n)
        self._rinv_one = cho_solve(self._cho, ones)
        self._one_rinv_one = float(ones @ self._rinv_one)
        self._mu = float(self._rinv_one @ y) / self._one_rinv_one
        self._alpha = cho_solve(self._cho, y - self._mu)

    @property
    def n(self) -> int:
        return self.design_points.shape[0]

    @property
    def dim(self) -> int:
        return self.design_points.shape[1]

    @property
    def gls_mean(self) -> float:
        return self._mu

    def predict(self, x):
        """Posterior mean and variance at one point (d,) or a batch (k, d)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        r = _corr_matrix(X, self.design_points, self.hyper.ranges)
        mean = self._mu + r @ self._alpha
        rinv_r = cho_solve(self._cho, r.T)
        quad = np.einsum("ij,ji->i", r, rinv_r)
        defect = 1.0 - r @ self._rinv_one
        var = self.hyper.sigma2 * (1.0 - quad + defect * defect / self._one_rinv_one)
        var = np.maximum(var, 0.0)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def posterior_cov(self, Xa, Xb) -> np.ndarray:
        """Posterior covariance matrix k_n(Xa, Xb), including the GLS mean term."""
        Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
        Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
        ra = _corr_matrix(Xa, self.design_points, self.hyper.ranges)
        rb = _corr_matrix(Xb, self.design_points, self.hyper.ranges)
        Rab = _corr_matrix(Xa, Xb, self.hyper.ranges)
        cross = ra @ cho_solve(self._cho, rb.T)
        da = 1.0 - ra @ self._rinv_one
        db = 1.0 - rb @ self._rinv_one
        return self.hyper.sigma2 * (Rab - cross + np.outer(da, db) / self._one_rinv_one)

    def cross_sd(self, x, x_new, var_floor: float | None = None):
        """s_n(x, x_new) = |k_n(x, x_new)| / sigma_n(x_new).

        Returns 0 when the posterior variance at x_new is at or below the
        floor (the candidate is already fully known); the default floor sits
        above the factorization nugget so design points qualify. `x` may be
        a batch.
        """
        if var_floor is None:
            var_floor = max(1e-12, 10.0 * self.jitter) * self.hyper.sigma2
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        _, var_new = self.predict(np.asarray(x_new, dtype=float))
        if var_new <= var_floor:
            out = np.zeros(X.shape[0])
        else:
            k = self.posterior_cov(X, np.atleast_2d(np.asarray(x_new, dtype=float)))[:, 0]
            out = np.abs(k) / math.sqrt(var_new)
        return float(out[0]) if single else out

    def with_observation(self, x_new, y_new) -> "GpModel":
        """New model with (x_new, y_new) appended; hyperparameters unchanged."""
        X = np.vstack([self.design_points, np.atleast_2d(np.asarray(x_new, dtype=float))])
        y = np.append(self.design_values, float(y_new))
        return GpModel(X, y, self.hyper, jitter=self.jitter)

    def loo(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact leave-one-out predictions and variances (diagnostic only).

        Uses the projected precision P = R^-1 - R^-1 1 1' R^-1 / (1' R^-1 1):
        the LOO residual at i is (P y)_i / P_ii and the LOO variance is
        sigma2 / P_ii.
        """
        n = self.n
        Rinv = cho_solve(self._cho, np.eye(n))
        P = Rinv - np.outer(self._rinv_one, self._rinv_one) / self._one_rinv_one
        pdiag = np.diag(P)
        resid = (P @ self.design_values) / pdiag
        loo_mean = self.design_values - resid
        loo_var = self.hyper.sigma2 / pdiag
        return loo_mean, loo_var


def reml_objective(design_points, design_values, log_params, jitter: float = DEFAULT_JITTER):
    """Negative restricted log-likelihood and gradient.

    Coordinates are (log sigma2, log rho_1, ..., log rho_d). The constant
    mean is profiled out exactly, which removes one degree of freedom: the
    objective is 0.5 * [(n-1) log 2 pi + (n-1) log sigma2 + log|R|
    + log(1' R^-1 1) + Q / sigma2] with Q the GLS quadratic form.
    """
    X = np.atleast_2d(np.asarray(design_points, dtype=float))
    y = np.asarray(design_values, dtype=float).reshape(-1)
    lp = np.asarray(log_params, dtype=float)
    n, d = X.shape
    sigma2 = math.exp(lp[0])
    ranges = np.exp(lp[1:])
    if ranges.shape[0] != d:
        raise ValueError("log_params must have length 1 + d")

    H = cdist(X / ranges, X / ranges)
    R = matern52_corr(H)
    R[np.diag_indices(n)] += jitter
    try:
        cho = cho_factor(R, lower=True)
    except np.linalg.LinAlgError:
        return 1e14, np.zeros(d + 1)
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    ones = np.ones(n)
    v = cho_solve(cho, ones)
    oro = float(ones @ v)
    mu = float(v @ y) / oro
    resid = y - mu
    a = cho_solve(cho, resid)
    Q = float(resid @ a)

    nll = 0.5 * ((n - 1) * _LOG_2PI + (n - 1) * lp[0] + logdet + math.log(oro) + Q / sigma2)

    grad = np.empty(d + 1)
    grad[0] = 0.5 * ((n - 1) - Q / sigma2)
    Rinv = cho_solve(cho, np.eye(n))
    G = _dcorr_over_h(H)
    for k in range(d):
        Dk2 = (X[:, k, None] - X[None, :, k]) ** 2
        Rdot = G * (-Dk2 / ranges[k] ** 3)
        tr = float(np.sum(Rinv * Rdot))
        d_oro = -float(v @ Rdot @ v) / oro
        d_quad = -float(a @ Rdot @ a)
        grad[1 + k] = 0.5 * (tr + d_oro + d_quad / sigma2) * ranges[k]
    return nll, grad


def fit_reml(design_points, design_values, n_starts: int = 5,
             rng: np.random.Generator | None = None,
             init: CovarianceHyperparams | None = None,
             jitter: float = DEFAULT_JITTER, maxiter: int = 100) -> CovarianceHyperparams:
    """Estimate (sigma2, ranges) by multi-start quasi-Newton ReML.

    Returns the best local maximizer found; if no start converges, the best
    iterate is returned with converged=False and a warning. Range bounds are
    [1e-3, 1e3] times the design span per dimension; variance bounds are
    relative to var(y) so the estimate scales correctly with the data.
    """
    X = np.atleast_2d(np.asarray(design_points, dtype=float))
    y = np.asarray(design_values, dtype=float).reshape(-1)
    n, d = X.shape
    if n < d + 2:
        raise ValueError(f"need at least d + 2 = {d + 2} design points, got {n}")
    dist = cdist(X, X)
    dist[np.diag_indices(n)] = np.inf
    if dist.min() == 0.0:
        raise ValueError("degenerate design: duplicate points")

    span = X.max(axis=0) - X.min(axis=0)
    span = np.where(span > 0.0, span, max(float(span.max()), 1.0))
    s2y = float(np.var(y, ddof=1))
    if s2y <= 0.0 or not np.isfinite(s2y):
        floor = (1e-8 * (1.0 + abs(float(np.mean(y))))) ** 2
        return CovarianceHyperparams(sigma2=floor, ranges=span.copy())

    rng = rng if rng is not None else np.random.default_rng(0)
    lb = np.concatenate([[math.log(1e-10 * s2y)], np.log(1e-3 * span)])
    ub = np.concatenate([[math.log(1e6 * s2y)], np.log(1e3 * span)])
    bounds = list(zip(lb, ub))

    starts: list[np.ndarray] = []
    if init is not None:
        starts.append(np.concatenate([[math.log(init.sigma2)], np.log(init.ranges)]))
    starts.append(np.concatenate([[math.log(s2y)], np.log(span / 2.0)]))
    while len(starts) < n_starts:
        logr = np.log(span) + rng.uniform(math.log(0.1), math.log(10.0), size=d)
        starts.append(np.concatenate([[math.log(s2y)], logr]))
    starts = [np.clip(s, lb + 1e-9, ub - 1e-9) for s in starts[:n_starts]]

    best = None
    best_val = np.inf
    any_success = False
    for s0 in starts:
        res = minimize(
            lambda lp: reml_objective(X, y, lp, jitter=jitter),
            s0, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": maxiter},
        )
        any_success = any_success or bool(res.success)
        if res.fun < best_val:
            best_val = float(res.fun)
            best = res.x
    if best is None:  # pragma: no cover - minimize always returns an iterate
        raise RuntimeError("ReML optimization produced no iterate")
    if not any_success:
        warnings.warn("ReML optimizer did not converge; returning best iterate")
    return CovarianceHyperparams(
        sigma2=math.exp(best[0]), ranges=np.exp(best[1:]), converged=any_success
    )


def save_design(path, design_points, design_values) -> None:
    """Write design data as CSV with header x1,...,xd,f (full float round-trip)."""
    X = np.atleast_2d(np.asarray(design_points, dtype=float))
    y = np.asarray(design_values, dtype=float).reshape(-1)
    d = X.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join([f"x{i + 1}" for i in range(d)] + ["f"]) + "\n")
        for row, val in zip(X, y):
            fh.write(",".join(repr(float(v)) for v in row) + "," + repr(float(val)) + "\n")


def load_design(path) -> tuple[np.ndarray, np.ndarray]:
    """Read design data written by save_design."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "f" or not all(c == f"x{i + 1}" for i, c in enumerate(header[:-1])):
            raise ValueError("not a design CSV: bad header")
        rows = [[float(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    data = np.asarray(rows, dtype=float)
    return data[:, :-1], data[:, -1]
