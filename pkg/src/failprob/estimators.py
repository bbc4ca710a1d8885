"""Baseline estimators: plain Monte Carlo and classical subset simulation
with adaptive thresholds.

Subset simulation runs the reweight/residual-resample/move scheme on the
indicator targets 1{f > u_t} * pdf. Thresholds are the (m - m0)-th order
statistic of the current population's limit-state values, so each
intermediate conditional probability estimate equals p0 = m0/m by
construction, and the final estimate is (m_u / m) * p0^(T-1).

Evaluation counting: the ledger records every actual limit-state call
(stage 0 sample plus S proposals per particle per move); the benchmarking
convention reports m + (T-1)(1-p0) m, i.e. one evaluation per particle per
stage, with the extra adaptive-MCMC evaluations left out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EstimationResult,
    EvaluationLedger,
    Problem,
    SelectionOrigin,
    StageRecord,
    normalize_direction,
    substream,
)
from .smc import RwmhConfig, RwmhState, residual_resample, rwmh_move

__all__ = [
    "SubsetSimConfig",
    "monte_carlo_estimate",
    "run_subset_simulation",
    "ss_relative_variance_approx",
]


@dataclass
class SubsetSimConfig:
    m: int
    m0: int
    kernel: RwmhConfig = field(default_factory=RwmhConfig)
    max_stages: int = 50

    def __post_init__(self) -> None:
        if not 1 <= self.m0 < self.m:
            raise ValueError("need 1 <= m0 < m")

    @property
    def p0(self) -> float:
        return self.m0 / self.m


def monte_carlo_estimate(problem: Problem, m: int, rng, *,
                         batch: int = 1_000_000) -> EstimationResult:
    """Plain Monte Carlo: fraction of failures among m i.i.d. draws.

    Samples with non-finite limit-state values are rejected with a
    diagnostic count (they do not enter numerator or denominator).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    problem = normalize_direction(problem)
    if isinstance(rng, (int, np.integer)):
        rng = substream(int(rng), "mc")
    ledger = EvaluationLedger(record_points=False)
    failures = 0
    rejected = 0
    done = 0
    while done < m:
        k = min(batch, m - done)
        X = problem.input.sample(k, rng)
        vals = ledger.evaluate(problem.limit_state, X, stage=0, origin=SelectionOrigin.SMC_BASELINE)
        finite = np.isfinite(vals)
        rejected += int(k - finite.sum())
        failures += int(np.count_nonzero(vals[finite] > problem.threshold))
        done += k
    n_eff = m - rejected
    alpha = failures / n_eff if n_eff > 0 else 0.0
    std_err = math.sqrt(alpha * (1.0 - alpha) / n_eff) if n_eff > 0 else 0.0
    degenerate = failures == 0 or failures == n_eff
    return EstimationResult(
        method="mc",
        alpha_hat=alpha,
        delta_hat=(std_err / alpha) if alpha > 0 else None,
        std_err=std_err,
        stages=[],
        n_total=ledger.n_total,
        n_reported=float(m),
        n_initial=m,
        degenerate=degenerate,
        error=None if rejected == 0 else f"{rejected} samples rejected (non-finite value)",
        ledger=ledger,
    )


def run_subset_simulation(problem: Problem, config: SubsetSimConfig, rng_or_seed,
                          record_points: bool = False) -> EstimationResult:
    """Subset simulation with adaptive thresholds (order-statistic levels)."""
    problem = normalize_direction(problem)
    # stream names shared with the Bayesian variant: with a perfect surrogate
    # both algorithms consume identical draws and produce identical trajectories
    if isinstance(rng_or_seed, (int, np.integer)):
        seed = int(rng_or_seed)
        rng_init = substream(seed, "particle-init")
        rng_resample = substream(seed, "resample")
        rng_move = substream(seed, "move")
    else:
        rng_init = rng_resample = rng_move = rng_or_seed
    m, m0 = config.m, config.m0
    p0 = config.p0
    u = problem.threshold
    dist = problem.input
    ledger = EvaluationLedger(record_points=record_points)

    pts = dist.sample(m, rng_init)
    vals = ledger.evaluate(problem.limit_state, pts, stage=0, origin=SelectionOrigin.SMC_BASELINE)
    log_pdf = dist.log_density(pts)
    kernel = RwmhState.initial(dist.sds, config.kernel)

    stages: list[StageRecord] = []
    t = 1
    while True:
        if t > config.max_stages:
            raise RuntimeError(
                f"subset simulation exceeded max_stages={config.max_stages}; "
                "the threshold may be unreachable or the kernel stuck"
            )
        order = np.sort(vals)
        u_t0 = float(order[m - m0 - 1])  # (m - m0)-th order statistic, 1-indexed
        if u_t0 > u:
            T = t
            m_u = int(np.count_nonzero(vals > u))
            alpha = (m_u / m) * p0 ** (T - 1)
            stages.append(StageRecord(t=T, u_t=u, n_evals=0, p_hat=m_u / m))
            break
        survivors = vals > u_t0
        m_t = int(np.count_nonzero(survivors))
        stages.append(StageRecord(t=t, u_t=u_t0, n_evals=m, p_hat=p0))
        # reweight to the indicator of the new level, then resample
        w = survivors.astype(float) / m_t
        idx = residual_resample(w, rng_resample)
        pts = pts[idx]
        vals = vals[idx]
        log_pdf = log_pdf[idx]

        def log_target(X, _u=u_t0, _t=t):
            fv = ledger.evaluate(problem.limit_state, X, stage=_t,
                                 origin=SelectionOrigin.SMC_BASELINE)
            lp = dist.log_density(X)
            logp = np.where(fv > _u, lp, -np.inf)
            return logp, {"f": fv, "log_pdf": lp}

        current = (np.where(vals > u_t0, log_pdf, -np.inf), {"f": vals, "log_pdf": log_pdf})
        pts, (_, aux), kernel, diag = rwmh_move(pts, log_target, kernel, rng_move, current=current)
        vals = aux["f"]
        log_pdf = aux["log_pdf"]
        stages[-1].acceptance = diag.acceptance
        t += 1

    T = len(stages)
    n_reported = m + (T - 1) * (1.0 - p0) * m
    delta = math.sqrt(ss_relative_variance_approx(alpha, p0, m)) if 0.0 < alpha < 1.0 else None
    return EstimationResult(
        method="ss",
        alpha_hat=alpha,
        delta_hat=delta,
        stages=stages,
        n_total=ledger.n_total,
        n_reported=n_reported,
        n_initial=m,
        n_intermediate=int(round((T - 1) * (1.0 - p0) * m)),
        n_final=0,
        degenerate=alpha == 0.0,
        ledger=ledger,
    )


def ss_relative_variance_approx(alpha: float, p0: float, m: int) -> float:
    """Asymptotic Var(alpha_SS / alpha) when all conditional probabilities
    equal p0: (T/m)(1 - p0)/p0 with T = ceil(log alpha / log p0)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0, 1)")
    T = max(1, math.ceil(math.log(alpha) / math.log(p0) - 1e-12))
    return (T / m) * (1.0 - p0) / p0
