"""Bayesian subset simulation: GP-driven sequential design fused with a
sequential Monte Carlo sampler.

Each stage alternates an estimation phase and a sampling phase. The
estimation phase re-solves the adaptive threshold (the value at which the
estimated conditional probability equals p0), checks the adaptive stopping
rule (expected number of misclassified particles below eta * m * p0, with
eta tied to the estimator's own coefficient of variation at the final
stage), and otherwise evaluates the limit state at the point chosen by the
SUR criterion and refits the GP. The sampling phase is the standard
reweight / residual-resample / move transition with target proportional to
pdf * g_t under the stage-final model.

The final estimate is the product over stages of the mean coverage ratios,
with its coefficient of variation from the per-stage kappa recursion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import (
    EstimationResult,
    EvaluationLedger,
    ParticleSystem,
    Problem,
    SelectionOrigin,
    StageRecord,
    normalize_direction,
    substream,
)
from .design import maximin_lhs, truncated_box
from .gp import DEFAULT_JITTER, GpModel, fit_reml
from .smc import (
    DegenerateWeightsError,
    RwmhConfig,
    RwmhState,
    residual_resample,
    reweight,
    rwmh_move,
)
from .sur import log_coverage_g, log_misclass_tau, model_var_floor, select_next_point

__all__ = [
    "BssConfig",
    "ThresholdSolverError",
    "solve_threshold",
    "stopping_check",
    "kappa_hat",
    "cov_recursion",
    "run_bss",
]

_LOG_G_FLOOR = -700.0


class ThresholdSolverError(RuntimeError):
    """The adaptive threshold equation could not be bracketed."""


@dataclass
class BssConfig:
    m: int
    p0: float = 0.1
    eta_intermediate: float = 0.5
    eta_final_factor: float = 0.1
    n_min: int = 2
    n0: int | None = None  # default 5 d
    design_epsilon: float = 1e-5
    design_candidates: int = 10_000
    kernel: RwmhConfig = field(default_factory=RwmhConfig)
    reml_starts: int = 5
    reml_refit_starts: int = 2
    m0_max: int = 1000
    prune_rho: float = 0.99
    max_stages: int = 50
    max_total_evaluations: int = 2000
    jitter: float = DEFAULT_JITTER

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must be in (0, 1)")
        if self.eta_intermediate <= 0.0 or self.eta_final_factor <= 0.0:
            raise ValueError("eta values must be positive")
        if self.n_min < 0:
            raise ValueError("n_min must be >= 0")


def solve_threshold(model, particles: ParticleSystem, log_g_prev: np.ndarray,
                    p0: float, *, mean: np.ndarray | None = None,
                    sd: np.ndarray | None = None, max_expansions: int = 60) -> float:
    """Solve (1/m) sum_j g(Y_j; u) / g_prev(Y_j) = p0 for u by bisection.

    The left-hand side is non-increasing in u, so we bisect on the strict
    predicate LHS(u) > p0 and return the upper bracket end: for continuous
    posteriors this is the root within 1e-12 of the value scale; in the
    indicator (zero-variance) limit it is the classical order-statistic
    threshold, where the equation holds on a plateau.
    """
    if not 0.0 < p0 < 1.0:
        raise ValueError("p0 must be in (0, 1)")
    if mean is None or sd is None:
        mean, var = model.predict(particles.points)
        sd = np.sqrt(var)
    log_gp = np.maximum(np.asarray(log_g_prev, dtype=float), _LOG_G_FLOOR)
    m = particles.m
    log_p0_m = math.log(p0) + math.log(m)

    def lhs_gt(u: float) -> bool:
        lg = log_coverage_g(mean, sd, u)
        terms = lg - log_gp
        if np.all(np.isneginf(terms)):
            return False
        return float(logsumexp(terms)) > log_p0_m

    scale = max(1.0, float(np.max(np.abs(model.design_values))))
    lo = float(np.min(mean - 6.0 * sd))
    hi = float(np.max(mean + 6.0 * sd))
    if not hi > lo:
        lo, hi = lo - max(1.0, abs(lo)), hi + max(1.0, abs(hi))
    k = 0
    while not lhs_gt(lo):
        lo, hi = lo - (hi - lo), lo
        k += 1
        if k > max_expansions:
            raise ThresholdSolverError("no sign change while expanding bracket downward")
    k = 0
    while lhs_gt(hi):
        lo, hi = hi, hi + (hi - lo)
        k += 1
        if k > max_expansions:
            raise ThresholdSolverError("no sign change while expanding bracket upward")
    width_tol = 1e-12 * scale
    while hi - lo > width_tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if lhs_gt(mid):
            lo = mid
        else:
            hi = mid
    return hi


def misclass_sum(mean: np.ndarray, sd: np.ndarray, log_g_prev: np.ndarray,
                 u_t: float, var_floor: float) -> float:
    """sum_j tau(Y_j) / g_prev(Y_j), the stopping-rule left-hand side."""
    sd = np.asarray(sd, dtype=float)
    sd_floor = math.sqrt(var_floor)
    log_tau = log_misclass_tau(mean, np.where(sd > sd_floor, sd, 0.0), u_t)
    log_terms = log_tau - np.maximum(np.asarray(log_g_prev, dtype=float), _LOG_G_FLOOR)
    terms = np.exp(np.clip(log_terms, _LOG_G_FLOOR, 700.0))
    terms = np.where(np.isneginf(log_terms), 0.0, terms)
    return float(terms.sum())


def stopping_check(model, particles: ParticleSystem, log_g_prev: np.ndarray,
                   u_t: float, eta: float, m: int, p0: float, *,
                   mean: np.ndarray | None = None, sd: np.ndarray | None = None) -> bool:
    """True when the expected misclassification mass is within eta * m * p0."""
    if mean is None or sd is None:
        mean, var = model.predict(particles.points)
        sd = np.sqrt(var)
    return misclass_sum(mean, sd, log_g_prev, u_t, model_var_floor(model)) <= eta * m * p0


def kappa_hat(ratios: np.ndarray, p_hat: float) -> float:
    """Per-stage relative variance term: mean((r - p_hat)^2) / p_hat^2."""
    if not p_hat > 0.0:
        raise ValueError("degenerate stage: p_hat must be positive")
    r = np.asarray(ratios, dtype=float)
    return float(np.mean((r - p_hat) ** 2) / (p_hat * p_hat))


def cov_recursion(kappas, m: int) -> np.ndarray:
    """Coefficient of variation per stage from
    delta^2_t = kappa_t/m + (1 + kappa_t/m) * delta^2_{t-1}, delta^2_0 = 0."""
    delta2 = 0.0
    out = []
    for k in kappas:
        k = float(k)
        if k < 0.0:
            raise ValueError("kappa values must be non-negative")
        delta2 = k / m + (1.0 + k / m) * delta2
        out.append(math.sqrt(delta2))
    return np.array(out)


def _default_model_factory(X, y, prev_hyper, rng, config: BssConfig):
    n_starts = config.reml_starts if prev_hyper is None else config.reml_refit_starts
    hyper = fit_reml(X, y, n_starts=n_starts, rng=rng, init=prev_hyper, jitter=config.jitter)
    return GpModel(X, y, hyper, jitter=config.jitter)


def run_bss(problem: Problem, config: BssConfig, seed: int,
            collect_trace: bool = False, model_factory=None) -> EstimationResult:
    """Run Bayesian subset simulation; deterministic given the root seed.

    `model_factory(X, y, prev_hyper, rng, config)` can replace the default
    ReML + ordinary-kriging surrogate (used for the perfect-model limit in
    tests, or for custom priors); refit failures keep the previous model.
    """
    problem = normalize_direction(problem)
    if model_factory is None:
        model_factory = _default_model_factory
    d = problem.dim
    u = problem.threshold
    m = config.m
    p0 = config.p0
    ledger = EvaluationLedger(record_points=True)
    rng_design = substream(seed, "design")
    rng_init = substream(seed, "particle-init")
    rng_resample = substream(seed, "resample")
    rng_move = substream(seed, "move")
    rng_reml = substream(seed, "reml")

    # stage 0: initial design, first fit, particle cloud from the input law
    n0 = config.n0 if config.n0 is not None else 5 * d
    box = truncated_box(problem.input, config.design_epsilon)
    X = maximin_lhs(n0, box, config.design_candidates, rng_design)
    y = ledger.evaluate(problem.limit_state, X, stage=0, origin=SelectionOrigin.INITIAL_DESIGN)
    model = model_factory(X, y, None, rng_reml, config)
    prev_hyper = model.hyper

    particles = ParticleSystem.initial(problem.input, m, rng_init)
    mean_p, var_p = model.predict(particles.points)
    sd_p = np.sqrt(var_p)
    kernel = RwmhState.initial(problem.input.sds, config.kernel)

    stages: list[StageRecord] = []
    kappas: list[float] = []
    trace: list[dict] = [] if collect_trace else None
    log_alpha = 0.0
    underflows = 0
    error: str | None = None
    t = 1
    aborted = False
    while True:
        if t > config.max_stages:
            error = f"max_stages={config.max_stages} exceeded"
            aborted = True
            break
        log_g_prev = particles.cached_log_g
        underflows += int(np.count_nonzero(log_g_prev < _LOG_G_FLOOR))
        n_t = 0
        while True:
            u_cand = solve_threshold(model, particles, log_g_prev, p0, mean=mean_p, sd=sd_p)
            is_final = u_cand >= u
            u_t = u if is_final else u_cand
            log_g_t = log_coverage_g(mean_p, sd_p, u_t)
            ratios = np.exp(np.clip(log_g_t - np.maximum(log_g_prev, _LOG_G_FLOOR), None, 700.0))
            p_prov = float(ratios.mean())
            if is_final:
                kap_prov = kappa_hat(ratios, p_prov) if p_prov > 0.0 else 0.0
                delta_prov = float(cov_recursion(kappas + [kap_prov], m)[-1])
                eta = config.eta_final_factor * delta_prov
            else:
                eta = config.eta_intermediate
            if n_t >= config.n_min and misclass_sum(
                mean_p, sd_p, log_g_prev, u_t, model_var_floor(model)
            ) <= eta * m * p0:
                break
            if ledger.n_total >= config.max_total_evaluations:
                error = f"max_total_evaluations={config.max_total_evaluations} exceeded"
                aborted = True
                break
            sel = select_next_point(
                model, particles, log_g_prev, u_t,
                mean=mean_p, sd=sd_p, m0_max=config.m0_max, rho=config.prune_rho,
            )
            y_new = ledger.evaluate(problem.limit_state, sel.x_new[None, :],
                                    stage=t, origin=SelectionOrigin.SUR)[0]
            if collect_trace:
                trace.append({
                    "n": ledger.n_total,
                    "x_new": [float(v) for v in sel.x_new],
                    "criterion": sel.criterion,
                    "u_t": u_t,
                    "stage": t,
                })
            X = np.vstack([X, sel.x_new[None, :]])
            y = np.append(y, y_new)
            try:
                model = model_factory(X, y, prev_hyper, rng_reml, config)
                prev_hyper = model.hyper
            except Exception:
                # refit failure: retain previous hyperparameters on the full data;
                # if even conditioning fails, keep the previous model outright
                try:
                    model = GpModel(X, y, prev_hyper, jitter=config.jitter)
                except Exception:
                    pass
            mean_p, var_p = model.predict(particles.points)
            sd_p = np.sqrt(var_p)
            n_t += 1

        # stage complete (or aborted): record with the last solved threshold
        kap = kappa_hat(ratios, p_prov) if p_prov > 0.0 else 0.0
        kappas.append(kap)
        delta_t = float(cov_recursion(kappas, m)[-1])
        log_alpha += math.log(p_prov) if p_prov > 0.0 else -np.inf
        rec = StageRecord(t=t, u_t=u_t, n_evals=n_t, p_hat=p_prov,
                          kappa_hat=kap, delta_hat=delta_t)
        stages.append(rec)
        if aborted or is_final:
            break

        # sampling phase: reweight -> residual resample -> move
        try:
            reweighted = reweight(particles, log_g_t, np.maximum(log_g_prev, _LOG_G_FLOOR))
        except DegenerateWeightsError as exc:
            error = str(exc)
            aborted = True
            break
        idx = residual_resample(reweighted.weights(), rng_resample)
        pts = particles.points[idx]
        lp_cur = particles.cached_log_pdf[idx]
        lg_cur = log_g_t[idx]

        def log_target(Z, _u=u_t, _model=model):
            lp = problem.input.log_density(Z)
            mu, v = _model.predict(Z)
            lg = log_coverage_g(mu, np.sqrt(v), _u)
            return lp + lg, {"log_pdf": lp, "log_g": lg}

        pts, (_, aux), kernel, diag = rwmh_move(
            pts, log_target, kernel, rng_move,
            current=(lp_cur + lg_cur, {"log_pdf": lp_cur, "log_g": lg_cur}),
        )
        rec.acceptance = diag.acceptance
        particles = ParticleSystem(
            points=pts,
            log_weights=np.full(m, -math.log(m)),
            stage=t,
            cached_log_g=aux["log_g"],
            cached_log_pdf=aux["log_pdf"],
        )
        mean_p, var_p = model.predict(particles.points)
        sd_p = np.sqrt(var_p)
        t += 1

    alpha = math.exp(log_alpha) if np.isfinite(log_alpha) else 0.0
    delta_T = float(cov_recursion(kappas, m)[-1]) if kappas else None
    n_final = stages[-1].n_evals if stages else 0
    n_intermediate = sum(s.n_evals for s in stages[:-1]) if stages else 0
    return EstimationResult(
        method="bss",
        alpha_hat=alpha,
        delta_hat=delta_T,
        stages=stages,
        n_total=ledger.n_total,
        n_reported=float(ledger.n_total),
        n_initial=ledger.n_initial,
        n_intermediate=n_intermediate,
        n_final=n_final,
        degenerate=alpha == 0.0,
        error=error,
        underflow_floors=underflows,
        ledger=ledger,
        trace=trace,
    )
