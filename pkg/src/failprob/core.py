"""Problem definitions, input distributions, particle containers, and the
evaluation ledger shared by all estimators.

Every estimator in this package works on the normalized form of a problem,
in which failure means the limit-state value exceeds the threshold
(direction ABOVE). Problems declared with the opposite convention are
flipped (function and threshold negated) exactly once, at construction.

Limit-state functions are vectorized: they map an (n, d) array of points to
an (n,) array of values. All densities are handled in log space so that the
machinery survives failure probabilities down to ~1e-9.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

import numpy as np
from scipy.special import logsumexp, ndtri

__all__ = [
    "Direction",
    "Normal",
    "InputDistribution",
    "Problem",
    "normalize_direction",
    "ParticleSystem",
    "SelectionOrigin",
    "EvaluationLedger",
    "StageRecord",
    "EstimationResult",
    "substream",
]

_LOG_2PI = math.log(2.0 * math.pi)


class Direction(Enum):
    """Failure convention: ABOVE means failure when f(x) > threshold."""

    ABOVE = "above"
    BELOW = "below"


@dataclass(frozen=True)
class Normal:
    """Scalar normal marginal N(mean, sd^2)."""

    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.mean) and np.isfinite(self.sd)):
            raise ValueError("normal marginal parameters must be finite")
        if self.sd <= 0.0:
            raise ValueError("normal marginal needs sd > 0")

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.sd * rng.standard_normal(m)

    def log_pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * _LOG_2PI

    def quantile(self, p):
        return self.mean + self.sd * ndtri(p)


@dataclass(frozen=True)
class InputDistribution:
    """Product distribution of independent scalar marginals."""

    marginals: tuple[Normal, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if len(self.marginals) < 1:
            raise ValueError("need at least one marginal")

    @classmethod
    def iid_normal(cls, dim: int, mean: float = 0.0, sd: float = 1.0) -> "InputDistribution":
        return cls(tuple(Normal(mean, sd) for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def means(self) -> np.ndarray:
        return np.array([mg.mean for mg in self.marginals])

    @property
    def sds(self) -> np.ndarray:
        return np.array([mg.sd for mg in self.marginals])

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """Draw an i.i.d. (m, d) sample. Deterministic given the generator state."""
        if m < 1:
            raise ValueError("sample size must be >= 1")
        return np.column_stack([mg.sample(m, rng) for mg in self.marginals])

    def log_density(self, x):
        """Joint log density at a single point (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("log_density requires finite input")
        batch = x.ndim == 2
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {pts.shape[1]}")
        out = np.zeros(pts.shape[0])
        for i, mg in enumerate(self.marginals):
            out += mg.log_pdf(pts[:, i])
        return out if batch else float(out[0])

    def quantile(self, p) -> np.ndarray:
        """Per-marginal quantiles at a common probability level."""
        return np.array([mg.quantile(p) for mg in self.marginals])


@dataclass(frozen=True)
class _NegatedFunction:
    """Picklable wrapper negating a limit-state function."""

    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(self.fn(x), dtype=float)


@dataclass(frozen=True)
class Problem:
    """A rare-event problem: P(limit_state(X) > threshold) under `input`.

    `limit_state` maps an (n, d) array to an (n,) array. A problem created
    with direction BELOW is normalized at construction: the stored function
    and threshold are negated and the direction becomes ABOVE, so
    P(f < u) is estimated as P(-f > -u).
    """

    limit_state: Callable[[np.ndarray], np.ndarray]
    input: InputDistribution
    threshold: float
    direction: Direction = Direction.ABOVE

    def __post_init__(self) -> None:
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        object.__setattr__(self, "threshold", float(self.threshold))
        if self.direction is Direction.BELOW:
            object.__setattr__(self, "limit_state", _NegatedFunction(self.limit_state))
            object.__setattr__(self, "threshold", -self.threshold)
            object.__setattr__(self, "direction", Direction.ABOVE)

    @property
    def dim(self) -> int:
        return self.input.dim


def normalize_direction(problem: Problem) -> Problem:
    """Return the ABOVE-convention form of a problem.

    Construction already normalizes, so this is the identity for any
    `Problem` instance; it exists as the single place the flip is defined.
    """
    if problem.direction is Direction.ABOVE:
        return problem
    return Problem(problem.limit_state, problem.input, problem.threshold, problem.direction)


@dataclass
class ParticleSystem:
    """A weighted particle population targeting the current stage density.

    Cached per-particle values (log of the coverage-style weight function
    g_t and log of the input density) are kept consistent with `points` by
    the single driver that mutates the system.
    """

    points: np.ndarray
    log_weights: np.ndarray
    stage: int
    cached_log_g: np.ndarray
    cached_log_pdf: np.ndarray

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.cached_log_g = np.asarray(self.cached_log_g, dtype=float)
        self.cached_log_pdf = np.asarray(self.cached_log_pdf, dtype=float)
        m = self.points.shape[0]
        for name in ("log_weights", "cached_log_g", "cached_log_pdf"):
            if getattr(self, name).shape != (m,):
                raise ValueError(f"{name} must have shape ({m},)")

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(float(logsumexp(self.log_weights))) <= tol

    @classmethod
    def initial(cls, dist: InputDistribution, m: int, rng: np.random.Generator) -> "ParticleSystem":
        """Stage-0 cloud: i.i.d. from the input distribution, g_0 = 1."""
        pts = dist.sample(m, rng)
        return cls(
            points=pts,
            log_weights=np.full(m, -math.log(m)),
            stage=0,
            cached_log_g=np.zeros(m),
            cached_log_pdf=dist.log_density(pts),
        )


class SelectionOrigin(Enum):
    INITIAL_DESIGN = "initial-design"
    SUR = "sur"
    SMC_BASELINE = "smc-baseline"


@dataclass
class _EvalBlock:
    points: np.ndarray
    values: np.ndarray
    stage: int
    origin: SelectionOrigin


class EvaluationLedger:
    """Counts (and optionally records) every routed limit-state evaluation.

    Conservation invariant: n_total == n_0 + sum over stages t >= 1 of N_t.
    Benchmarking conventions that differ from the raw call count (the subset
    simulation reporting rule) are applied by the estimators on top of these
    counters, never by double-evaluating.
    """

    def __init__(self, record_points: bool = True) -> None:
        self.record_points = record_points
        self._blocks: list[_EvalBlock] = []
        self._counts: dict[tuple[int, SelectionOrigin], int] = {}

    def evaluate(
        self,
        fn: Callable[[np.ndarray], np.ndarray],
        points: np.ndarray,
        stage: int,
        origin: SelectionOrigin,
    ) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.asarray(fn(points), dtype=float).reshape(-1)
        if values.shape[0] != points.shape[0]:
            raise ValueError("limit_state returned wrong number of values")
        key = (int(stage), origin)
        self._counts[key] = self._counts.get(key, 0) + points.shape[0]
        if self.record_points:
            self._blocks.append(_EvalBlock(points.copy(), values.copy(), int(stage), origin))
        return values

    def count(self, stage: int | None = None, origin: SelectionOrigin | None = None) -> int:
        total = 0
        for (s, o), c in self._counts.items():
            if stage is not None and s != stage:
                continue
            if origin is not None and o != origin:
                continue
            total += c
        return total

    @property
    def n_total(self) -> int:
        return sum(self._counts.values())

    @property
    def n_initial(self) -> int:
        """n_0: evaluations at stage 0."""
        return self.count(stage=0)

    def stage_counts(self) -> dict[int, int]:
        """N_t per stage (stage 0 = n_0)."""
        out: dict[int, int] = {}
        for (s, _), c in self._counts.items():
            out[s] = out.get(s, 0) + c
        return dict(sorted(out.items()))

    def iter_records(self) -> Iterator[tuple[np.ndarray, float, int, SelectionOrigin]]:
        if not self.record_points:
            raise ValueError("ledger was created with record_points=False")
        for blk in self._blocks:
            for i in range(blk.points.shape[0]):
                yield blk.points[i], float(blk.values[i]), blk.stage, blk.origin

    def design_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All evaluated points and values, in evaluation order."""
        if not self.record_points:
            raise ValueError("ledger was created with record_points=False")
        if not self._blocks:
            d = 0
            return np.zeros((0, d)), np.zeros(0)
        X = np.vstack([blk.points for blk in self._blocks])
        y = np.concatenate([blk.values for blk in self._blocks])
        return X, y


@dataclass
class StageRecord:
    """Per-stage bookkeeping: threshold, evaluation count, ratio estimate,
    and the variance-recursion terms when available."""

    t: int
    u_t: float
    n_evals: int
    p_hat: float
    kappa_hat: float | None = None
    delta_hat: float | None = None
    acceptance: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "u_t": self.u_t,
            "n_evals": self.n_evals,
            "p_hat": self.p_hat,
            "kappa_hat": self.kappa_hat,
            "delta_hat": self.delta_hat,
            "acceptance": [float(a) for a in self.acceptance],
        }


@dataclass
class EstimationResult:
    """Final estimate plus the stage history and the evaluation ledger summary."""

    method: str
    alpha_hat: float
    delta_hat: float | None = None
    std_err: float | None = None
    stages: list[StageRecord] = field(default_factory=list)
    n_total: int = 0
    n_reported: float = 0.0
    n_initial: int = 0
    n_intermediate: int = 0
    n_final: int = 0
    degenerate: bool = False
    error: str | None = None
    underflow_floors: int = 0
    ledger: EvaluationLedger | None = None
    trace: list[dict] | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha_hat": self.alpha_hat,
            "delta_hat": self.delta_hat,
            "std_err": self.std_err,
            "n_total": self.n_total,
            "n_reported": self.n_reported,
            "n_initial": self.n_initial,
            "n_intermediate": self.n_intermediate,
            "n_final": self.n_final,
            "degenerate": self.degenerate,
            "error": self.error,
            "underflow_floors": self.underflow_floors,
            "stages": [s.to_dict() for s in self.stages],
        }


def _path_word(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("integer path components must be non-negative")
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root_seed: int, *path) -> np.random.Generator:
    """Derive an independently seeded generator from a root seed and a name path.

    Streams for different paths are statistically independent; adding a new
    named consumer never perturbs the draws of existing ones. String parts
    are hashed, integer parts (run indices) are used directly.
    """
    key = tuple(_path_word(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(root_seed), spawn_key=key))
