"""
Nested Monte Carlo estimation of zeta1 = sqrt(2 Var0(g(X))) for black-box
models.

Each section draws K outer values X_k and n inner draws of S_h given X_k
(or of the randomized-horizon estimator for random horizons), and turns the
K x n matrix into an unbiased estimate of Var(E[H | X]) with the one-way
ANOVA decomposition. Sections are combined with the delta method and a
Student-t interval.
"""
import dataclasses
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt
import quivr as qv
from scipy import stats

from .cost import CostSpec, RandomizedHorizonConfig
from .errors import ValidationError
from .model import stream_rng
from .parallel import run_tasks
from .symmetrize import Model, as_sampler, conditional_sample, cost_sample

logger = logging.getLogger("nestedmc")

InnerSampler = Callable[[float, np.random.Generator], float]


@dataclasses.dataclass(frozen=True)
class NestedDesign:
    K: int = 30
    n: int = 10
    N: int = 20
    confidence: float = 0.95

    def __post_init__(self):
        if self.K < 2 or self.n < 2 or self.N < 2:
            raise ValidationError(f"design needs K, n, N >= 2, got K={self.K}, n={self.n}, N={self.N}")
        if not 0 < self.confidence < 1:
            raise ValidationError(f"confidence must be in (0, 1), got {self.confidence}")


@dataclasses.dataclass
class SectionedEstimate:
    point: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    raw_sections: List[float]
    clamped: bool = False

    @property
    def stderr(self) -> float:
        """Delta-method standard error of the point estimate."""
        z = np.asarray(self.raw_sections)
        mean = float(z.mean())
        if mean <= 0:
            return math.nan
        return math.sqrt(2.0) * float(z.std(ddof=1)) / (2.0 * math.sqrt(mean) * math.sqrt(z.size))

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["stderr"] = None if self.clamped else self.stderr
        return out


def anova_sigma_m2(H: npt.ArrayLike) -> Tuple[float, float]:
    """
    (sigma_M^2, sigma_eps^2) from a K x n matrix of inner samples.

    sigma_eps^2 is the pooled within-row variance; sigma_M^2 is the variance
    of the row means less sigma_eps^2 / n, and may be negative.
    """
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 2 or H.shape[1] < 2:
        raise ValidationError(f"need a K x n matrix with K, n >= 2, got shape {H.shape}")
    K, n = H.shape
    row_means = H.mean(axis=1)
    sigma_eps2 = float(((H - row_means[:, None]) ** 2).sum() / (K * (n - 1)))
    sigma_m2 = float(((row_means - row_means.mean()) ** 2).sum() / (K - 1) - sigma_eps2 / n)
    return sigma_m2, sigma_eps2


def section_matrix(
    model: Model,
    cost: CostSpec,
    design: NestedDesign,
    seed: int,
    stream: int,
    horizon_config: Optional[RandomizedHorizonConfig] = None,
    inner: Optional[InnerSampler] = None,
) -> npt.NDArray[np.float64]:
    rng = stream_rng(seed, stream)
    outer = as_sampler(model).draw(rng, design.K)
    H = np.empty((design.K, design.n))
    for k, x in enumerate(outer):
        for j in range(design.n):
            if inner is not None:
                H[k, j] = inner(float(x), rng)
            else:
                H[k, j] = conditional_sample(model, cost, float(x), rng, horizon_config)
    return H


def section_value(
    model: Model,
    cost: CostSpec,
    design: NestedDesign,
    seed: int,
    stream: int,
    horizon_config: Optional[RandomizedHorizonConfig] = None,
    inner: Optional[InnerSampler] = None,
) -> float:
    return anova_sigma_m2(section_matrix(model, cost, design, seed, stream, horizon_config, inner))[0]


def combine_sections(sections: Sequence[float], confidence: float) -> SectionedEstimate:
    z = np.asarray(sections, dtype=np.float64)
    N = z.size
    mean = float(z.mean())
    if mean <= 0:
        logger.warning(f"mean section value {mean:.3e} is not positive; reporting a clamped zero estimate")
        return SectionedEstimate(0.0, None, None, z.tolist(), clamped=True)
    sigma = float(z.std(ddof=1))
    quantile = float(stats.t.ppf(0.5 + confidence / 2.0, N - 1))
    root = math.sqrt(mean)
    half = sigma / (2.0 * root) * quantile / math.sqrt(N)
    return SectionedEstimate(
        point=math.sqrt(2.0) * root,
        ci_low=math.sqrt(2.0) * (root - half),
        ci_high=math.sqrt(2.0) * (root + half),
        raw_sections=z.tolist(),
    )


def sectioned_zeta1(
    model: Model,
    cost: CostSpec,
    design: NestedDesign = NestedDesign(),
    seed: int = 0,
    stream_offset: int = 0,
    max_processes: Optional[int] = None,
    horizon_config: Optional[RandomizedHorizonConfig] = None,
    inner: Optional[InnerSampler] = None,
) -> SectionedEstimate:
    """
    Section l uses random stream ``stream_offset + l``; results are combined
    in section order whatever the number of processes.
    """
    logger.info(f"running {design.N} sections of {design.K} x {design.n} inner samples")
    tasks = [
        (model, cost, design, seed, stream_offset + section, horizon_config, inner) for section in range(design.N)
    ]
    sections = run_tasks(section_value, tasks, max_processes)
    estimate = combine_sections(sections, design.confidence)
    logger.info(f"zeta1 estimate {estimate.point:.6g} ({estimate.ci_low}, {estimate.ci_high})")
    return estimate


class PilotTable(qv.Table):
    inner = qv.Int64Column()
    point = qv.Float64Column()
    stderr = qv.Float64Column(nullable=True)
    ci_low = qv.Float64Column(nullable=True)
    ci_high = qv.Float64Column(nullable=True)
    evaluations = qv.Int64Column()


def pilot(
    model: Model,
    cost: CostSpec,
    n_grid: Sequence[int],
    design: NestedDesign = NestedDesign(),
    seed: int = 0,
    max_processes: Optional[int] = None,
    horizon_config: Optional[RandomizedHorizonConfig] = None,
) -> PilotTable:
    """Sectioned estimates for each inner sample size in ``n_grid``."""
    if len(n_grid) == 0:
        raise ValidationError("pilot needs at least one inner sample size")
    rows = []
    for i, n in enumerate(n_grid):
        trial = dataclasses.replace(design, n=int(n))
        estimate = sectioned_zeta1(
            model, cost, trial, seed, stream_offset=i * trial.N, max_processes=max_processes, horizon_config=horizon_config
        )
        rows.append((int(n), estimate, trial.K * trial.n * trial.N))
    return PilotTable.from_kwargs(
        inner=[n for n, _, _ in rows],
        point=[e.point for _, e, _ in rows],
        stderr=[None if e.clamped else e.stderr for _, e, _ in rows],
        ci_low=[e.ci_low for _, e, _ in rows],
        ci_high=[e.ci_high for _, e, _ in rows],
        evaluations=[c for _, _, c in rows],
    )


@dataclasses.dataclass(frozen=True)
class MeanInterval:
    mean: float
    ci_low: float
    ci_high: float
    stderr: float
    samples: int


def benchmark_estimate(
    model: Model, cost: CostSpec, samples: int, confidence: float = 0.95, seed: int = 0, stream: int = 0
) -> MeanInterval:
    """Plain Monte Carlo mean of h under the benchmark model with a Student-t interval."""
    if samples < 2:
        raise ValidationError(f"need at least two samples for an interval, got {samples}")
    rng = stream_rng(seed, stream)
    values = np.array([cost_sample(model, cost, rng) for _ in range(samples)])
    return mean_interval(values, confidence)


def mean_interval(values: npt.ArrayLike, confidence: float = 0.95) -> MeanInterval:
    if not 0 < confidence < 1:
        raise ValidationError(f"confidence must be in (0, 1), got {confidence}")
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValidationError(f"need at least two samples for an interval, got {v.size}")
    mean = float(v.mean())
    stderr = float(v.std(ddof=1)) / math.sqrt(v.size)
    half = float(stats.t.ppf(0.5 + confidence / 2.0, v.size - 1)) * stderr
    return MeanInterval(mean, mean - half, mean + half, stderr, int(v.size))
