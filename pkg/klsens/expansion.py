import dataclasses
import logging
import math
from typing import Any, Dict, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import quivr as qv
from scipy import integrate, stats

from .config import DefaultConfig
from .cost import CostSpec, RandomizedHorizonConfig
from .errors import DegeneracyError, ValidationError
from .model import FiniteDistribution, cumulants
from .symmetrize import G_nu_exact, g_exact, random_horizon_exact

logger = logging.getLogger("klsens")

REPORT_SCHEMA = "klsens-report/1"
NONDEGENERATE_G = "g(X) non-degenerate (non-constant) under P0"

ReportSense = Literal["max", "min", "both"]


@dataclasses.dataclass
class DerivativeReport:
    """
    First and second-order nonparametric derivatives around the benchmark.

    ``zeta1`` carries the sign of the sense (negative for "min");
    ``relative_impact`` is |zeta1| / |benchmark_mean| and is None when the
    benchmark is zero. Monte Carlo reports leave the second-order fields
    empty.
    """

    benchmark_mean: float
    zeta1: float
    zeta2: Optional[float]
    var_g: float
    kappa3_g: Optional[float]
    nu: Optional[float]
    sense: str = "max"
    relative_impact: Optional[float] = None
    ci: Dict[str, Tuple[float, float]] = dataclasses.field(default_factory=dict)
    clamped: bool = False

    @property
    def relative_impact_defined(self) -> bool:
        return self.relative_impact is not None

    def to_dict(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["ci"] = {key: list(value) for key, value in self.ci.items()}
        out["relative_impact_defined"] = self.relative_impact_defined
        out["schema"] = REPORT_SCHEMA
        return out


class SweepLine(qv.Table):
    """Approximation bands of the worst and best-case performance over eta."""

    eta = qv.Float64Column()
    lower = qv.Float64Column()
    upper = qv.Float64Column()
    benchmark = qv.Float64Column()


def relative_impact(zeta1: float, benchmark: float) -> Optional[float]:
    if benchmark == 0:
        return None
    return abs(zeta1) / abs(benchmark)


def derive(
    var_g: float,
    kappa3_g: float,
    nu: float,
    benchmark: float,
    sense: ReportSense = "max",
    degeneracy_tol: Optional[float] = None,
) -> DerivativeReport:
    """
    zeta1 = sqrt(2 Var0(g)), zeta2 = (kappa3(g) / 3 + nu) / Var0(g). The min
    sense flips the sign of zeta1 and keeps zeta2.
    """
    if sense not in ("max", "min", "both"):
        raise ValidationError(f"sense must be 'max', 'min' or 'both', got {sense!r}")
    if degeneracy_tol is None:
        degeneracy_tol = DefaultConfig.degeneracy_tol
    if var_g <= degeneracy_tol:
        raise DegeneracyError(f"Var0(g) = {var_g:.3e} is at or below {degeneracy_tol:.0e}", NONDEGENERATE_G)
    zeta1 = math.sqrt(2.0 * var_g)
    if sense == "min":
        zeta1 = -zeta1
    zeta2 = (kappa3_g / 3.0 + nu) / var_g
    return DerivativeReport(
        benchmark_mean=float(benchmark),
        zeta1=zeta1,
        zeta2=zeta2,
        var_g=float(var_g),
        kappa3_g=float(kappa3_g),
        nu=float(nu),
        sense=sense,
        relative_impact=relative_impact(zeta1, benchmark),
    )


def derive_exact(
    model: FiniteDistribution,
    cost: CostSpec,
    sense: ReportSense = "max",
    horizon_config: Optional[RandomizedHorizonConfig] = None,
    budget: Optional[int] = None,
) -> DerivativeReport:
    """Derivatives of a finite-support instance, by enumeration or the state chain."""
    if cost.horizon.is_random:
        exact = random_horizon_exact(model, cost, horizon_config, pairs=True, budget=budget)
        assert exact.nu is not None
        g, nu, benchmark = exact.g, exact.nu, exact.mean
    else:
        g = g_exact(model, cost, budget)
        _, nu = G_nu_exact(model, cost, budget)
        benchmark = model.expect(g) / cost.T
    moments = cumulants(g, model.probs)
    logger.info(f"benchmark {benchmark:.6g}, Var0(g) {moments.variance:.6g}, nu {nu:.6g}")
    return derive(moments.variance, moments.kappa3, nu, benchmark, sense)


def sweep(report: DerivativeReport, eta_grid: Sequence[float], order: int = 1) -> SweepLine:
    """
    upper = benchmark + |zeta1| sqrt(eta), lower = benchmark - |zeta1| sqrt(eta),
    both shifted by zeta2 * eta at order 2.
    """
    if order not in (1, 2):
        raise ValidationError(f"order must be 1 or 2, got {order}")
    if order == 2 and report.zeta2 is None:
        raise ValidationError("this report has no second-order coefficient")
    eta = np.asarray(eta_grid, dtype=np.float64).reshape(-1)
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValidationError("eta values must be finite and nonnegative")
    first = abs(report.zeta1) * np.sqrt(eta)
    second = report.zeta2 * eta if order == 2 and report.zeta2 is not None else np.zeros_like(eta)
    return SweepLine.from_kwargs(
        eta=eta,
        lower=report.benchmark_mean - first + second,
        upper=report.benchmark_mean + first + second,
        benchmark=np.full_like(eta, report.benchmark_mean),
    )


def sweep_to_csv(line: SweepLine, out_file: str):
    line.to_dataframe()[["eta", "lower", "upper", "benchmark"]].to_csv(out_file, index=False, float_format="%.10g")


@dataclasses.dataclass(frozen=True)
class DominanceReport:
    dominated: bool
    margin: float
    rescaled: float


def dominance_check(param_derivative: float, param_kl_rate: float, zeta1: float) -> DominanceReport:
    """
    Compare a parametric derivative, rescaled by d sqrt(KL)/d theta, with the
    nonparametric first-order derivative.
    """
    if not param_kl_rate > 0:
        raise ValidationError(f"rescaling rate must be positive, got {param_kl_rate}")
    rescaled = abs(param_derivative / param_kl_rate)
    margin = abs(zeta1) - rescaled
    return DominanceReport(margin >= -1e-12 * max(1.0, abs(zeta1)), margin, rescaled)


def gaussian_tail_g(x: Union[float, np.ndarray], y: float, T: int, sigma: float) -> Union[float, np.ndarray]:
    """g(x) for h = I(X_1 + ... + X_T > y) with i.i.d. N(0, sigma^2) draws."""
    if T == 1:
        return np.where(np.asarray(x) > y, 1.0, 0.0)
    return T * stats.norm.sf(y - np.asarray(x), scale=sigma * math.sqrt(T - 1))


def gaussian_tail_zeta1(y: float, T: int, sigma: float) -> float:
    """sqrt(2 Var(g(X))) for the Gaussian tail-probability cost, by quadrature."""
    pdf = stats.norm(scale=sigma).pdf
    lo, hi = -12 * sigma, y + 12 * sigma * math.sqrt(T)
    m1 = integrate.quad(lambda x: gaussian_tail_g(x, y, T, sigma) * pdf(x), lo, hi, limit=200)[0]
    m2 = integrate.quad(lambda x: gaussian_tail_g(x, y, T, sigma) ** 2 * pdf(x), lo, hi, limit=200)[0]
    return math.sqrt(2.0 * max(m2 - m1**2, 0.0))


def gaussian_tail_parametric(y: float, T: int, sigma: float) -> float:
    """
    Mean-shift derivative of P(X_1 + ... + X_T > y) rescaled by the rate of
    sqrt(KL) in the shift: sqrt(T / pi) exp(-y^2 / (2 T sigma^2)).
    """
    return math.sqrt(T / math.pi) * math.exp(-(y**2) / (2.0 * T * sigma**2))


def kl_for_rate_discrepancy(fraction: float) -> float:
    """KL divergence of an exponential model whose rate is off by ``fraction``, to leading order."""
    return fraction**2 / 2.0


def rate_discrepancy_for_kl(eta: float) -> float:
    if eta < 0:
        raise ValidationError(f"eta must be nonnegative, got {eta}")
    return math.sqrt(2.0 * eta)


def loglog_slope(x: npt.ArrayLike, y: npt.ArrayLike) -> float:
    """Least-squares slope of log|y| against log x."""
    xs = np.log(np.asarray(x, dtype=np.float64))
    ys = np.log(np.abs(np.asarray(y, dtype=np.float64)))
    return float(np.polyfit(xs, ys, 1)[0])
