import dataclasses
import logging
import math
from typing import Any, Callable, Dict, Literal, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy import optimize, special

from .config import DefaultConfig
from .errors import DegeneracyError, NumericRangeError, ValidationError
from .model import FiniteDistribution, cumulants, validate_probs

logger = logging.getLogger("klsens")

Sense = Literal["max", "min"]
CostValues = Union[Callable[[float], float], npt.ArrayLike]

NONDEGENERACY = "h(X) non-degenerate (non-constant) under P0"


@dataclasses.dataclass(frozen=True)
class TiltSolution:
    beta_star: float
    eta: float
    optimum: float
    psi_at_beta: float
    sense: str = "max"
    saturated: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def tabulate(dist: FiniteDistribution, h: CostValues) -> npt.NDArray[np.float64]:
    if callable(h):
        return dist.evaluate(h)
    values = np.asarray(h, dtype=np.float64)
    if values.shape != dist.probs.shape:
        raise ValidationError(f"{values.size} cost values for {len(dist)} atoms")
    return values


def _tilted(h_values: np.ndarray, probs: np.ndarray, beta: float) -> Tuple[float, np.ndarray]:
    support = probs > 0
    z = beta * h_values[support] + np.log(probs[support])
    psi = float(special.logsumexp(z))
    if not math.isfinite(psi):
        raise NumericRangeError(f"log moment generating function overflows at beta={beta}")
    weights = np.zeros_like(probs)
    weights[support] = np.exp(z - psi)
    return psi, weights


def log_mgf(h_values: npt.ArrayLike, probs: npt.ArrayLike, beta: float) -> Tuple[float, float]:
    """
    psi(beta) = log E0[exp(beta h)] and its derivative psi'(beta), the mean of
    h under the exponentially tilted measure. Evaluated with a max shift.
    """
    h = np.asarray(h_values, dtype=np.float64)
    p = validate_probs(probs)
    psi, weights = _tilted(h, p, beta)
    return psi, float(np.dot(weights, h))


def _psi_second(h: np.ndarray, p: np.ndarray, beta: float) -> float:
    _, weights = _tilted(h, p, beta)
    m = np.dot(weights, h)
    return float(np.dot(weights, (h - m) ** 2))


def solve_tilt(dist: FiniteDistribution, h: CostValues, eta: float, sense: Sense = "max") -> TiltSolution:
    """
    Worst/best-case value of E_f[h(X)] over D(f || P0) <= eta.

    Solves beta psi'(beta) - psi(beta) = eta on the positive branch (max) or
    the negative branch (min). The optimum is psi'(beta*).
    """
    if sense not in ("max", "min"):
        raise ValidationError(f"sense must be 'max' or 'min', got {sense!r}")
    if eta < 0 or not math.isfinite(eta):
        raise ValidationError(f"eta must be a finite nonnegative number, got {eta}")
    values = tabulate(dist, h)
    if sense == "min":
        flipped = solve_tilt(dist, -values, eta, "max")
        return TiltSolution(
            beta_star=-flipped.beta_star,
            eta=flipped.eta,
            optimum=-flipped.optimum,
            psi_at_beta=flipped.psi_at_beta,
            sense="min",
            saturated=flipped.saturated,
        )

    p = dist.probs
    moments = cumulants(values, p)
    if eta == 0:
        return TiltSolution(0.0, 0.0, moments.mean, 0.0, "max")
    if moments.variance <= DefaultConfig.degeneracy_tol:
        raise DegeneracyError(
            f"Var0(h) = {moments.variance:.3e}; no ascent direction exists", NONDEGENERACY
        )

    support = p > 0
    top = values[support].max()
    scale = max(1.0, abs(top))
    top_mass = p[support & (values >= top - 1e-12 * scale)].sum()
    eta_max = -math.log(top_mass)
    if eta >= eta_max:
        logger.warning(
            f"eta={eta} reaches the finite-support limit {eta_max:.6g}; "
            f"all mass moves to the maximum of h"
        )
        return TiltSolution(math.inf, eta_max, float(top), math.inf, "max", saturated=True)

    def residual(beta: float) -> float:
        psi, weights = _tilted(values, p, beta)
        return beta * float(np.dot(weights, values)) - psi - eta

    hi = math.sqrt(2.0 * eta / moments.variance)
    while residual(hi) <= 0:
        hi *= 2.0
        logger.debug(f"expanding tilt bracket to {hi}")
    beta = optimize.brentq(residual, 0.0, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)

    # Newton polish on the residual; derivative is beta * psi''(beta)
    for _ in range(3):
        r = residual(beta)
        slope = beta * _psi_second(values, p, beta)
        if abs(r) <= 1e-15 or slope <= 0:
            break
        candidate = beta - r / slope
        if candidate <= 0 or abs(residual(candidate)) >= abs(r):
            break
        beta = candidate

    psi, optimum = log_mgf(values, p, beta)
    return TiltSolution(float(beta), float(eta), optimum, psi, "max")


def expansion1d(dist: FiniteDistribution, h: CostValues) -> Tuple[float, float]:
    """zeta1 = sqrt(2 Var0(h)), zeta2 = kappa3(h) / (3 Var0(h))."""
    moments = cumulants(tabulate(dist, h), dist.probs)
    if moments.variance <= DefaultConfig.degeneracy_tol:
        raise DegeneracyError(f"Var0(h) = {moments.variance:.3e}", NONDEGENERACY)
    return math.sqrt(2.0 * moments.variance), moments.kappa3 / (3.0 * moments.variance)


def second_order_moment_form(dist: FiniteDistribution, h: CostValues) -> float:
    """
    The second-order derivative 2*zeta2 written with raw moments,
    (2/3 E h^3 - 2 E h E h^2 + 4/3 (E h)^3) / Var h.
    """
    values = tabulate(dist, h)
    m1 = dist.expect(values)
    m2 = dist.expect(values**2)
    m3 = dist.expect(values**3)
    variance = m2 - m1**2
    if variance <= DefaultConfig.degeneracy_tol:
        raise DegeneracyError(f"Var0(h) = {variance:.3e}", NONDEGENERACY)
    return (2.0 / 3.0 * m3 - 2.0 * m1 * m2 + 4.0 / 3.0 * m1**3) / variance


def dual_objective(dist: FiniteDistribution, h: CostValues, alpha: float, eta: float) -> float:
    """alpha psi(1/alpha) + alpha eta; minimized over alpha > 0 at 1/beta*."""
    if alpha <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    psi, _ = log_mgf(tabulate(dist, h), dist.probs, 1.0 / alpha)
    return alpha * psi + alpha * eta
