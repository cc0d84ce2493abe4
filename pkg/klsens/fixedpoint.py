"""
Optimal change of measure for a fixed horizon on a finite support.

For T > 1 the worst-case likelihood ratio L* over KL(P_f || P0) <= eta is the
fixed point of

    K(L)(x) = exp(g^L(x) / alpha) / E0[exp(g^L(X) / alpha)],
    g^L(x) = sum_t E0[h prod_{r != t} L(X_r) | X_t = x],

which is a contraction for large enough alpha. ``calibrate_alpha`` picks
alpha so that E0[L* log L*] = eta.
"""
import dataclasses
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np
import numpy.typing as npt
from scipy import optimize, special

from .config import DefaultConfig
from .cost import CostSpec
from .errors import ContractionError, DegeneracyError, NumericRangeError, RegimeError, ValidationError
from .model import FiniteDistribution
from .product_space import conditional_on_axis, contract, cost_tensor

logger = logging.getLogger("fixedpoint")


@dataclasses.dataclass(frozen=True, eq=False)
class LikelihoodVector:
    weights: npt.NDArray[np.float64]

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.ndim != 1:
            raise ValidationError("likelihood weights must be a 1-d vector")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("likelihood weights must be finite and nonnegative")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def ones(cls, n: int) -> "LikelihoodVector":
        return cls(np.ones(n))

    def mean(self, probs: npt.ArrayLike) -> float:
        return float(np.dot(probs, self.weights))

    def kl(self, probs: npt.ArrayLike) -> float:
        """E0[L log L]."""
        return max(float(np.dot(probs, special.xlogy(self.weights, self.weights))), 0.0)


@dataclasses.dataclass
class FixedPointSolution:
    L_star: LikelihoodVector
    alpha: float
    kl: float
    objective: float
    iterations: int
    residual: float
    residuals: List[float] = dataclasses.field(default_factory=list)

    def contraction_factor(self) -> Optional[float]:
        r = [x for x in self.residuals if x > 0]
        if len(r) < 2:
            return None
        return float(np.exp(np.polyfit(np.arange(len(r)), np.log(r), 1)[0]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "L_star": self.L_star.weights.tolist(),
            "alpha": self.alpha,
            "kl": self.kl,
            "objective": self.objective,
            "iterations": self.iterations,
            "residual": self.residual,
            "contraction_factor": self.contraction_factor(),
        }


def _tensor(model: FiniteDistribution, cost: CostSpec, H: Optional[np.ndarray]) -> np.ndarray:
    if H is not None:
        return H
    if cost.horizon.is_random:
        raise ValidationError("the fixed-point method needs a fixed horizon")
    return cost_tensor(model, cost)


def g_of_L(H: np.ndarray, probs: np.ndarray, L: np.ndarray) -> npt.NDArray[np.float64]:
    weights = [probs * L] * H.ndim
    return sum((conditional_on_axis(H, weights, t) for t in range(H.ndim)), np.zeros(probs.size))


def _K(H: np.ndarray, probs: np.ndarray, L: np.ndarray, alpha: float) -> npt.NDArray[np.float64]:
    z = g_of_L(H, probs, L) / alpha
    if not np.all(np.isfinite(z)):
        raise NumericRangeError(f"g^L / alpha is not finite at alpha={alpha}")
    e = np.exp(z - z[probs > 0].max())
    norm = float(np.dot(probs, e))
    if not norm > 0 or not math.isfinite(norm):
        raise NumericRangeError(f"normalizing constant {norm} out of range at alpha={alpha}")
    return e / norm


def objective_value(H: np.ndarray, probs: np.ndarray, L: np.ndarray) -> float:
    """E0[h prod_t L(X_t)]."""
    return float(contract(H, [probs * L] * H.ndim))


def apply_K(
    L: LikelihoodVector, alpha: float, model: FiniteDistribution, cost: CostSpec, H: Optional[np.ndarray] = None
) -> LikelihoodVector:
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    if L.weights.size != len(model):
        raise ValidationError(f"{L.weights.size} likelihood weights for {len(model)} atoms")
    return LikelihoodVector(_K(_tensor(model, cost, H), model.probs, L.weights, alpha))


def _l1(probs: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(probs, np.abs(a - b)))


def solve_fixed_point(
    model: FiniteDistribution,
    cost: CostSpec,
    alpha: float,
    start: Optional[LikelihoodVector] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    H: Optional[np.ndarray] = None,
) -> FixedPointSolution:
    """Iterate K from ``start`` (all ones by default) until the L1 residual is at most ``tol``."""
    if not alpha > 0:
        raise ValidationError(f"alpha must be positive, got {alpha}")
    tol = DefaultConfig.fixed_point_tol if tol is None else tol
    max_iter = DefaultConfig.fixed_point_max_iter if max_iter is None else max_iter
    window = DefaultConfig.contraction_window
    H = _tensor(model, cost, H)
    p = model.probs
    L = np.ones(len(model)) if start is None else start.weights
    if L.size != p.size:
        raise ValidationError(f"{L.size} likelihood weights for {p.size} atoms")

    residuals: List[float] = []
    iterations = 0
    if H.ndim == 1:
        # K does not depend on L
        L = _K(H, p, L, alpha)
        iterations = 1
    else:
        while iterations < max_iter:
            nxt = _K(H, p, L, alpha)
            residuals.append(_l1(p, nxt, L))
            L = nxt
            iterations += 1
            logger.debug(f"alpha={alpha:.6g} iteration {iterations}: residual {residuals[-1]:.3e}")
            if residuals[-1] <= tol:
                break
            if len(residuals) > window:
                recent = residuals[-window - 1 :]
                if all(b >= a for a, b in zip(recent, recent[1:])):
                    factor = recent[-1] / recent[-2] if recent[-2] > 0 else math.inf
                    logger.warning(f"residuals stopped decreasing at alpha={alpha:.6g} (factor {factor:.3g})")
                    raise ContractionError(
                        f"K is not contracting at alpha={alpha:.6g}: {window} non-decreasing residuals",
                        factor,
                        iterations,
                    )
        else:
            raise ContractionError(
                f"no convergence at alpha={alpha:.6g} after {max_iter} iterations",
                residuals[-1] / residuals[-2] if len(residuals) > 1 and residuals[-2] > 0 else math.nan,
                iterations,
            )

    residual = _l1(p, _K(H, p, L, alpha), L)
    solution = LikelihoodVector(L)
    return FixedPointSolution(
        L_star=solution,
        alpha=float(alpha),
        kl=solution.kl(p),
        objective=objective_value(H, p, L),
        iterations=iterations,
        residual=residual,
        residuals=residuals,
    )


def calibrate_alpha(
    model: FiniteDistribution,
    cost: CostSpec,
    eta: float,
    tol: float = 1e-10,
    H: Optional[np.ndarray] = None,
) -> FixedPointSolution:
    """
    Fixed point whose KL divergence from the benchmark is ``eta``: root of
    kl(alpha) - eta in log alpha, bracketed from alpha0 = 10 (sup h - inf h).
    """
    if eta < 0 or not math.isfinite(eta):
        raise ValidationError(f"eta must be a finite nonnegative number, got {eta}")
    H = _tensor(model, cost, H)
    p = model.probs
    if eta == 0:
        ones = np.ones(len(model))
        return FixedPointSolution(LikelihoodVector(ones), math.inf, 0.0, objective_value(H, p, ones), 0, 0.0)
    spread = float(H.max() - H.min())
    if spread <= DefaultConfig.degeneracy_tol:
        raise DegeneracyError(f"h is constant (range {spread:.3e})", "h(X) non-constant under P0")

    solved: Dict[float, FixedPointSolution] = {}
    warm: List[Optional[LikelihoodVector]] = [None]

    def solve(log_alpha: float) -> FixedPointSolution:
        if log_alpha not in solved:
            try:
                solution = solve_fixed_point(model, cost, math.exp(log_alpha), start=warm[0], H=H)
            except (ContractionError, NumericRangeError) as exc:
                raise RegimeError(
                    f"eta={eta} is outside the fixed-point regime: no contraction at alpha={math.exp(log_alpha):.6g}"
                ) from exc
            solved[log_alpha] = solution
            warm[0] = solution.L_star
        return solved[log_alpha]

    def excess(log_alpha: float) -> float:
        return solve(log_alpha).kl - eta

    lo = hi = math.log(10.0 * spread)
    if excess(hi) > 0:
        while excess(hi) > 0:
            lo, hi = hi, hi + math.log(2.0)
            logger.debug(f"raising alpha bracket to {math.exp(hi):.6g}")
    else:
        while excess(lo) < 0:
            lo, hi = lo - math.log(2.0), lo
            logger.debug(f"lowering alpha bracket to {math.exp(lo):.6g}")
    if lo == hi:
        return solve(hi)

    log_alpha = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)

    trace = sorted((a, s.kl) for a, s in solved.items())
    if any(b[1] > a[1] + 1e-12 for a, b in zip(trace, trace[1:])):
        raise RegimeError(f"KL is not monotone in alpha along the fixed points for eta={eta}")

    solution = solve(log_alpha)
    if abs(solution.kl - eta) > tol:
        raise RegimeError(f"calibration reached kl={solution.kl:.12g} for eta={eta}")
    logger.info(f"calibrated alpha={solution.alpha:.6g} for eta={eta} in {len(solved)} solves")
    return solution


def quadratic_terms(
    model: FiniteDistribution, cost: CostSpec, H: Optional[np.ndarray] = None
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """
    (g, V) with W(x) = sum_t sum_{r != t} E0[h (g(X_r) - E0 g) | X_t = x] and
    V = W - E0 W + ((g - E0 g)^2 - Var0 g) / 2.
    """
    H = _tensor(model, cost, H)
    p = model.probs
    T = H.ndim
    g = g_of_L(H, p, np.ones(p.size))
    gc = g - np.dot(p, g)
    W = np.zeros(p.size)
    for t in range(T):
        for r in range(T):
            if r == t:
                continue
            weights: List[Optional[np.ndarray]] = [p] * T
            weights[r] = p * gc
            weights[t] = None
            W += contract(H, weights, keep=(t,))
    V = W - np.dot(p, W) + 0.5 * (gc**2 - np.dot(p, gc**2))
    return g, V


def quadratic_approx(
    model: FiniteDistribution, cost: CostSpec, beta: float, H: Optional[np.ndarray] = None
) -> npt.NDArray[np.float64]:
    """1 + beta (g - E0 g) + beta^2 V, the expansion of L* in beta = 1 / alpha."""
    g, V = quadratic_terms(model, cost, H)
    return 1.0 + beta * (g - np.dot(model.probs, g)) + beta**2 * V
