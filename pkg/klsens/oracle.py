"""
Brute-force solver of max (or min) E_f[h(X_1, ..., X_T)] over product
measures f with KL(f || P0) <= eta, for small supports.

T = 1 is solved exactly by a scan of the tilt family. For T > 1 the marginal f is
parametrized as f = P0 e^theta / Z and searched with SLSQP from many starts;
the problem is not convex, so the result is the best of the restarts.
"""
import dataclasses
import logging
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import optimize, special

from .cost import CostSpec
from .errors import BudgetError, ValidationError
from .exact1d import Sense
from .model import FiniteDistribution, kl_divergence, stream_rng
from .product_space import conditional_on_axis, contract, cost_tensor

logger = logging.getLogger("klsens")

MAX_ATOMS = 8
MAX_HORIZON = 3
MIN_RESTARTS = 50


@dataclasses.dataclass
class OracleResult:
    optimum: float
    argmax: FiniteDistribution
    kl_at_opt: float
    method: str
    restarts: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "optimum": self.optimum,
            "argmax": self.argmax.to_dict(),
            "kl_at_opt": self.kl_at_opt,
            "method": self.method,
            "restarts": self.restarts,
        }


def _tilted(logp: np.ndarray, values: np.ndarray, beta: float) -> np.ndarray:
    z = logp + beta * values
    return np.exp(z - special.logsumexp(z))


def _tilt_scan(model: FiniteDistribution, values: np.ndarray, eta: float, sense: Sense) -> OracleResult:
    """
    Walk the tilt family f_b = p e^(b h) / Z, b >= 0 (h replaced by -h for
    the min sense), to its member at KL(f_b || p) = eta. KL is evaluated on
    f_b directly and is increasing in b, so the member is found by bisection.
    """
    p = model.probs
    support = p > 0
    h = values[support] if sense == "max" else -values[support]
    q = p[support]
    logp = np.log(q)
    top = float(h.max())
    at_top = np.isclose(h, top, rtol=0, atol=1e-12 * max(1.0, abs(top)))

    def kl(beta: float) -> float:
        return float(np.sum(special.rel_entr(_tilted(logp, h, beta), q)))

    if eta == 0 or at_top.all():
        f = q
    elif eta >= -math.log(q[at_top].sum()):
        f = np.where(at_top, q, 0.0)
    else:
        lo, hi = 0.0, 1.0 / (top - float(h.min()))
        while kl(hi) < eta:
            lo, hi = hi, 2.0 * hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if kl(mid) < eta:
                lo = mid
            else:
                hi = mid
        f = _tilted(logp, h, lo)
    full = np.zeros(len(model))
    full[support] = f
    argmax = FiniteDistribution(model.atoms, full / full.sum())
    return OracleResult(
        optimum=float(np.dot(argmax.probs, values)),
        argmax=argmax,
        kl_at_opt=kl_divergence(argmax, model),
        method="tilt-closed-form",
    )


class _ProductProgram:
    """max over theta of E_f[h] with f = p e^theta / Z on the support of p."""

    def __init__(self, H: np.ndarray, probs: np.ndarray, eta: float):
        self.support = probs > 0
        self.H = H[np.ix_(*[self.support] * H.ndim)]
        self.logp = np.log(probs[self.support])
        self.eta = eta

    def marginal(self, theta: np.ndarray) -> np.ndarray:
        z = self.logp + theta
        return np.exp(z - special.logsumexp(z))

    def value(self, f: np.ndarray) -> float:
        return float(contract(self.H, [f] * self.H.ndim))

    def value_grad(self, f: np.ndarray) -> np.ndarray:
        weights = [f] * self.H.ndim
        return sum((conditional_on_axis(self.H, weights, t) for t in range(self.H.ndim)), np.zeros(f.size))

    def kl(self, f: np.ndarray) -> float:
        return float(np.sum(special.rel_entr(f, np.exp(self.logp))))

    @staticmethod
    def _chain(f: np.ndarray, d: np.ndarray) -> np.ndarray:
        return f * (d - np.dot(f, d))

    def objective(self, theta: np.ndarray) -> float:
        return -self.value(self.marginal(theta))

    def objective_jac(self, theta: np.ndarray) -> np.ndarray:
        f = self.marginal(theta)
        return -self._chain(f, self.value_grad(f))

    def slack(self, theta: np.ndarray) -> float:
        return self.eta - self.kl(self.marginal(theta))

    def slack_jac(self, theta: np.ndarray) -> np.ndarray:
        f = self.marginal(theta)
        return -self._chain(f, np.log(f) - self.logp + 1.0)

    def restore(self, theta: np.ndarray) -> np.ndarray:
        """Largest c in [0, 1] with KL(f(c theta)) <= eta; KL increases in c."""
        if self.slack(theta) >= 0:
            return theta
        lo, hi = 0.0, 1.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if self.slack(mid * theta) >= 0:
                lo = mid
            else:
                hi = mid
        return lo * theta


def brute_force(
    model: FiniteDistribution,
    cost: CostSpec,
    eta: float,
    sense: Sense = "max",
    restarts: int = MIN_RESTARTS,
    seed: int = 0,
    warm_starts: Sequence[npt.ArrayLike] = (),
) -> OracleResult:
    """
    Best value of E_f[h] over KL(f || P0) <= eta. ``warm_starts`` are
    likelihood-ratio vectors (for instance fixed-point solutions) added to the
    restart set.
    """
    if eta < 0 or not math.isfinite(eta):
        raise ValidationError(f"eta must be a finite nonnegative number, got {eta}")
    if sense not in ("max", "min"):
        raise ValidationError(f"sense must be 'max' or 'min', got {sense!r}")
    if cost.horizon.is_random:
        raise ValidationError("the brute-force oracle needs a fixed horizon")
    n, T = len(model), cost.T
    if n > MAX_ATOMS or T > MAX_HORIZON:
        raise BudgetError(
            f"oracle instances are limited to {MAX_ATOMS} atoms and horizon {MAX_HORIZON}, got {n} and {T}",
            n**T,
            MAX_ATOMS**MAX_HORIZON,
        )
    H = cost_tensor(model, cost)
    if T == 1:
        return _tilt_scan(model, H, eta, sense)
    if eta == 0:
        return OracleResult(float(contract(H, [model.probs] * T)), model, 0.0, "simplex-search")

    sign = 1.0 if sense == "max" else -1.0
    program = _ProductProgram(sign * H, model.probs, eta)
    m = int(program.support.sum())
    rng = stream_rng(seed, 0)

    starts: List[np.ndarray] = [np.zeros(m)]
    for L in warm_starts:
        weights = np.asarray(L, dtype=np.float64)[program.support]
        starts.append(np.log(np.maximum(weights, 1e-300)))
    while len(starts) < max(restarts, MIN_RESTARTS) + 1 + len(warm_starts):
        starts.append(np.log(rng.dirichlet(np.ones(m))) - program.logp)

    best_value, best_theta = -math.inf, np.zeros(m)
    for theta0 in starts:
        theta0 = program.restore(theta0 - theta0.mean())
        result = optimize.minimize(
            program.objective,
            theta0,
            jac=program.objective_jac,
            method="SLSQP",
            constraints=[{"type": "ineq", "fun": program.slack, "jac": program.slack_jac}],
            options={"ftol": 1e-15, "maxiter": 500},
        )
        for theta in (program.restore(result.x), theta0):
            value = -program.objective(theta)
            if value > best_value:
                best_value, best_theta = value, theta
    logger.debug(f"oracle best value {sign * best_value:.12g} over {len(starts)} starts")

    f = np.zeros(n)
    f[program.support] = program.marginal(best_theta)
    argmax = FiniteDistribution(model.atoms, f)
    return OracleResult(
        optimum=sign * best_value,
        argmax=argmax,
        kl_at_opt=kl_divergence(argmax, model),
        method="simplex-search",
        restarts=len(starts),
    )
