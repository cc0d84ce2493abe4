"""
Symmetrization objects entering the nonparametric derivatives.

Fixed horizons: the swap sum S_h, g(x) = sum_t E0[h | X_t = x], the pair
function G(x, y) = sum_t sum_{s != t} E0[h | X_t = x, X_s = y] and the
centered triple product nu. Random horizons: the indicator-weighted analogues
g-tilde, G-tilde and nu-tilde, estimated by the randomized-horizon scheme or
computed exactly by :class:`klsens.chain.StateChain`.
"""
import dataclasses
import itertools
import logging
import math
from typing import Optional, Tuple, Union

import numpy as np
import numpy.typing as npt

from .chain import StateChain, choose_t_cut, tail_bounds
from .config import DefaultConfig
from .cost import CostSpec, RandomizedHorizonConfig, TimeLaw
from .errors import BiasError, BudgetError, ValidationError
from .model import FiniteDistribution, StochasticModel, stream_rng
from .product_space import (
    conditional_on_axis,
    conditional_on_pair,
    cost_tensor,
    swap_sum_tensor,
)

logger = logging.getLogger("klsens")

Model = Union[FiniteDistribution, StochasticModel]


@dataclasses.dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    count: int


@dataclasses.dataclass(frozen=True)
class RandomHorizonExact:
    """Truncated exact random-horizon sums with their tail bounds."""

    g: npt.NDArray[np.float64]
    G: Optional[npt.NDArray[np.float64]]
    nu: Optional[float]
    mean: float
    t_cut: int
    g_tail_bound: float
    G_tail_bound: float


def as_sampler(model: Model) -> StochasticModel:
    if isinstance(model, FiniteDistribution):
        return StochasticModel.finite(model)
    return model


def _fixed(cost: CostSpec) -> int:
    if cost.horizon.is_random:
        raise ValidationError("this computation needs a fixed horizon; use the randomized-horizon variants")
    return cost.T


def s_h(cost: CostSpec, path: npt.ArrayLike, aux: Optional[np.ndarray] = None) -> float:
    """Sum over t of h with coordinates 1 and t of ``path`` swapped."""
    T = _fixed(cost)
    x = np.asarray(path, dtype=np.float64)
    if x.shape != (T,):
        raise ValidationError(f"path of length {x.size} for a horizon of {T}")
    if cost.swap_sum is not None:
        return float(cost.swap_sum(x) if cost.auxiliary is None else cost.swap_sum(x, aux))
    if cost.symmetric:
        return T * cost.evaluate(x, aux)
    total = cost.evaluate(x, aux)
    for t in range(1, T):
        swapped = x.copy()
        swapped[0], swapped[t] = x[t], x[0]
        total += cost.evaluate(swapped, aux)
    return total


def _components(H: np.ndarray, probs: np.ndarray) -> npt.NDArray[np.float64]:
    weights = [probs] * H.ndim
    return np.stack([conditional_on_axis(H, weights, t) for t in range(H.ndim)])


def _pairs(H: np.ndarray, probs: np.ndarray) -> npt.NDArray[np.float64]:
    T, n = H.ndim, probs.size
    weights = [probs] * T
    out = np.zeros((T, T, n, n))
    for t, s in itertools.permutations(range(T), 2):
        out[t, s] = conditional_on_pair(H, weights, t, s)
    return out


def g_components(model: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None) -> npt.NDArray[np.float64]:
    """Matrix whose row t is x -> E0[h | X_t = x]."""
    _fixed(cost)
    return _components(cost_tensor(model, cost, budget), model.probs)


def g_exact(model: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None) -> npt.NDArray[np.float64]:
    """g over the atoms of ``model``, by enumeration of the product support."""
    return g_components(model, cost, budget).sum(axis=0)


def g_by_swaps(model: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None) -> npt.NDArray[np.float64]:
    """x -> E0[S_h | X_1 = x], enumerated from the swap-sum tensor."""
    T = _fixed(cost)
    S = swap_sum_tensor(cost_tensor(model, cost, budget))
    return conditional_on_axis(S, [model.probs] * T, 0)


def centered_triple(probs: npt.ArrayLike, G: np.ndarray, g: np.ndarray) -> float:
    """E[(G(X, Y) - E G)(g(X) - E g)(g(Y) - E g)] over independent X, Y."""
    p = np.asarray(probs, dtype=np.float64)
    c = p * (g - np.dot(p, g))
    return float(c @ (G - p @ G @ p) @ c)


def pair_terms(model: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None) -> npt.NDArray[np.float64]:
    """Array ``P[t, s]`` of (x, y) -> E0[h | X_t = x, X_s = y], zero on the diagonal."""
    _fixed(cost)
    return _pairs(cost_tensor(model, cost, budget), model.probs)


def G_nu_exact(
    model: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None
) -> Tuple[npt.NDArray[np.float64], float]:
    _fixed(cost)
    H = cost_tensor(model, cost, budget)
    G = _pairs(H, model.probs).sum(axis=(0, 1))
    g = _components(H, model.probs).sum(axis=0)
    return G, centered_triple(model.probs, G, g)


def G_lower_triangle(model: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None) -> npt.NDArray[np.float64]:
    """2 * sum over s < t of (x, y) -> E0[h | X_t = x, X_s = y]."""
    pairs = pair_terms(model, cost, budget)
    T = pairs.shape[0]
    return 2.0 * sum((pairs[t, s] for t in range(T) for s in range(t)), np.zeros(pairs.shape[2:]))


def integrate_auxiliary(cost: CostSpec, aux_dist: FiniteDistribution, budget: Optional[int] = None) -> CostSpec:
    """The cost x -> E0[h(x, Y)] for a finite auxiliary distribution."""
    if cost.auxiliary is None:
        return cost
    if budget is None:
        budget = DefaultConfig.enumeration_budget
    L = cost.aux_length
    combos = len(aux_dist) ** L
    if combos > budget:
        raise BudgetError(f"{combos} auxiliary combinations exceed the enumeration budget {budget}", combos, budget)
    index = np.array(list(itertools.product(range(len(aux_dist)), repeat=L)), dtype=np.int64).reshape(combos, L)
    aux_values = aux_dist.atoms[index]
    aux_weights = np.prod(aux_dist.probs[index], axis=1)
    h = cost.h
    swap_sum = cost.swap_sum

    def integrated(path: np.ndarray) -> float:
        return float(sum(w * h(path, y) for w, y in zip(aux_weights, aux_values)))

    def integrated_swaps(path: np.ndarray) -> float:
        assert swap_sum is not None
        return float(sum(w * swap_sum(path, y) for w, y in zip(aux_weights, aux_values)))

    return dataclasses.replace(
        cost,
        h=integrated,
        auxiliary=None,
        aux_length=0,
        sequential=None,
        swap_sum=None if swap_sum is None else integrated_swaps,
    )


def _validate_budget(budget: int):
    if budget < 1:
        raise ValidationError(f"sample budget must be positive, got {budget}")


def _summarize(samples: np.ndarray) -> MCEstimate:
    count = samples.size
    stderr = float(np.std(samples, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
    return MCEstimate(float(np.mean(samples)), stderr, int(count))


def fixed_horizon_sample(model: Model, cost: CostSpec, x: float, rng: np.random.Generator) -> float:
    """One draw of S_h with x in coordinate 1 and the rest drawn from the model."""
    T = _fixed(cost)
    path = np.empty(T)
    path[0] = x
    if T > 1:
        path[1:] = as_sampler(model).draw(rng, T - 1)
    return s_h(cost, path, cost.draw_aux(rng))


def g_nested_mc(model: Model, cost: CostSpec, x: float, budget: int, seed: int, stream: int = 0) -> MCEstimate:
    """Monte Carlo estimate of g(x) from ``budget`` draws of S_h given X_1 = x."""
    _validate_budget(budget)
    rng = stream_rng(seed, stream)
    samples = np.array([fixed_horizon_sample(model, cost, x, rng) for _ in range(budget)])
    return _summarize(samples)


def check_horizon_support(cost: CostSpec, law: TimeLaw):
    """Raise BiasError when R has no mass at a time tau can reach."""
    spec = cost.horizon
    if spec.mode == "bounded":
        tau_upper: Optional[int] = spec.t_max
        reachable = lambda k: k <= (spec.t_max or 0)  # noqa: E731
    else:
        assert spec.tau is not None
        tau_upper = spec.tau.upper
        reachable = lambda k: spec.tau.survival(k) > 0  # type: ignore[union-attr] # noqa: E731
    if law.upper is not None and (tau_upper is None or tau_upper > law.upper):
        raise BiasError(f"R is supported on 1..{law.upper} but tau reaches {tau_upper or 'infinity'}")
    limit = tau_upper if tau_upper is not None else law.upper
    if limit is None:
        return
    for k in range(1, limit + 1):
        if reachable(k) and law.pmf(k) <= 0:
            raise BiasError(f"R has no mass at {k} where P(tau >= {k}) > 0")


def simulate_path(
    model: Model, cost: CostSpec, rng: np.random.Generator, omega: Optional[int] = None, x: float = 0.0
) -> np.ndarray:
    """
    Draws X_1..X_tau (X_1..X_T for a fixed horizon), with X_omega set to x
    when ``omega`` is given and reached.
    """
    sampler = as_sampler(model)
    spec = cost.horizon
    if not spec.is_random or spec.mode == "independent":
        if spec.is_random:
            assert spec.tau is not None
            length = spec.tau.sample(rng)
        else:
            length = spec.T
        path = np.asarray(sampler.draw(rng, length), dtype=np.float64)
        if omega is not None and omega <= length:
            path[omega - 1] = x
        return path

    assert spec.t_max is not None
    sequential = cost.sequential
    state = sequential.init if sequential is not None else ()
    draws = np.asarray(sampler.draw(rng, spec.t_max), dtype=np.float64)
    for t in range(1, spec.t_max + 1):
        if t == omega:
            draws[t - 1] = x
        value = float(draws[t - 1])
        state = sequential.step(state, value) if sequential is not None else state + (value,)
        if spec.stop(state):
            break
    return draws[:t]


def cost_sample(model: Model, cost: CostSpec, rng: np.random.Generator) -> float:
    """One draw of h under the benchmark model."""
    aux = cost.draw_aux(rng)
    return cost.evaluate(simulate_path(model, cost, rng), aux)


def randomized_horizon_sample(
    model: Model, cost: CostSpec, law: TimeLaw, x: float, rng: np.random.Generator
) -> float:
    """
    One draw of the randomized-horizon estimator of g-tilde(x): R = omega with
    probability p_omega, X_omega fixed to x; 0 if tau < omega, else
    h(X_1..X_tau) / p_omega.
    """
    omega = law.sample(rng)
    p_omega = law.pmf(omega)
    aux = cost.draw_aux(rng)
    path = simulate_path(model, cost, rng, omega, x)
    if path.size < omega:
        return 0.0
    return cost.evaluate(path, aux) / p_omega


def _random_horizon(cost: CostSpec, config: RandomizedHorizonConfig):
    spec = cost.horizon
    if not spec.is_random:
        raise ValidationError("randomized-horizon estimation needs a random horizon")
    if spec.mode == "independent" and cost.bound is None:
        raise ValidationError("an independent random horizon needs a bounded cost (set CostSpec.bound)")
    check_horizon_support(cost, config.law)


def g_tilde(
    model: Model,
    cost: CostSpec,
    config: RandomizedHorizonConfig,
    x: float,
    budget: int,
    seed: int,
    stream: int = 0,
) -> MCEstimate:
    """Unbiased Monte Carlo estimate of g-tilde(x)."""
    _random_horizon(cost, config)
    _validate_budget(budget)
    rng = stream_rng(seed, stream)
    samples = np.array([randomized_horizon_sample(model, cost, config.law, x, rng) for _ in range(budget)])
    return _summarize(samples)


def conditional_sample(
    model: Model,
    cost: CostSpec,
    x: float,
    rng: np.random.Generator,
    horizon_config: Optional[RandomizedHorizonConfig] = None,
) -> float:
    """One draw whose conditional mean given x is g(x) (fixed horizon) or g-tilde(x)."""
    if not cost.horizon.is_random:
        return fixed_horizon_sample(model, cost, x, rng)
    config = horizon_config or RandomizedHorizonConfig()
    return randomized_horizon_sample(model, cost, config.law, x, rng)


def random_horizon_exact(
    model: FiniteDistribution,
    cost: CostSpec,
    config: Optional[RandomizedHorizonConfig] = None,
    pairs: bool = True,
    budget: Optional[int] = None,
) -> RandomHorizonExact:
    """
    g-tilde and, when ``pairs`` is set, G-tilde and nu-tilde over the atoms of
    ``model``, truncated at ``config.t_cut`` (or at the first horizon whose
    tail bound meets the tolerance).
    """
    config = config or RandomizedHorizonConfig()
    _random_horizon(cost, config)
    tolerance = DefaultConfig.tail_tolerance if config.tail_tolerance is None else config.tail_tolerance
    t_cut = config.t_cut if config.t_cut is not None else choose_t_cut(cost, tolerance, pairs=pairs)
    g_bound, G_bound = tail_bounds(cost, t_cut)
    if (G_bound if pairs else g_bound) > tolerance:
        raise BudgetError(
            f"truncation at {t_cut} leaves a tail bound of {G_bound if pairs else g_bound:.3e}",
            G_bound if pairs else g_bound,
            tolerance,
        )
    chain = StateChain(model, cost, t_cut, budget)
    g = chain.g_tilde()
    G = nu = None
    if pairs:
        H = chain.H_tilde()
        G = H + H.T
        nu = centered_triple(model.probs, G, g)
    logger.info(f"random-horizon sums truncated at {t_cut}: tail bounds {g_bound:.3e} (g), {G_bound:.3e} (G)")
    return RandomHorizonExact(g, G, nu, chain.mean(), chain.K, g_bound, G_bound)


def g_tilde_exact(
    model: FiniteDistribution, cost: CostSpec, config: Optional[RandomizedHorizonConfig] = None
) -> Tuple[npt.NDArray[np.float64], float]:
    """Truncated exact g-tilde and its tail bound."""
    result = random_horizon_exact(model, cost, config, pairs=False)
    return result.g, result.g_tail_bound


def G_tilde_nu_tilde(
    model: FiniteDistribution, cost: CostSpec, config: Optional[RandomizedHorizonConfig] = None
) -> Tuple[npt.NDArray[np.float64], float]:
    result = random_horizon_exact(model, cost, config, pairs=True)
    assert result.G is not None and result.nu is not None
    return result.G, result.nu
