"""
Exact computations over the product support of a fixed horizon.

The cost is tabulated once as a tensor ``H`` of shape ``(n,) * T`` whose entry
``H[i_1, ..., i_T]`` is h at atoms ``(i_1, ..., i_T)``. Conditional
expectations are then contractions of ``H`` against per-axis weight vectors.
"""
import itertools
import logging
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt

from .config import DefaultConfig
from .cost import CostSpec
from .errors import BudgetError, ValidationError
from .model import FiniteDistribution

logger = logging.getLogger("klsens")


def check_budget(n: int, T: int, budget: Optional[int] = None) -> int:
    if budget is None:
        budget = DefaultConfig.enumeration_budget
    states = n**T
    if states > budget:
        raise BudgetError(f"{n}^{T} = {states} product states exceed the enumeration budget {budget}", states, budget)
    return states


def cost_tensor(dist: FiniteDistribution, cost: CostSpec, budget: Optional[int] = None) -> npt.NDArray[np.float64]:
    if cost.horizon.is_random:
        raise ValidationError("product-space enumeration needs a fixed horizon")
    if cost.auxiliary is not None:
        raise ValidationError("integrate the auxiliary input out before exact computations")
    n, T = len(dist), cost.T
    states = check_budget(n, T, budget)
    logger.debug(f"tabulating h over {states} product states")
    atoms = dist.atoms
    values = np.fromiter(
        (cost.evaluate(atoms[np.asarray(idx)]) for idx in itertools.product(range(n), repeat=T)),
        dtype=np.float64,
        count=states,
    )
    return values.reshape((n,) * T)


def contract(
    H: np.ndarray, weights: Sequence[Optional[np.ndarray]], keep: Sequence[int] = ()
) -> npt.NDArray[np.float64]:
    """
    Sum ``H`` against ``weights[r]`` along every axis r not in ``keep``; the
    result is indexed by the kept axes in the given order. A kept axis with a
    weight vector is multiplied by it without being summed.
    """
    if len(weights) != H.ndim:
        raise ValidationError(f"{len(weights)} weight vectors for a tensor of rank {H.ndim}")
    operands: list = [H, list(range(H.ndim))]
    for r, w in enumerate(weights):
        if w is None:
            if r not in keep:
                raise ValidationError(f"axis {r} is summed but has no weight vector")
            continue
        operands.extend([np.asarray(w, dtype=np.float64), [r]])
    operands.append(list(keep))
    return np.asarray(np.einsum(*operands, optimize=True), dtype=np.float64)


def conditional_on_axis(H: np.ndarray, weights: Sequence[np.ndarray], t: int) -> npt.NDArray[np.float64]:
    """x -> E[h prod_{r != t} w_r(X_r) | X_t = x] for probability-type weights."""
    ws: list = list(weights)
    ws[t] = None
    return contract(H, ws, keep=(t,))


def conditional_on_pair(H: np.ndarray, weights: Sequence[np.ndarray], t: int, s: int) -> npt.NDArray[np.float64]:
    """(x, y) -> E[h prod_{r not in {t, s}} w_r(X_r) | X_t = x, X_s = y]."""
    if t == s:
        raise ValidationError("pair conditioning needs two distinct axes")
    ws: list = list(weights)
    ws[t] = None
    ws[s] = None
    return contract(H, ws, keep=(t, s))


def swap_sum_tensor(H: np.ndarray) -> npt.NDArray[np.float64]:
    """S_h over the product support: sum over t of H with axes 0 and t swapped."""
    S = H.copy()
    for t in range(1, H.ndim):
        S += np.swapaxes(H, 0, t)
    return S
