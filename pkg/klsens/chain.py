"""
Dynamic programming over the running state of a sequential cost.

A random horizon is run as a chain on wrapped states ``(state, stopped)``.
After step ``t`` the chain stops when the stopping rule fires on the new
state (bounded mode), with probability P(tau = t | tau >= t) (independent
mode), or when ``t`` reaches the truncation horizon. Stopped states are
absorbing and carry the value of h at the stopping time.
"""
import collections
import logging
from typing import DefaultDict, Dict, Hashable, List, Optional, Tuple

import numpy as np
import numpy.typing as npt

from .config import DefaultConfig
from .cost import CostSpec, HorizonSpec
from .errors import BudgetError, ValidationError
from .model import FiniteDistribution

logger = logging.getLogger("klsens")

Wrapped = Tuple[Hashable, bool]
Transition = List[Tuple[Wrapped, float]]


class StateChain:
    def __init__(self, dist: FiniteDistribution, cost: CostSpec, horizon: int, budget: Optional[int] = None):
        spec = cost.horizon
        if not spec.is_random:
            spec = HorizonSpec.bounded(cost.T)
        if horizon < 1:
            raise ValidationError(f"chain horizon must be at least 1, got {horizon}")
        self.dist = dist
        self.spec = spec
        self.sequential = cost.as_sequential()
        # a bounded horizon stops by t_max whatever the truncation
        self.K = min(horizon, spec.t_max) if spec.mode == "bounded" and spec.t_max is not None else horizon
        self.budget = DefaultConfig.enumeration_budget if budget is None else budget
        self._cache: Dict[Tuple[Wrapped, int, int], Transition] = {}
        self.forward = self._run_forward()
        self.backward = self._run_backward()

    def transition(self, ws: Wrapped, i: int, t: int) -> Transition:
        """Successors of ``ws`` when draw ``t`` is atom ``i``."""
        key = (ws, i, t)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        state, stopped = ws
        if stopped:
            out: Transition = [(ws, 1.0)]
        else:
            nxt = self.sequential.step(state, float(self.dist.atoms[i]))
            if t >= self.K:
                out = [((nxt, True), 1.0)]
            elif self.spec.mode == "bounded":
                out = [((nxt, bool(self.spec.stop(nxt))), 1.0)]
            else:
                assert self.spec.tau is not None
                lam = self.spec.tau.hazard(t)
                if lam >= 1.0:
                    out = [((nxt, True), 1.0)]
                elif lam <= 0.0:
                    out = [((nxt, False), 1.0)]
                else:
                    out = [((nxt, True), lam), ((nxt, False), 1.0 - lam)]
        self._cache[key] = out
        return out

    def _run_forward(self) -> List[Dict[Wrapped, float]]:
        probs = self.dist.probs
        layers: List[Dict[Wrapped, float]] = [{(self.sequential.init, False): 1.0}]
        visited = 1
        for t in range(1, self.K + 1):
            layer: DefaultDict[Wrapped, float] = collections.defaultdict(float)
            for ws, mass in layers[-1].items():
                for i, p in enumerate(probs):
                    for nxt, w in self.transition(ws, i, t):
                        layer[nxt] += mass * p * w
            visited += len(layer) * len(probs)
            if visited > self.budget:
                raise BudgetError(
                    f"state chain visited more than {self.budget} state-steps by step {t} of {self.K}",
                    visited,
                    self.budget,
                )
            layers.append(dict(layer))
        logger.debug(f"state chain: {self.K} steps, {sum(len(layer) for layer in layers)} states")
        return layers

    def _run_backward(self) -> List[Dict[Wrapped, float]]:
        value = self.sequential.value
        probs = self.dist.probs
        out: List[Dict[Wrapped, float]] = [dict() for _ in range(self.K + 1)]
        out[self.K] = {ws: float(value(ws[0])) for ws in self.forward[self.K]}
        for t in range(self.K - 1, -1, -1):
            nxt_values = out[t + 1]
            layer = out[t]
            for ws in self.forward[t]:
                if ws[1]:
                    layer[ws] = float(value(ws[0]))
                    continue
                layer[ws] = sum(
                    p * w * nxt_values[nxt]
                    for i, p in enumerate(probs)
                    for nxt, w in self.transition(ws, i, t + 1)
                )
        return out

    def mean(self) -> float:
        """E[h(X_tau)] for the truncated chain."""
        return self.backward[0][(self.sequential.init, False)]

    def _conditioned(self, t: int, i: int, values: Dict[Wrapped, float]) -> float:
        """E[values(state_t); tau >= t, X_t = atom i] / P(X_t = atom i)."""
        total = 0.0
        for ws, mass in self.forward[t - 1].items():
            if ws[1] or mass == 0.0:
                continue
            total += mass * sum(w * values[nxt] for nxt, w in self.transition(ws, i, t))
        return total

    def g_tilde(self) -> npt.NDArray[np.float64]:
        """x -> sum_{t <= K} E[h(X_tau); tau >= t | X_t = x]."""
        n = len(self.dist)
        out = np.zeros(n)
        for t in range(1, self.K + 1):
            for i in range(n):
                out[i] += self._conditioned(t, i, self.backward[t])
        return out

    def H_tilde(self) -> npt.NDArray[np.float64]:
        """(x, y) -> sum_{t < s <= K} E[h(X_tau); tau >= s | X_t = x, X_s = y]."""
        n = len(self.dist)
        probs = self.dist.probs
        out = np.zeros((n, n))
        for s in range(2, self.K + 1):
            for j in range(n):
                # reach[r][ws]: E[h(X_tau); tau >= s, X_s = y | state after r steps] / P(X_s = y)
                reach: Dict[int, Dict[Wrapped, float]] = {}
                reach[s - 1] = {
                    ws: 0.0 if ws[1] else sum(w * self.backward[s][nxt] for nxt, w in self.transition(ws, j, s))
                    for ws in self.forward[s - 1]
                }
                for r in range(s - 2, 0, -1):
                    later = reach[r + 1]
                    reach[r] = {
                        ws: 0.0
                        if ws[1]
                        else sum(
                            p * w * later[nxt]
                            for a, p in enumerate(probs)
                            for nxt, w in self.transition(ws, a, r + 1)
                        )
                        for ws in self.forward[r]
                    }
                for t in range(1, s):
                    for i in range(n):
                        out[i, j] += self._conditioned(t, i, reach[t])
        return out


def tail_bounds(cost: CostSpec, t_cut: int) -> Tuple[float, float]:
    """Truncation bounds for the g-tilde and G-tilde sums at horizon ``t_cut``."""
    spec = cost.horizon
    if spec.mode == "bounded":
        assert spec.t_max is not None
        if t_cut < spec.t_max:
            raise ValidationError(f"truncation at {t_cut} does not cover the bound t_max = {spec.t_max}")
        return 0.0, 0.0
    assert spec.tau is not None
    if cost.bound is None:
        raise ValidationError("an independent random horizon needs a bounded cost")
    C = cost.bound
    law = spec.tau
    beyond = law.survival(t_cut + 1)
    g_bound = C * (2 * t_cut * beyond + law.survival_tail(t_cut + 1))
    G_bound = 2 * C * (t_cut**2 * beyond + law.survival_tail(t_cut + 1, weight=lambda k: k - 1))
    return g_bound, G_bound


def choose_t_cut(cost: CostSpec, tolerance: float, pairs: bool = False, limit: int = 100_000) -> int:
    """
    Truncation horizon whose tail bound is at most ``tolerance``: the smallest
    one up to 64, then the first of a geometric grid.
    """
    spec = cost.horizon
    if spec.mode == "bounded":
        assert spec.t_max is not None
        return spec.t_max
    law = spec.tau
    assert law is not None
    if law.upper is not None:
        return law.upper
    t = 1
    while t <= limit:
        g_bound, G_bound = tail_bounds(cost, t)
        if (G_bound if pairs else g_bound) <= tolerance:
            logger.info(f"truncating the random horizon at {t} (tail bound {G_bound if pairs else g_bound:.3e})")
            return t
        t = t + 1 if t < 64 else int(t * 1.25)
    raise BudgetError(f"no truncation horizon up to {limit} meets the tail tolerance {tolerance}", limit, tolerance)
