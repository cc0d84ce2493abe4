"""
Cost functions and time horizons.

A :class:`CostSpec` couples a cost evaluator ``h`` with a :class:`HorizonSpec`
and, optionally, an auxiliary model for random inputs that are not perturbed
(for example interarrival times when the service law is under study).
"""
import dataclasses
import math
from typing import Any, Callable, Hashable, Iterable, Optional, Tuple

import numpy as np
import numpy.typing as npt

from .config import DefaultConfig
from .errors import ValidationError
from .model import FiniteDistribution, StochasticModel, validate_probs

PathCost = Callable[..., float]


class TimeLaw:
    """Law of a positive integer time (a stopping time or the auxiliary time R)."""

    upper: Optional[int] = None

    def pmf(self, k: int) -> float:
        raise NotImplementedError

    def survival(self, k: int) -> float:
        """P(time >= k)."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def hazard(self, k: int) -> float:
        s = self.survival(k)
        if s <= 0:
            return 1.0
        return min(self.pmf(k) / s, 1.0)

    def survival_tail(self, start: int, weight: Callable[[int], float] = lambda k: 1.0) -> float:
        """sum_{k >= start} weight(k) P(time >= k), summed until the terms vanish."""
        total = 0.0
        k = max(start, 1)
        while True:
            s = self.survival(k)
            if s <= 0.0:
                return total
            term = weight(k) * s
            total += term
            if self.upper is None and term < 1e-300:
                return total
            k += 1


@dataclasses.dataclass(frozen=True)
class GeometricLaw(TimeLaw):
    """P(time = k) = q (1 - q)^(k - 1), k = 1, 2, ..."""

    success: float

    def __post_init__(self):
        if not 0 < self.success <= 1:
            raise ValidationError(f"geometric success probability must be in (0, 1], got {self.success}")

    @property
    def upper(self) -> Optional[int]:  # type: ignore[override]
        return 1 if self.success == 1 else None

    def pmf(self, k: int) -> float:
        if k < 1:
            return 0.0
        return self.success * (1.0 - self.success) ** (k - 1)

    def survival(self, k: int) -> float:
        if k <= 1:
            return 1.0
        return (1.0 - self.success) ** (k - 1)

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.geometric(self.success))


@dataclasses.dataclass(frozen=True, eq=False)
class FiniteLaw(TimeLaw):
    """P(time = k) = probs[k - 1] for k = 1..len(probs)."""

    probs: npt.NDArray[np.float64]

    def __post_init__(self):
        probs = validate_probs(self.probs)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "_survival", np.concatenate([np.cumsum(probs[::-1])[::-1], [0.0]]))

    @classmethod
    def deterministic(cls, T: int) -> "FiniteLaw":
        if T < 1:
            raise ValidationError(f"time must be at least 1, got {T}")
        probs = np.zeros(T)
        probs[-1] = 1.0
        return cls(probs)

    @property
    def upper(self) -> Optional[int]:  # type: ignore[override]
        return int(np.flatnonzero(self.probs)[-1]) + 1

    def pmf(self, k: int) -> float:
        if 1 <= k <= self.probs.size:
            return float(self.probs[k - 1])
        return 0.0

    def survival(self, k: int) -> float:
        if k <= 1:
            return 1.0
        if k > self.probs.size:
            return 0.0
        return float(self._survival[k - 1])  # type: ignore[attr-defined]

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.probs.size, p=self.probs)) + 1


@dataclasses.dataclass(frozen=True)
class SequentialCost:
    """
    A cost computed by a running state: ``state <- step(state, x)`` for every
    draw, ``h = value(state)`` at the horizon. States must be hashable.
    """

    init: Hashable
    step: Callable[[Any, float], Any]
    value: Callable[[Any], float]

    def run(self, path: Iterable[float]) -> float:
        state = self.init
        for x in path:
            state = self.step(state, float(x))
        return float(self.value(state))


def path_prefix_cost(h: PathCost) -> SequentialCost:
    """Plain path cost as a sequential cost whose state is the path prefix."""
    return SequentialCost(
        init=(),
        step=lambda prefix, x: prefix + (x,),
        value=lambda prefix: float(h(np.asarray(prefix, dtype=np.float64))),
    )


def never_stop(state: Any) -> bool:
    return False


@dataclasses.dataclass(frozen=True)
class HorizonSpec:
    """
    kind "single" (one draw), "fixed" (T draws) or "random". A random horizon
    is either "bounded" by ``t_max`` with a stopping rule evaluated on the
    running cost state after every step, or "independent" of the draws with
    law ``tau``.
    """

    kind: str
    T: int = 1
    mode: Optional[str] = None
    t_max: Optional[int] = None
    stop: Callable[[Any], bool] = never_stop
    tau: Optional[TimeLaw] = None

    def __post_init__(self):
        if self.kind not in ("single", "fixed", "random"):
            raise ValidationError(f"unknown horizon kind {self.kind!r}")
        if self.kind == "single" and self.T != 1:
            raise ValidationError("a single horizon has T = 1")
        if self.kind == "fixed" and self.T < 1:
            raise ValidationError(f"fixed horizon needs T >= 1, got {self.T}")
        if self.kind == "random":
            if self.mode == "bounded":
                if self.t_max is None or self.t_max < 1:
                    raise ValidationError("bounded random horizon needs t_max >= 1")
            elif self.mode == "independent":
                if self.tau is None:
                    raise ValidationError("independent random horizon needs a law for tau")
                second = self.tau.survival_tail(1, weight=lambda k: 2 * k - 1)
                if not math.isfinite(second):
                    raise ValidationError("tau must have a finite second moment")
            else:
                raise ValidationError(f"unknown random horizon mode {self.mode!r}")

    @classmethod
    def single(cls) -> "HorizonSpec":
        return cls("single")

    @classmethod
    def fixed(cls, T: int) -> "HorizonSpec":
        return cls("fixed", T=T)

    @classmethod
    def bounded(cls, t_max: int, stop: Callable[[Any], bool] = never_stop) -> "HorizonSpec":
        return cls("random", mode="bounded", t_max=t_max, stop=stop)

    @classmethod
    def independent(cls, tau: TimeLaw) -> "HorizonSpec":
        return cls("random", mode="independent", tau=tau)

    @property
    def is_random(self) -> bool:
        return self.kind == "random"


@dataclasses.dataclass(frozen=True)
class RandomizedHorizonConfig:
    """
    Law of the auxiliary time R used by the randomized-horizon estimator and
    the truncation horizon of the exact random-horizon sums (chosen from the
    tail tolerance when ``t_cut`` is None).
    """

    law: TimeLaw = dataclasses.field(default_factory=lambda: GeometricLaw(DefaultConfig.randomized_horizon_success))
    t_cut: Optional[int] = None
    tail_tolerance: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class CostSpec:
    """
    ``h`` maps a path of primary draws (and, when ``auxiliary`` is set, a
    vector of ``aux_length`` auxiliary draws) to a real number. ``symmetric``
    asserts that h is invariant to permutations of the path; ``bound`` is an
    asserted sup |h|. ``swap_sum`` may supply a faster evaluation of the swap
    sum S_h and ``sequential`` a state-machine form of h for exact
    random-horizon computations.
    """

    h: PathCost
    horizon: HorizonSpec
    auxiliary: Optional[StochasticModel] = None
    aux_length: int = 0
    symmetric: bool = False
    bound: Optional[float] = None
    sequential: Optional[SequentialCost] = None
    swap_sum: Optional[Callable[..., float]] = None

    def __post_init__(self):
        if self.auxiliary is not None and self.aux_length < 1:
            raise ValidationError("an auxiliary model needs aux_length >= 1")

    @classmethod
    def from_sequential(
        cls, sequential: SequentialCost, horizon: HorizonSpec, bound: Optional[float] = None, symmetric: bool = False
    ) -> "CostSpec":
        return cls(h=sequential.run, horizon=horizon, bound=bound, sequential=sequential, symmetric=symmetric)

    @property
    def T(self) -> int:
        if self.horizon.is_random:
            raise ValidationError("a random horizon has no fixed length")
        return self.horizon.T

    def evaluate(self, path: np.ndarray, aux: Optional[np.ndarray] = None) -> float:
        if self.auxiliary is None:
            return float(self.h(path))
        return float(self.h(path, aux))

    def draw_aux(self, rng: np.random.Generator, size: Tuple[int, ...] = ()) -> Optional[np.ndarray]:
        if self.auxiliary is None:
            return None
        return self.auxiliary.draw(rng, size + (self.aux_length,))

    def as_sequential(self) -> SequentialCost:
        if self.sequential is not None:
            return self.sequential
        if self.auxiliary is not None:
            raise ValidationError("integrate the auxiliary input out before exact computations")
        return path_prefix_cost(self.h)

    def shifted(self, c: float) -> "CostSpec":
        """The cost h + c."""
        h = self.h
        sequential = self.sequential
        if sequential is not None:
            value = sequential.value
            sequential = dataclasses.replace(sequential, value=lambda state: value(state) + c)
        return dataclasses.replace(
            self,
            h=lambda *args: h(*args) + c,
            sequential=sequential,
            swap_sum=None,
            bound=None if self.bound is None else self.bound + abs(c),
        )

    def negated(self) -> "CostSpec":
        """The cost -h."""
        h = self.h
        sequential = self.sequential
        if sequential is not None:
            value = sequential.value
            sequential = dataclasses.replace(sequential, value=lambda state: -value(state))
        swap_sum = self.swap_sum
        return dataclasses.replace(
            self,
            h=lambda *args: -h(*args),
            sequential=sequential,
            swap_sum=None if swap_sum is None else (lambda *args: -swap_sum(*args)),
        )


def iid_sum_tail(y: float, horizon: HorizonSpec) -> CostSpec:
    """h = I(X_1 + ... + X_T > y)."""
    sequential = SequentialCost(init=0.0, step=lambda s, x: s + x, value=lambda s: float(s > y))
    return CostSpec(
        h=lambda path: float(np.sum(path) > y),
        horizon=horizon,
        symmetric=True,
        bound=1.0,
        sequential=sequential,
    )


def running_max_exceeds(b: float, horizon: HorizonSpec) -> CostSpec:
    """h = I(max_t X_t > b), tracked by a two-state machine."""
    sequential = SequentialCost(init=False, step=lambda s, x: s or x > b, value=float)
    return CostSpec(
        h=lambda path: float(len(path) > 0 and np.max(path) > b),
        horizon=horizon,
        symmetric=True,
        bound=1.0,
        sequential=sequential,
    )


def table_cost(dist: FiniteDistribution, table: npt.ArrayLike) -> CostSpec:
    """
    Cost given as a table over the product support: ``table[i_1, ..., i_T]``
    is h at atoms (i_1, ..., i_T). A 1-d table is a single-variable cost.
    """
    values = np.asarray(table, dtype=np.float64)
    n = len(dist)
    if values.ndim < 1 or any(size != n for size in values.shape):
        raise ValidationError(f"cost table of shape {values.shape} does not match {n} atoms")
    index = {float(a): i for i, a in enumerate(dist.atoms)}

    def h(path: np.ndarray) -> float:
        try:
            return float(values[tuple(index[float(x)] for x in path)])
        except KeyError as exc:
            raise ValidationError(f"draw {exc.args[0]} is not an atom of the cost table") from exc

    horizon = HorizonSpec.single() if values.ndim == 1 else HorizonSpec.fixed(values.ndim)
    return CostSpec(h=h, horizon=horizon, bound=float(np.max(np.abs(values))))
