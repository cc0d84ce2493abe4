"""
Benchmark-model representations.

A benchmark model P0 is either a :class:`FiniteDistribution`, on which every
quantity can be computed exactly by enumeration, or a :class:`StochasticModel`,
a seedable sampler that may wrap a FiniteDistribution. All Monte Carlo code
draws through :func:`stream_rng` so that stream ``i`` of seed ``s`` is the same
sequence no matter which worker consumes it.
"""
import dataclasses
import json
import logging
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
from scipy import special, stats

from .config import DefaultConfig
from .errors import AbsoluteContinuityError, ValidationError

logger = logging.getLogger("klsens")

FAMILIES = ("finite", "exponential", "gamma", "uniform", "normal")


def validate_probs(probs: npt.ArrayLike, tol: Optional[float] = None) -> npt.NDArray[np.float64]:
    """
    Check a probability vector and renormalize it when its total mass is off
    by at most ``tol``.
    """
    if tol is None:
        tol = DefaultConfig.probability_tol
    try:
        p = np.asarray(probs, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"probabilities must be numbers: {exc}") from exc
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("probabilities must be a non-empty 1-d vector")
    if not np.all(np.isfinite(p)):
        raise ValidationError("probabilities must be finite")
    if np.any(p < 0):
        raise ValidationError(f"negative probability {p.min()}")
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise ValidationError(f"probabilities sum to {total!r}, not 1 (tolerance {tol})")
    return p / total


@dataclasses.dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Atoms with probabilities; the exact representation of P0."""

    atoms: npt.NDArray[np.float64]
    probs: npt.NDArray[np.float64]

    def __post_init__(self):
        try:
            atoms = np.asarray(self.atoms, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"atoms must be numbers: {exc}") from exc
        if atoms.ndim != 1:
            raise ValidationError("atoms must be a 1-d vector")
        probs = validate_probs(self.probs)
        if atoms.shape != probs.shape:
            raise ValidationError(
                f"{atoms.size} atoms but {probs.size} probabilities"
            )
        if np.unique(atoms).size != atoms.size:
            raise ValidationError("atoms must be pairwise distinct")
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return int(self.atoms.size)

    def expect(self, values: npt.ArrayLike) -> float:
        return float(np.dot(self.probs, np.asarray(values, dtype=np.float64)))

    def mean(self) -> float:
        return self.expect(self.atoms)

    def evaluate(self, h: Callable[[float], float]) -> npt.NDArray[np.float64]:
        """Tabulate a real function of a single draw on the atoms."""
        return np.array([h(x) for x in self.atoms], dtype=np.float64)

    def reweight(self, likelihood: npt.ArrayLike) -> "FiniteDistribution":
        """The distribution with density ``likelihood`` relative to this one."""
        return FiniteDistribution(self.atoms, self.probs * np.asarray(likelihood))

    def to_dict(self) -> Dict[str, Any]:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FiniteDistribution":
        unknown = set(data) - {"atoms", "probs"}
        if unknown:
            raise ValidationError(f"unknown fields {sorted(unknown)}")
        return cls(np.asarray(data["atoms"]), np.asarray(data["probs"]))

    def to_json(self, out_file: str):
        with open(out_file, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=4)

    @classmethod
    def from_json(cls, in_file: str) -> "FiniteDistribution":
        with open(in_file, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclasses.dataclass(frozen=True)
class CumulantTriple:
    mean: float
    variance: float
    kappa3: float


def kl_divergence(p: FiniteDistribution, q: FiniteDistribution) -> float:
    """
    D(p || q) = sum p_i log(p_i / q_i), with 0 log 0 = 0.

    Both distributions must live on the same atoms, and q must charge every
    atom that p charges.
    """
    if p.atoms.shape != q.atoms.shape or not np.array_equal(p.atoms, q.atoms):
        raise AbsoluteContinuityError("distributions do not share the same atoms")
    if np.any((q.probs == 0) & (p.probs > 0)):
        raise AbsoluteContinuityError("p is not absolutely continuous with respect to q")
    return max(float(np.sum(special.rel_entr(p.probs, q.probs))), 0.0)


def cumulants(values: npt.ArrayLike, weights: npt.ArrayLike) -> CumulantTriple:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValidationError("cannot compute cumulants of an empty sample")
    w = validate_probs(weights)
    if w.shape != v.shape:
        raise ValidationError(f"{v.size} values but {w.size} weights")
    mean = float(np.dot(w, v))
    centered = v - mean
    variance = float(np.dot(w, centered**2))
    kappa3 = float(np.dot(w, centered**3))
    return CumulantTriple(mean=mean, variance=max(variance, 0.0), kappa3=kappa3)


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """
    Generator for stream ``stream`` of base seed ``seed``.

    The stream index enters the SeedSequence spawn key, so streams are
    independent and each one is reproducible on its own.
    """
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))
    )


@dataclasses.dataclass(frozen=True, eq=False)
class StochasticModel:
    """
    A seedable black-box sampler of i.i.d. draws of X.

    ``family`` names one of the built-in samplers ("finite", "exponential",
    "gamma", "uniform", "normal"); ``sampler`` may instead hold a custom
    callable ``(rng, size) -> array``.
    """

    family: str
    params: Mapping[str, float] = dataclasses.field(default_factory=dict)
    exact: Optional[FiniteDistribution] = None
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None

    def __post_init__(self):
        if self.sampler is not None:
            return
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown sampler family {self.family!r}")
        if self.family == "finite" and self.exact is None:
            raise ValidationError("a finite model needs an exact distribution")
        required = {
            "finite": set(),
            "exponential": {"rate"},
            "gamma": {"shape", "rate"},
            "uniform": {"low", "high"},
            "normal": {"mean", "std"},
        }[self.family]
        missing = required - set(self.params)
        if missing:
            raise ValidationError(f"{self.family} sampler missing parameters {sorted(missing)}")
        unknown = set(self.params) - required
        if unknown:
            raise ValidationError(f"{self.family} sampler got unknown parameters {sorted(unknown)}")
        for key, value in self.params.items():
            if isinstance(value, bool) or not isinstance(value, (int, float, np.number)) or not np.isfinite(value):
                raise ValidationError(f"{self.family} parameter {key} must be a finite number, got {value!r}")
        p = self.params
        if any(p[key] <= 0 for key in ("rate", "shape", "std") if key in p):
            raise ValidationError(f"{self.family} sampler needs positive rate, shape and std, got {dict(p)}")
        if self.family == "uniform" and not p["low"] < p["high"]:
            raise ValidationError(f"uniform sampler needs low < high, got {dict(p)}")

    @classmethod
    def finite(cls, dist: FiniteDistribution) -> "StochasticModel":
        return cls("finite", {}, exact=dist)

    @classmethod
    def exponential(cls, rate: float) -> "StochasticModel":
        return cls("exponential", {"rate": rate})

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "StochasticModel":
        return cls("gamma", {"shape": shape, "rate": rate})

    @classmethod
    def uniform(cls, low: float, high: float) -> "StochasticModel":
        return cls("uniform", {"low": low, "high": high})

    @classmethod
    def normal(cls, mean: float, std: float) -> "StochasticModel":
        return cls("normal", {"mean": mean, "std": std})

    def draw(self, rng: np.random.Generator, size: Union[int, Sequence[int]]) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, size), dtype=np.float64)
        p = self.params
        if self.family == "finite":
            assert self.exact is not None
            idx = rng.choice(len(self.exact), size=size, p=self.exact.probs)
            return self.exact.atoms[idx]
        if self.family == "exponential":
            return rng.exponential(1.0 / p["rate"], size=size)
        if self.family == "gamma":
            return rng.gamma(p["shape"], 1.0 / p["rate"], size=size)
        if self.family == "uniform":
            return rng.uniform(p["low"], p["high"], size=size)
        return rng.normal(p["mean"], p["std"], size=size)

    def mean(self) -> float:
        if self.exact is not None:
            return self.exact.mean()
        p = self.params
        if self.family == "exponential":
            return 1.0 / p["rate"]
        if self.family == "gamma":
            return p["shape"] / p["rate"]
        if self.family == "uniform":
            return 0.5 * (p["low"] + p["high"])
        if self.family == "normal":
            return p["mean"]
        raise ValidationError("mean of a custom sampler is unknown")

    def to_dict(self) -> Dict[str, Any]:
        if self.sampler is not None:
            raise ValidationError("custom samplers cannot be serialized")
        if self.family == "finite":
            assert self.exact is not None
            return {"finite": self.exact.to_dict()}
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StochasticModel":
        if "finite" in data:
            if set(data) != {"finite"}:
                raise ValidationError("a finite model takes only the 'finite' field")
            return cls.finite(FiniteDistribution.from_dict(data["finite"]))
        unknown = set(data) - {"family", "params"}
        if unknown:
            raise ValidationError(f"unknown fields {sorted(unknown)}")
        if "family" not in data:
            raise ValidationError("model needs either 'finite' or 'family'")
        return cls(data["family"], dict(data.get("params", {})))


def sample_stream(model: StochasticModel, seed: int, stream: int, count: int) -> np.ndarray:
    if count < 0:
        raise ValidationError(f"count must be nonnegative, got {count}")
    return model.draw(stream_rng(seed, stream), count)


def discretize(model: StochasticModel, atoms: int = 2001, width: float = 8.0) -> FiniteDistribution:
    """
    Finite-support stand-in for a named sampler.

    The grids have equal spacing and each atom is weighted by the density at
    that atom (not by the mass of a quantile cell), then renormalized.

    Normal: grid over mean +- width*std. Exponential: grid over
    [0, mean + width*std], with the atom at 0 given half its density weight as
    in the trapezoidal rule, since the density jumps there. Gamma: grid over
    [0, mean + width*std]. Uniform: cell midpoints with equal weights.
    """
    if model.exact is not None:
        return model.exact
    if atoms < 2:
        raise ValidationError("need at least two atoms")
    p = model.params
    if model.family == "normal":
        grid = np.linspace(p["mean"] - width * p["std"], p["mean"] + width * p["std"], atoms)
        weights = stats.norm.pdf(grid, loc=p["mean"], scale=p["std"])
    elif model.family == "exponential":
        scale = 1.0 / p["rate"]
        grid = np.linspace(0.0, (1.0 + width) * scale, atoms)
        weights = stats.expon.pdf(grid, scale=scale)
        weights[0] *= 0.5
    elif model.family == "gamma":
        scale = 1.0 / p["rate"]
        dist = stats.gamma(p["shape"], scale=scale)
        grid = np.linspace(0.0, dist.mean() + width * dist.std(), atoms)
        weights = dist.pdf(grid)
    elif model.family == "uniform":
        edges = np.linspace(p["low"], p["high"], atoms + 1)
        grid = 0.5 * (edges[1:] + edges[:-1])
        weights = np.ones(atoms)
    else:
        raise ValidationError(f"cannot discretize a {model.family!r} model")
    weights = np.where(np.isfinite(weights), weights, 0.0)
    return FiniteDistribution(grid, weights / weights.sum())
