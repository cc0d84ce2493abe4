"""
FIFO multi-server queue started empty, with the hooks needed by the
sensitivity estimators.

Customer 1 arrives at time 0; customer i + 1 arrives ``gaps[i]`` after
customer i. By default the service times are the perturbed input X and the
interarrival gaps are an auxiliary input; ``perturb="interarrival"`` swaps
the roles.
"""
import dataclasses
import logging
from typing import IO, Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import quivr as qv

from .cost import CostSpec, HorizonSpec
from .errors import ValidationError
from .model import StochasticModel, stream_rng
from .nestedmc import MeanInterval, NestedDesign, mean_interval, sectioned_zeta1
from .workload import batch_waits, gap_swap_sum, multi_server_wait, service_swap_sum

logger = logging.getLogger("klsens")


@dataclasses.dataclass(frozen=True)
class QueueConfig:
    servers: int
    interarrival: StochasticModel
    service: StochasticModel
    customers: int = 100
    perturb: str = "service"

    def __post_init__(self):
        if self.servers < 1:
            raise ValidationError(f"need at least one server, got {self.servers}")
        if self.customers < 1:
            raise ValidationError(f"customer index must be at least 1, got {self.customers}")
        if self.perturb not in ("service", "interarrival"):
            raise ValidationError(f"perturb must be 'service' or 'interarrival', got {self.perturb!r}")
        if self.perturb == "interarrival" and self.customers < 2:
            raise ValidationError("perturbing interarrival times needs at least two customers")

    @classmethod
    def mms(cls, servers: int, arrival_rate: float = 1.0, customers: int = 100) -> "QueueConfig":
        """Exponential gaps with rate ``arrival_rate`` and exponential services with rate 1 / servers."""
        return cls(
            servers=servers,
            interarrival=StochasticModel.exponential(arrival_rate),
            service=StochasticModel.exponential(1.0 / servers),
            customers=customers,
        )

    @classmethod
    def ggs(cls, servers: int, customers: int = 100) -> "QueueConfig":
        """Gamma(2, rate 2) gaps and uniform services on [0, 2 servers]."""
        return cls(
            servers=servers,
            interarrival=StochasticModel.gamma(2.0, 2.0),
            service=StochasticModel.uniform(0.0, 2.0 * servers),
            customers=customers,
        )

    @property
    def primary(self) -> StochasticModel:
        return self.service if self.perturb == "service" else self.interarrival

    def to_dict(self) -> Dict[str, Any]:
        return {
            "servers": self.servers,
            "interarrival": self.interarrival.to_dict(),
            "service": self.service.to_dict(),
            "customers": self.customers,
            "perturb": self.perturb,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QueueConfig":
        unknown = set(data) - {"servers", "interarrival", "service", "customers", "perturb"}
        if unknown:
            raise ValidationError(f"unknown queue fields {sorted(unknown)}")
        return cls(
            servers=int(data["servers"]),
            interarrival=StochasticModel.from_dict(data["interarrival"]),
            service=StochasticModel.from_dict(data["service"]),
            customers=int(data.get("customers", 100)),
            perturb=data.get("perturb", "service"),
        )


def _draw(config: QueueConfig, rng: np.random.Generator, size: Tuple[int, ...] = ()) -> Tuple[np.ndarray, np.ndarray]:
    services = config.service.draw(rng, size + (config.customers,))
    gaps = config.interarrival.draw(rng, size + (config.customers - 1,))
    return _aux(services), _aux(gaps)


def _aux(values: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(values, dtype=np.float64)


def wait(config: QueueConfig, services: np.ndarray, gaps: np.ndarray) -> float:
    return float(multi_server_wait(_aux(services), _aux(gaps), config.servers))


def simulate_wait(config: QueueConfig, seed: int, stream: int = 0) -> float:
    """Waiting time of customer ``config.customers`` on one sample path."""
    services, gaps = _draw(config, stream_rng(seed, stream))
    return wait(config, services, gaps)


def simulate_waits(config: QueueConfig, samples: int, seed: int, stream: int = 0) -> np.ndarray:
    if samples < 1:
        raise ValidationError(f"need at least one sample, got {samples}")
    services, gaps = _draw(config, stream_rng(seed, stream), (samples,))
    return batch_waits(services, gaps, config.servers)


def queue_cost(config: QueueConfig) -> CostSpec:
    """
    The waiting time of the last customer as a cost of the perturbed input,
    with the other input as the auxiliary variable.
    """
    servers = config.servers
    if config.perturb == "service":
        return CostSpec(
            h=lambda services, gaps: wait(config, services, gaps),
            horizon=HorizonSpec.fixed(config.customers),
            auxiliary=config.interarrival,
            aux_length=config.customers - 1 if config.customers > 1 else 1,
            swap_sum=lambda services, gaps: float(service_swap_sum(_aux(services), _aux(gaps), servers)),
        )
    return CostSpec(
        h=lambda gaps, services: wait(config, services, gaps),
        horizon=HorizonSpec.fixed(config.customers - 1),
        auxiliary=config.service,
        aux_length=config.customers,
        swap_sum=lambda gaps, services: float(gap_swap_sum(_aux(gaps), _aux(services), servers)),
    )


def conditional_s_h(config: QueueConfig, x: float, seed: int, stream: int = 0) -> float:
    """
    One draw of S_h given X_1 = x: x is put in the first perturbed position,
    the remaining inputs are drawn, and the waits over the N swaps of the
    first position with position t are summed.
    """
    if x < 0:
        raise ValidationError(f"service and interarrival times are nonnegative, got {x}")
    rng = stream_rng(seed, stream)
    services, gaps = _draw(config, rng)
    if config.perturb == "service":
        services[0] = x
        return float(service_swap_sum(services, gaps, config.servers))
    gaps[0] = x
    return float(gap_swap_sum(gaps, services, config.servers))


def benchmark_mean(
    config: QueueConfig, samples: int, confidence: float = 0.95, seed: int = 0, stream: int = 0
) -> MeanInterval:
    """Sample mean of the waiting time with a Student-t interval."""
    if samples < 2:
        raise ValidationError(f"need at least two samples for an interval, got {samples}")
    return mean_interval(simulate_waits(config, samples, seed, stream), confidence)


class QueueTable(qv.Table):
    servers = qv.Int64Column()
    mean = qv.Float64Column()
    ci_low = qv.Float64Column()
    ci_high = qv.Float64Column()
    deriv = qv.Float64Column()
    deriv_ci_low = qv.Float64Column(nullable=True)
    deriv_ci_high = qv.Float64Column(nullable=True)
    relative_impact = qv.Float64Column(nullable=True)


QUEUE_TABLE_COLUMNS = [
    "servers",
    "mean",
    "ci_low",
    "ci_high",
    "deriv",
    "deriv_ci_low",
    "deriv_ci_high",
    "relative_impact",
]


def benchmark_table(
    configs: Sequence[QueueConfig],
    samples: int,
    design: NestedDesign = NestedDesign(),
    seed: int = 0,
    max_processes: Optional[int] = None,
) -> QueueTable:
    """
    One row per configuration: benchmark mean with its interval, sectioned
    first-order derivative with its interval, and their ratio. Row r uses
    stream r * (N + 1) for the mean and the following N streams for the
    sections.
    """
    rows: List[Dict[str, Any]] = []
    for r, config in enumerate(configs):
        base = r * (design.N + 1)
        mean = benchmark_mean(config, samples, design.confidence, seed, base)
        deriv = sectioned_zeta1(
            config.primary, queue_cost(config), design, seed, stream_offset=base + 1, max_processes=max_processes
        )
        impact = deriv.point / mean.mean if mean.mean != 0 else None
        logger.info(
            f"s={config.servers}: mean {mean.mean:.4g} ({mean.ci_low:.4g}, {mean.ci_high:.4g}), "
            f"zeta1 {deriv.point:.4g}, relative impact {impact}"
        )
        rows.append(
            {
                "servers": config.servers,
                "mean": mean.mean,
                "ci_low": mean.ci_low,
                "ci_high": mean.ci_high,
                "deriv": deriv.point,
                "deriv_ci_low": deriv.ci_low,
                "deriv_ci_high": deriv.ci_high,
                "relative_impact": impact,
            }
        )
    if not rows:
        return QueueTable.empty()
    return QueueTable.from_kwargs(**{column: [row[column] for row in rows] for column in QUEUE_TABLE_COLUMNS})


def table_to_csv(table: qv.Table, out_file: Union[str, IO[str]], columns: Optional[Sequence[str]] = None):
    df: pd.DataFrame = table.to_dataframe()
    if columns is not None:
        df = df[list(columns)]
    df.to_csv(out_file, index=False, float_format="%.10g")
