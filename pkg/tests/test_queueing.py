import io
import itertools
import math

import numpy as np
import pandas as pd
import pytest

from klsens.errors import ValidationError
from klsens.model import FiniteDistribution, StochasticModel
from klsens.nestedmc import NestedDesign
from klsens.queueing import (
    QUEUE_TABLE_COLUMNS,
    QueueConfig,
    benchmark_mean,
    benchmark_table,
    conditional_s_h,
    queue_cost,
    simulate_wait,
    simulate_waits,
    table_to_csv,
)
from klsens.symmetrize import s_h
from klsens.workload import multi_server_wait


def test_config_validation():
    with pytest.raises(ValidationError):
        QueueConfig.mms(0)
    with pytest.raises(ValidationError):
        QueueConfig.mms(2, customers=0)
    with pytest.raises(ValidationError):
        QueueConfig(1, StochasticModel.exponential(1.0), StochasticModel.exponential(1.0), perturb="arrivals")
    with pytest.raises(ValidationError):
        QueueConfig(1, StochasticModel.exponential(1.0), StochasticModel.exponential(1.0), 1, "interarrival")


def test_config_dict():
    config = QueueConfig.ggs(3, customers=20)
    loaded = QueueConfig.from_dict(config.to_dict())
    assert loaded.to_dict() == config.to_dict()
    assert loaded.primary.mean() == pytest.approx(6.0)
    with pytest.raises(ValidationError):
        QueueConfig.from_dict({**config.to_dict(), "discipline": "lifo"})


def test_mms_loads():
    config = QueueConfig.mms(20)
    assert config.interarrival.mean() == pytest.approx(1.0)
    assert config.service.mean() == pytest.approx(20.0)
    ggs = QueueConfig.ggs(20)
    assert ggs.interarrival.mean() == pytest.approx(1.0)
    assert ggs.service.mean() == pytest.approx(20.0)


def test_simulation_is_reproducible():
    config = QueueConfig.mms(2, customers=30)
    assert simulate_wait(config, 5, 1) == simulate_wait(config, 5, 1)
    waits = simulate_waits(config, 10, seed=5)
    np.testing.assert_array_equal(waits, simulate_waits(config, 10, seed=5))
    assert np.all(waits >= 0)
    with pytest.raises(ValidationError):
        simulate_waits(config, 0, seed=5)


@pytest.mark.parametrize("lam, mu", [(1.0, 1.0), (2.0, 0.5)])
def test_second_customer_mean_wait(lam, mu):
    # E[(S - A)^+] for S ~ Exp(mu), A ~ Exp(lam)
    config = QueueConfig(1, StochasticModel.exponential(lam), StochasticModel.exponential(mu), customers=2)
    interval = benchmark_mean(config, 200_000, seed=3)
    assert abs(interval.mean - lam / ((lam + mu) * mu)) <= 4 * interval.stderr


def test_queue_cost_swap_sum_matches_generic(rng):
    config = QueueConfig.mms(2, customers=6)
    cost = queue_cost(config)
    services = rng.exponential(2.0, size=6)
    gaps = rng.exponential(1.0, size=5)
    generic = cost.evaluate(services, gaps)
    for t in range(1, 6):
        swapped = services.copy()
        swapped[0], swapped[t] = services[t], services[0]
        generic += cost.evaluate(swapped, gaps)
    assert s_h(cost, services, gaps) == pytest.approx(generic)

    arrivals = queue_cost(QueueConfig(2, config.interarrival, config.service, 6, "interarrival"))
    assert arrivals.T == 5
    assert arrivals.evaluate(gaps, services) == pytest.approx(multi_server_wait(services, gaps, 2))


def test_conditional_s_h_matches_enumeration():
    # two-point service and interarrival laws, three customers, one server
    service = FiniteDistribution(np.array([1.0, 3.0]), np.array([0.6, 0.4]))
    gap = FiniteDistribution(np.array([0.5, 2.0]), np.array([0.5, 0.5]))
    config = QueueConfig(1, StochasticModel.finite(gap), StochasticModel.finite(service), customers=3)
    x = 3.0

    exact = 0.0
    for (i, j), (k, m) in itertools.product(itertools.product(range(2), repeat=2), repeat=2):
        services = np.array([x, service.atoms[i], service.atoms[j]])
        gaps = np.array([gap.atoms[k], gap.atoms[m]])
        weight = service.probs[i] * service.probs[j] * gap.probs[k] * gap.probs[m]
        total = 0.0
        for t in range(3):
            swapped = services.copy()
            swapped[0], swapped[t] = services[t], services[0]
            total += multi_server_wait(swapped, gaps, 1)
        exact += weight * total

    draws = np.array([conditional_s_h(config, x, seed=8, stream=s) for s in range(20_000)])
    stderr = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - exact) <= 4 * stderr
    with pytest.raises(ValidationError):
        conditional_s_h(config, -1.0, seed=0)


def test_benchmark_table_layout():
    configs = [QueueConfig.mms(s, customers=10) for s in (1, 2)]
    table = benchmark_table(configs, 200, NestedDesign(K=5, n=3, N=4), seed=2)
    assert len(table) == 2
    assert table.servers.to_pylist() == [1, 2]
    df = table.to_dataframe()
    assert np.all(df["ci_low"] <= df["mean"]) and np.all(df["mean"] <= df["ci_high"])

    out = io.StringIO()
    table_to_csv(table, out, QUEUE_TABLE_COLUMNS)
    out.seek(0)
    assert list(pd.read_csv(out).columns) == QUEUE_TABLE_COLUMNS


@pytest.mark.slow
def test_mms_twenty_servers():
    config = QueueConfig.mms(20)
    table = benchmark_table([config], 10_000, NestedDesign(), seed=0)
    row = table.to_dataframe().iloc[0]
    assert row["ci_low"] <= 5.153 and row["ci_high"] >= 4.905
    assert row["deriv_ci_low"] <= 52.574 and row["deriv_ci_high"] >= 43.106


@pytest.mark.slow
def test_mms_relative_impact_grows_with_servers():
    configs = [QueueConfig.mms(s) for s in (20, 40, 60)]
    table = benchmark_table(configs, 10_000, NestedDesign(), seed=0)
    impact = np.array(table.relative_impact.to_pylist())
    assert np.all(np.diff(impact) > 0)
