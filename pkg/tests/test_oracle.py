import numpy as np
import numpy.testing as npt
import pytest

from klsens.cost import CostSpec, HorizonSpec, iid_sum_tail, table_cost
from klsens.errors import BudgetError, ValidationError
from klsens.exact1d import solve_tilt
from klsens.model import FiniteDistribution
from klsens.oracle import brute_force

from .testutils import random_distribution, random_instance, random_table_cost


def test_single_draw_matches_tilt_solver(rng):
    for _ in range(20):
        dist, values = random_instance(rng, int(rng.integers(2, 7)))
        cost = table_cost(dist, values)
        for eta in [1e-4, 1e-3, 1e-2]:
            for sense in ["max", "min"]:
                result = brute_force(dist, cost, eta, sense)
                assert result.method == "tilt-closed-form"
                assert result.optimum == pytest.approx(solve_tilt(dist, values, eta, sense).optimum, abs=1e-8)
                assert result.kl_at_opt == pytest.approx(eta, rel=1e-8)


def test_saturated_single_draw(coin):
    result = brute_force(coin, table_cost(coin, [0.0, 1.0]), 2.0)
    assert result.optimum == 1.0
    npt.assert_allclose(result.argmax.probs, [0.0, 1.0])


def test_separable_cost_is_tilt_times_horizon(rng):
    # for h = X_1 + X_2 the best product measure tilts every marginal
    dist = random_distribution(rng, 4)
    cost = CostSpec(h=lambda path: float(np.sum(path)), horizon=HorizonSpec.fixed(2), symmetric=True)
    result = brute_force(dist, cost, 0.01, seed=1)
    assert result.method == "simplex-search"
    assert result.optimum == pytest.approx(2 * solve_tilt(dist, dist.atoms, 0.01).optimum, rel=1e-6)
    assert result.kl_at_opt <= 0.01 + 1e-10

    low = brute_force(dist, cost, 0.01, sense="min", seed=1)
    assert low.optimum == pytest.approx(2 * solve_tilt(dist, dist.atoms, 0.01, "min").optimum, rel=1e-6)


def test_zero_eta_is_benchmark(three_point, sum_tail_cost):
    result = brute_force(three_point, sum_tail_cost, 0.0)
    npt.assert_allclose(result.argmax.probs, three_point.probs)
    assert result.kl_at_opt == 0.0


def test_zero_probability_atoms_stay_empty():
    dist = FiniteDistribution(np.array([0.0, 1.0, 2.0]), np.array([0.5, 0.5, 0.0]))
    cost = iid_sum_tail(1.5, HorizonSpec.fixed(2))
    result = brute_force(dist, cost, 0.1)
    assert result.argmax.probs[2] == 0.0
    assert np.isfinite(result.kl_at_opt)


def test_oracle_limits(three_point, sum_tail_cost):
    big = FiniteDistribution(np.arange(9.0), np.full(9, 1 / 9))
    with pytest.raises(BudgetError):
        brute_force(big, iid_sum_tail(2.0, HorizonSpec.fixed(2)), 0.1)
    with pytest.raises(BudgetError):
        brute_force(three_point, iid_sum_tail(2.0, HorizonSpec.fixed(4)), 0.1)
    with pytest.raises(ValidationError):
        brute_force(three_point, iid_sum_tail(2.0, HorizonSpec.bounded(3)), 0.1)
    with pytest.raises(ValidationError):
        brute_force(three_point, sum_tail_cost, -0.1)
    with pytest.raises(ValidationError):
        brute_force(three_point, sum_tail_cost, 0.1, sense="both")  # type: ignore[arg-type]


def test_optimum_grows_with_eta(rng):
    dist, cost = random_table_cost(rng, 3, 2)
    previous = brute_force(dist, cost, 0.0)
    for eta in [1e-3, 1e-2, 5e-2]:
        result = brute_force(dist, cost, eta, seed=2, warm_starts=[previous.argmax.probs / dist.probs])
        assert result.optimum >= previous.optimum - 1e-12
        assert result.kl_at_opt <= eta + 1e-9
        previous = result


@pytest.mark.parametrize("T", [1, 2])
def test_min_is_max_of_negated_cost(rng, T):
    dist, cost = random_table_cost(rng, 3, T)
    low = brute_force(dist, cost, 0.02, sense="min", seed=4)
    high = brute_force(dist, cost.negated(), 0.02, sense="max", seed=4)
    assert low.optimum == pytest.approx(-high.optimum, abs=1e-6)
