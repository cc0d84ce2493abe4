import math

import numpy as np
import pytest

from klsens.errors import DegeneracyError, ValidationError
from klsens.exact1d import (
    dual_objective,
    expansion1d,
    log_mgf,
    second_order_moment_form,
    solve_tilt,
)
from klsens.expansion import loglog_slope
from klsens.model import FiniteDistribution

from .testutils import gaussian_distribution, random_instance


def test_zero_budget_returns_mean(three_point):
    h = np.array([1.0, -2.0, 4.0])
    for sense in ("max", "min"):
        solution = solve_tilt(three_point, h, 0.0, sense)
        assert solution.optimum == pytest.approx(three_point.expect(h))
        assert solution.beta_star == 0.0


def test_tilt_equation_holds(rng):
    for _ in range(20):
        dist, h = random_instance(rng, int(rng.integers(2, 8)))
        for eta in (1e-4, 1e-3, 1e-2):
            solution = solve_tilt(dist, h, eta)
            assert solution.beta_star > 0
            psi, dpsi = log_mgf(h, dist.probs, solution.beta_star)
            assert solution.beta_star * dpsi - psi == pytest.approx(eta, abs=1e-12)
            assert solution.optimum == pytest.approx(dpsi, abs=1e-12)
            assert solution.optimum >= dist.expect(h)


def test_min_is_mirror_of_max(rng):
    dist, h = random_instance(rng, 5)
    low = solve_tilt(dist, h, 0.01, "min")
    high = solve_tilt(dist, -h, 0.01, "max")
    assert low.optimum == pytest.approx(-high.optimum)
    assert low.beta_star == pytest.approx(-high.beta_star)
    assert low.optimum <= dist.expect(h)


def test_saturated_tilt(coin):
    h = np.array([0.0, 1.0])
    solution = solve_tilt(coin, h, 2.0)
    assert solution.saturated
    assert solution.optimum == 1.0
    assert solution.eta == pytest.approx(math.log(2.0))
    assert math.isinf(solution.beta_star)

    below = solve_tilt(coin, h, 0.5)
    assert not below.saturated
    assert below.optimum < 1.0


def test_callable_cost(three_point):
    by_values = solve_tilt(three_point, np.array([0.0, 1.0, 4.0]), 0.05)
    by_callable = solve_tilt(three_point, lambda x: x**2, 0.05)
    assert by_values.optimum == pytest.approx(by_callable.optimum)


def test_solve_tilt_rejects_bad_input(three_point):
    with pytest.raises(ValidationError):
        solve_tilt(three_point, [1.0, 2.0], 0.1)
    with pytest.raises(ValidationError):
        solve_tilt(three_point, [1.0, 2.0, 3.0], -0.1)
    with pytest.raises(ValidationError):
        solve_tilt(three_point, [1.0, 2.0, 3.0], 0.1, "sideways")  # type: ignore[arg-type]
    with pytest.raises(DegeneracyError) as exc:
        solve_tilt(three_point, [3.0, 3.0, 3.0], 0.1)
    assert "non-degenerate" in exc.value.assumption


def test_dual_objective_attains_optimum(rng):
    dist, h = random_instance(rng, 6)
    eta = 0.02
    solution = solve_tilt(dist, h, eta)
    alpha_star = 1.0 / solution.beta_star
    best = dual_objective(dist, h, alpha_star, eta)
    assert best == pytest.approx(solution.optimum, rel=1e-9)
    for factor in (0.8, 0.95, 1.05, 1.25):
        assert dual_objective(dist, h, factor * alpha_star, eta) >= best
    with pytest.raises(ValidationError):
        dual_objective(dist, h, 0.0, eta)


def test_expansion_remainder_order(rng):
    etas = np.geomspace(1e-6, 1e-3, 6)
    for _ in range(20):
        dist, h = random_instance(rng, int(rng.integers(3, 8)))
        zeta1, zeta2 = expansion1d(dist, h)
        mean = dist.expect(h)
        errors = [abs(solve_tilt(dist, h, eta).optimum - (mean + zeta1 * math.sqrt(eta) + zeta2 * eta)) for eta in etas]
        assert loglog_slope(etas, errors) >= 1.4


def test_moment_form_matches_zeta2(rng):
    dist, h = random_instance(rng, 7)
    _, zeta2 = expansion1d(dist, h)
    assert second_order_moment_form(dist, h) == pytest.approx(2 * zeta2)


def test_gaussian_first_order_derivative():
    dist = gaussian_distribution(2.0)
    zeta1, zeta2 = expansion1d(dist, dist.atoms)
    assert zeta1 == pytest.approx(math.sqrt(2.0) * 2.0, abs=1e-3)
    assert zeta2 == pytest.approx(0.0, abs=1e-9)


def test_bernoulli_closed_form():
    p = 0.3
    dist = FiniteDistribution(np.array([0.0, 1.0]), np.array([1 - p, p]))
    zeta1, zeta2 = expansion1d(dist, dist.atoms)
    assert zeta1 == pytest.approx(math.sqrt(2 * p * (1 - p)))
    assert zeta2 == pytest.approx((1 - 2 * p) / 3)
