import math

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

from klsens.cost import CostSpec, HorizonSpec, iid_sum_tail
from klsens.errors import DegeneracyError, ValidationError
from klsens.exact1d import expansion1d
from klsens.expansion import (
    REPORT_SCHEMA,
    derive,
    derive_exact,
    dominance_check,
    gaussian_tail_g,
    gaussian_tail_parametric,
    gaussian_tail_zeta1,
    kl_for_rate_discrepancy,
    loglog_slope,
    rate_discrepancy_for_kl,
    sweep,
    sweep_to_csv,
)

from .testutils import gaussian_distribution, identity_cost, random_table_cost


def test_derive_formulas():
    report = derive(var_g=2.0, kappa3_g=0.6, nu=0.3, benchmark=4.0)
    assert report.zeta1 == pytest.approx(2.0)
    assert report.zeta2 == pytest.approx((0.2 + 0.3) / 2.0)
    assert report.relative_impact == pytest.approx(0.5)

    low = derive(var_g=2.0, kappa3_g=0.6, nu=0.3, benchmark=4.0, sense="min")
    assert low.zeta1 == pytest.approx(-2.0)
    assert low.zeta2 == pytest.approx(report.zeta2)


def test_derive_degenerate_and_bad_sense():
    with pytest.raises(DegeneracyError) as exc:
        derive(var_g=0.0, kappa3_g=0.0, nu=0.0, benchmark=1.0)
    assert "non-degenerate" in exc.value.assumption
    with pytest.raises(ValidationError):
        derive(var_g=1.0, kappa3_g=0.0, nu=0.0, benchmark=1.0, sense="up")  # type: ignore[arg-type]


def test_report_dict_with_zero_benchmark():
    report = derive(var_g=1.0, kappa3_g=0.0, nu=0.0, benchmark=0.0)
    out = report.to_dict()
    assert out["schema"] == REPORT_SCHEMA
    assert out["relative_impact"] is None
    assert out["relative_impact_defined"] is False


def test_single_draw_matches_exact1d(three_point):
    values = np.array([0.5, -1.0, 2.0])
    cost = CostSpec(h=lambda path: float(values[int(path[0])]), horizon=HorizonSpec.single())
    report = derive_exact(three_point, cost)
    zeta1, zeta2 = expansion1d(three_point, values)
    assert report.zeta1 == pytest.approx(zeta1)
    assert report.zeta2 == pytest.approx(zeta2)
    assert report.nu == 0.0
    assert report.benchmark_mean == pytest.approx(three_point.expect(values))


def test_translation_invariance_and_antisymmetry(rng):
    dist, cost = random_table_cost(rng, 3, 3)
    base = derive_exact(dist, cost)
    shifted = derive_exact(dist, cost.shifted(-7.0))
    assert shifted.zeta1 == pytest.approx(base.zeta1)
    assert shifted.zeta2 == pytest.approx(base.zeta2)
    assert shifted.benchmark_mean == pytest.approx(base.benchmark_mean - 7.0)

    low = derive_exact(dist, cost, sense="min")
    assert low.zeta1 == pytest.approx(-base.zeta1)
    assert low.zeta2 == pytest.approx(base.zeta2)


def test_random_horizon_report(three_point):
    fixed = derive_exact(three_point, iid_sum_tail(2.5, HorizonSpec.fixed(3)))
    bounded = derive_exact(three_point, iid_sum_tail(2.5, HorizonSpec.bounded(3)))
    assert bounded.zeta1 == pytest.approx(fixed.zeta1)
    assert bounded.zeta2 == pytest.approx(fixed.zeta2)
    assert bounded.benchmark_mean == pytest.approx(fixed.benchmark_mean)


def test_sweep_zero_eta_is_benchmark():
    report = derive(var_g=1.0, kappa3_g=0.3, nu=0.1, benchmark=2.0)
    line = sweep(report, [0.0])
    assert line.lower.to_pylist() == [2.0]
    assert line.upper.to_pylist() == [2.0]


def test_sweep_orders():
    report = derive(var_g=2.0, kappa3_g=0.6, nu=0.3, benchmark=4.0)
    eta = np.array([0.01, 0.04])
    first = sweep(report, eta)
    npt.assert_allclose(first.upper.to_numpy(), 4.0 + 2.0 * np.sqrt(eta))
    npt.assert_allclose(first.lower.to_numpy(), 4.0 - 2.0 * np.sqrt(eta))
    second = sweep(report, eta, order=2)
    npt.assert_allclose(second.upper.to_numpy(), 4.0 + 2.0 * np.sqrt(eta) + 0.25 * eta)
    npt.assert_allclose(second.lower.to_numpy(), 4.0 - 2.0 * np.sqrt(eta) + 0.25 * eta)

    with pytest.raises(ValidationError):
        sweep(report, [-0.1])
    with pytest.raises(ValidationError):
        sweep(report, [0.1], order=3)
    report.zeta2 = None
    with pytest.raises(ValidationError):
        sweep(report, [0.1], order=2)


def test_sweep_csv(tmp_path):
    report = derive(var_g=1.0, kappa3_g=0.0, nu=0.0, benchmark=1.0)
    path = tmp_path / "sweep.csv"
    sweep_to_csv(sweep(report, [0.0, 0.01, 0.1]), str(path))
    df = pd.read_csv(path)
    assert list(df.columns) == ["eta", "lower", "upper", "benchmark"]
    assert len(df) == 3


def test_gaussian_identity_cost():
    dist = gaussian_distribution(2.0)
    report = derive_exact(dist, identity_cost())
    assert report.zeta1 == pytest.approx(2.0 * math.sqrt(2.0), abs=1e-3)


@pytest.mark.parametrize(
    "y, T, sigma, zeta1, zeta1_tol, parametric",
    [(10.0, 5, 2.0, 0.131, 0.005, 0.104), (10.0, 10, 1.0, 0.015, 0.002, 0.012)],
)
def test_gaussian_tail_example(y, T, sigma, zeta1, zeta1_tol, parametric):
    value = gaussian_tail_zeta1(y, T, sigma)
    assert value == pytest.approx(zeta1, abs=zeta1_tol)
    rescaled = gaussian_tail_parametric(y, T, sigma)
    assert rescaled == pytest.approx(parametric, abs=1e-3)
    assert dominance_check(rescaled, 1.0, value).dominated


def test_gaussian_tail_g_limits():
    assert float(gaussian_tail_g(50.0, 10.0, 5, 2.0)) == pytest.approx(5.0)
    assert float(gaussian_tail_g(-50.0, 10.0, 5, 2.0)) == pytest.approx(0.0, abs=1e-12)
    npt.assert_array_equal(gaussian_tail_g(np.array([9.0, 11.0]), 10.0, 1, 2.0), [0.0, 1.0])


def test_dominance_check():
    result = dominance_check(param_derivative=3.0, param_kl_rate=2.0, zeta1=2.0)
    assert result.rescaled == pytest.approx(1.5)
    assert result.dominated
    assert not dominance_check(3.0, 1.0, 2.0).dominated
    with pytest.raises(ValidationError):
        dominance_check(1.0, 0.0, 1.0)


def test_rate_discrepancy_conversion():
    assert kl_for_rate_discrepancy(0.1) == pytest.approx(0.005)
    assert rate_discrepancy_for_kl(0.005) == pytest.approx(0.1)
    with pytest.raises(ValidationError):
        rate_discrepancy_for_kl(-1.0)


def test_loglog_slope():
    x = np.geomspace(1e-4, 1e-1, 5)
    assert loglog_slope(x, 3.0 * x**1.5) == pytest.approx(1.5)
    assert loglog_slope(x, -(x**2)) == pytest.approx(2.0)
