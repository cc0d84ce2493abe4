import numpy as np
import pytest

from klsens.cost import HorizonSpec, iid_sum_tail
from klsens.model import FiniteDistribution


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture
def three_point():
    return FiniteDistribution(np.array([0.0, 1.0, 2.0]), np.array([0.2, 0.5, 0.3]))


@pytest.fixture
def coin():
    return FiniteDistribution(np.array([0.0, 1.0]), np.array([0.5, 0.5]))


@pytest.fixture
def sum_tail_cost():
    return iid_sum_tail(2.5, HorizonSpec.fixed(3))
