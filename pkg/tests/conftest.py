import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from gridmarket.model import MarketInstance
from gridmarket.solver import SolverOptions
from gridmarket.transform import Weights


@pytest.fixture
def single_pair():
    """E=10, D=5, gamma=20, pi=50, alpha=0.3, P=80, D*=[5]."""
    return MarketInstance.create(
        surplus=[10.0],
        demand=[5.0],
        pcc_buy_price=[20.0],
        pcc_sell_price=[50.0],
        price_cap=[80.0],
        discount_cap=0.3,
        target_demand=[[5.0]],
    )


@pytest.fixture
def single_pair_weights():
    return Weights.create([0.1, 0.3, 0.6], 1, 1)


@pytest.fixture
def two_by_two():
    return MarketInstance.create(
        surplus=[40.0, 40.0],
        demand=[100.0, 100.0],
        pcc_buy_price=[20.0, 20.0],
        pcc_sell_price=[50.0, 50.0],
        price_cap=[100.0, 100.0],
        discount_cap=0.2,
        target_demand=[[30.0, 10.0], [10.0, 30.0]],
        region_of_agent=[1, 2, 1, 2],
    )


@pytest.fixture
def fast_opts():
    return SolverOptions(max_iter=3000, num_restarts=3, rng_seed=0)


def random_instance(rng, num_ders, num_loads, alpha=0.3):
    surplus = rng.uniform(5.0, 50.0, num_ders)
    demand = rng.uniform(5.0, 50.0, num_loads)
    target = rng.uniform(0.0, 1.0, (num_loads, num_ders))
    target = target / target.sum(axis=1, keepdims=True) * demand[:, None] * rng.uniform(0.2, 0.9, (num_loads, 1))
    return MarketInstance.create(
        surplus=surplus,
        demand=demand,
        pcc_buy_price=np.full(num_ders, 20.0),
        pcc_sell_price=np.full(num_loads, 50.0),
        price_cap=rng.uniform(60.0, 120.0, num_ders),
        discount_cap=alpha,
        target_demand=target,
    )
