import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from codgrad.objectives import generate_problem
from codgrad.presets import preset

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def three():
    return preset("three-node")


@pytest.fixture(scope="session")
def five():
    return preset("five-node")


@pytest.fixture(scope="session")
def three_problem(three):
    return generate_problem(three.Q, three.N, three.code.m, seed=11)


@pytest.fixture(scope="session")
def five_problem(five):
    return generate_problem(five.Q, five.N, five.code.m, seed=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
