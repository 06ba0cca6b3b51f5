import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture
def rng():
    return np.random.default_rng(20260818)


@pytest.fixture
def scalar_space():
    from ibvlab.spaces import DiscreteSpace

    return DiscreteSpace(1, 1.0)


@pytest.fixture
def chain_space():
    from ibvlab.spaces import DiscreteSpace

    return DiscreteSpace(8, 10.0 / 9.0)
