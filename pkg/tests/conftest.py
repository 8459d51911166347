import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from feedcap import channels

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def bsc01():
    return channels.bsc(0.1)


@pytest.fixture
def csi():
    return channels.csi_switching()
