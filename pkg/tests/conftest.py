import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "metrix",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("metrix")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
