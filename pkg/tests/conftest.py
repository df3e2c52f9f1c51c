import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("flowstab", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "flowstab"))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))
