import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tdks.spectral import BoxDomain

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def line():
    """1D box (0, pi) on 64 interior nodes."""
    return BoxDomain((math.pi,), (64,))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
