import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracheat.subordinator import StableParams

settings.register_profile(
    "fracheat", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("fracheat")


def levy_density(s):
    """Closed-form density of the α=1/2 subordinator."""
    s = np.asarray(s, dtype=float)
    return s ** -1.5 * np.exp(-1.0 / (4.0 * s)) / (2.0 * math.sqrt(math.pi))


def poisson_kernel(t, r):
    return t / (math.pi * (t * t + r * r))


@pytest.fixture(scope="session")
def stable():
    cache = {}

    def get(alpha):
        if alpha not in cache:
            cache[alpha] = StableParams(alpha)
        return cache[alpha]
    return get
