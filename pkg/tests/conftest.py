import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rwrelab.env_core import Environment, reference_family

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def ref075():
    return reference_family(0.75)


@pytest.fixture(scope="session")
def ref15():
    return reference_family(1.5)


def const_env(omega, left, right):
    """Environment with constant omega over [left, right]."""
    return Environment(np.full(right - left + 1, float(omega)), left)


def rho_env(rho, left=0):
    return Environment.from_rho(np.asarray(rho, dtype=float), left)
