import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def binom_sigma(n, p):
    return float(np.sqrt(n * p * (1 - p)))


@pytest.fixture(scope="session")
def code():
    from uwqkd.postproc.ldpc import default_code
    return default_code()
