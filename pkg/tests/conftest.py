import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jgl.coeffstream import UpsilonParams, sample_dumitriu_edelman, sample_upsilon

settings.register_profile("jgl", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("jgl")

CRITICAL = UpsilonParams(0.6, 0.1, 1.0, 1.0)
SUPERCRITICAL = UpsilonParams(0.7, 0.0, 1.0, 1.0)
SUBCRITICAL = UpsilonParams(0.4, 0.1, 1.0, 2.0)


@pytest.fixture
def critical_stream():
    return sample_upsilon(CRITICAL, seed=11)


@pytest.fixture
def de_stream():
    return sample_dumitriu_edelman(2.0, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
