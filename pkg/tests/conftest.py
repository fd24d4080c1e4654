import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from grushin_lab.chart import GrushinParams

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DEFAULT = GrushinParams(3, 1, 1.0)
SWEEP = [DEFAULT, GrushinParams(3, 2, 0.5), GrushinParams(4, 1, 2.0), GrushinParams(4, 4, 1.0)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=SWEEP, ids=lambda p: f"p{p.p}q{p.q}a{p.alpha:g}")
def params(request):
    return request.param
