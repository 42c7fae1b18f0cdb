import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gmmscape.model import Gmm4

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, n=4, batch=None, eps=1e-3):
    shape = (n, n) if batch is None else (batch, n, n)
    A = rng.standard_normal(shape)
    return A @ np.swapaxes(A, -1, -2) + eps * np.eye(n)


def random_model(rng, M, scale=1.0, cov_scale=0.3):
    A = rng.standard_normal((M, 4, 4)) * cov_scale
    covs = A @ A.transpose(0, 2, 1) + 0.05 * np.eye(4)
    return Gmm4.from_full(rng.dirichlet(np.ones(M)), scale * rng.standard_normal((M, 4)), covs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
