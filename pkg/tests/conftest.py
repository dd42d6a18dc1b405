import numpy as np
import pytest

from fedopl.datagen import ClientEnvSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_env():
    """A small homogeneous-style environment: d=4, q=10, unit variances."""
    theta = np.random.default_rng(7).standard_normal((4, 10))
    return ClientEnvSpec(client_id=0, sigma2=1.0, rho2=1.0, theta_star=theta)
