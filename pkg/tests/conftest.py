import numpy as np
import pytest

from pendrot import barrier
from pendrot.model import CouplingFunction, SystemParams


@pytest.fixture(scope="session")
def arnold_064():
    return SystemParams(0.64, 0.01, CouplingFunction.arnold())


@pytest.fixture(scope="session")
def heteroclinic_064(arnold_064):
    """(neighborhood, curve) for omega = omega_tilde = 1 at eps = 0.64, mu = 0.01."""
    nb = barrier.sigma_neighborhood(arnold_064, 1.0, 1.0)
    curve = barrier.heteroclinic_minimizer(arnold_064, 1.0, 1.0, nb)
    return nb, curve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
