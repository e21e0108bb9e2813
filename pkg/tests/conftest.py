import math

import numpy as np
import pytest

from dpdwald.families import ModelFamily, SUPPORT_CONTINUOUS
from dpdwald.glm import FixedDesign, NormalLinearModel, PoissonLogModel


class HeteroNormalFamily(ModelFamily):
    """Generic (non-GLM) test family: independent normals with known,
    observation-specific variances and mean theta1 + theta2 * z_i."""

    support = SUPPORT_CONTINUOUS
    p = 2

    def __init__(self, z, variances):
        self.z = np.asarray(z, dtype=float)
        self.v = np.asarray(variances, dtype=float)
        self.n = self.z.size

    def _mean(self, i, theta):
        return theta[0] + theta[1] * self.z[i]

    def log_density(self, i, y, theta):
        r = y - self._mean(i, theta)
        return -0.5 * math.log(2.0 * math.pi * self.v[i]) - 0.5 * r * r / self.v[i]

    def score(self, i, y, theta):
        r = y - self._mean(i, theta)
        return (r / self.v[i]) * np.array([1.0, self.z[i]])

    def integration_window(self, i, theta):
        m = self._mean(i, theta)
        half = 12.0 * math.sqrt(self.v[i])
        return m - half, m + half

    def default_init(self, data):
        X = np.column_stack([np.ones(self.n), self.z])
        beta, *_ = np.linalg.lstsq(X / np.sqrt(self.v)[:, None],
                                   data / np.sqrt(self.v), rcond=None)
        return beta

    def sample_dataset(self, theta, rng):
        means = theta[0] + theta[1] * self.z
        return means + np.sqrt(self.v) * rng.standard_normal(self.n)


@pytest.fixture(scope="session")
def hetero_family():
    rng = np.random.default_rng(11)
    z = rng.uniform(-1.0, 2.0, size=8)
    v = rng.uniform(0.5, 2.0, size=8)
    return HeteroNormalFamily(z, v)


@pytest.fixture(scope="session")
def design1_small():
    return FixedDesign.design1(10)


@pytest.fixture(scope="session")
def design1_50():
    return FixedDesign.design1(50)


@pytest.fixture(scope="session")
def normal_model_50(design1_50):
    return NormalLinearModel(design1_50)


@pytest.fixture(scope="session")
def poisson_model_50(design1_50):
    return PoissonLogModel(design1_50)


@pytest.fixture(scope="session")
def poisson_model_small(design1_small):
    return PoissonLogModel(design1_small)


@pytest.fixture(scope="session")
def normal_data_50(normal_model_50):
    theta = normal_model_50.pack([1.0, 1.0], 1.0)
    rng = np.random.Generator(np.random.Philox(key=1234))
    return normal_model_50.sample_dataset(theta, rng), theta


@pytest.fixture(scope="session")
def poisson_data_small(poisson_model_small):
    theta = np.array([0.5, 0.3])
    rng = np.random.Generator(np.random.Philox(key=4321))
    return poisson_model_small.sample_dataset(theta, rng), theta
