import numpy as np
import pytest

from ggmoran.urn_weights import GGParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def params():
    return GGParams(0.5, 1.0)


GRID_ALPHAS = (0.25, 0.5, 0.75)
GRID_BETAS = (0.5, 1.0, 5.0)
