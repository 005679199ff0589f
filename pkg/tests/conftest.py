import numpy as np
import pytest

from atomfunnel.calibration import Context


@pytest.fixture(scope="session")
def ctx():
    """Default-config simulation products, shared across the whole session."""
    return Context()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
