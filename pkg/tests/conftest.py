import numpy as np
import pytest

from cvqkdsim.core import RandomSource


@pytest.fixture
def src():
    return RandomSource(b"unit-test-seed", 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
