import numpy as np
import pytest

from lowlight.tensor import dtype_mode


@pytest.fixture(autouse=True)
def f64():
    with dtype_mode(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
