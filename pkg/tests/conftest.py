import numpy as np
import pytest

from plgl.registry import resolve


@pytest.fixture(scope="session")
def su2():
    return resolve("su2-lu-weinstein")


@pytest.fixture(scope="session")
def trivial():
    return resolve("trivial-3d")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
