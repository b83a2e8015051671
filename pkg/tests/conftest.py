import numpy as np
import pytest

from hjnet.network import build_network


def star_edges(lengths=(1.0, 1.5, 0.7)):
    g = 1.0 / len(lengths)
    return [(0, i + 1, L, 1.0, g, 1.0) for i, L in enumerate(lengths)]


@pytest.fixture
def star():
    return build_network(star_edges())


@pytest.fixture
def loop():
    return build_network([(0, 0, 1.0, 1.0, 0.5, 0.5)])


@pytest.fixture
def segment():
    return build_network([(0, 1, 1.0, 1.0, 1.0, 1.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
