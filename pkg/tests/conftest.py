import numpy as np
import pytest

from python_ruelle.counting import TransitionCounter
from python_ruelle.transfer import transition_from_matrix


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run acceptance-scale tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def counter():
    client = TransitionCounter(threads=1)
    yield client
    client.close()


@pytest.fixture
def flip_chain():
    return transition_from_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]), lag_time=1.0)


def random_gamma(n: int, seed: int) -> np.ndarray:
    """Dense positive column-stochastic matrix."""
    gamma = np.random.default_rng(seed).random((n, n)) + 0.01
    return gamma / gamma.sum(axis=0)


def smooth_gamma(n: int, seed: int, tau: float = 0.2, noise: float = 0.01) -> np.ndarray:
    """
    Gaussian OU kernel on n cells of [-4, 4] with a small multiplicative
    perturbation; leading eigenvalues close to exp(-k tau), well separated.
    """
    c = np.linspace(-4, 4, n + 1)
    c = 0.5 * (c[1:] + c[:-1])
    decay = np.exp(-tau)
    var = 1 - decay**2
    kernel = np.exp(-((c[:, None] - decay * c[None, :]) ** 2) / (2 * var))
    kernel *= 1 + noise * np.random.default_rng(seed).random((n, n))
    return kernel / kernel.sum(axis=0)


@pytest.fixture
def random_chain():
    def make(n: int, seed: int = 0, lag_time: float = 1.0):
        return transition_from_matrix(random_gamma(n, seed), lag_time=lag_time)

    return make
