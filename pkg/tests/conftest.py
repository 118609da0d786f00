import numpy as np
import pytest
from hypothesis import settings

from graphcp.rng import RandomPolicy
from graphcp.synth import generate_sbm, oracle_probabilities

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def policy():
    return RandomPolicy(12345)


@pytest.fixture(scope="session")
def small_world():
    """400-node homophilous SBM with oracle probabilities and resampled labels."""
    pol = RandomPolicy(7)
    graph, y = generate_sbm(400, 4, 0.05, 0.005, pol)
    probs, labels = oracle_probabilities(y, 4, 0.6, pol)
    return graph, probs, labels


def random_probs(rng, n, K):
    return rng.dirichlet(np.ones(K), size=n)
