import numpy as np
import pytest

from adoptnet.dynamics import ModelParams, State
from adoptnet.network import build_network


def scalar_params(beta=0.5, gamma=0.4, theta=0.2, delta=0.3, alpha=0.2, lam=0.5, xi=0.3, x0=0.5):
    one = build_network([[1.0]])
    return ModelParams([beta], [gamma], [theta], [delta], [alpha], [lam], [xi], one, one, [x0])


def random_params(rng, n, r0_high=False):
    """Unstructured random parameters for oracles; ``r0_high`` pushes
    contagion up and churn down."""
    from adoptnet.network import random_strongly_connected

    W = random_strongly_connected(n, 0.4, seed=rng)
    Wt = random_strongly_connected(n, 0.4, seed=rng)
    if r0_high:
        beta = rng.uniform(0.7, 1.0, n)
        delta = rng.uniform(0.02, 0.1, n)
    else:
        beta = rng.uniform(0.0, 1.0, n)
        delta = rng.uniform(0.0, 1.0, n)
    total = rng.uniform(0.05, 0.95, n)
    share = rng.uniform(0.0, 1.0, n)
    w = rng.dirichlet([1.0, 1.0, 1.0], n)
    alpha = 0.05 + 0.95 * w[:, 0]
    lam = 0.95 * w[:, 1]
    xi = 1.0 - alpha - lam
    x0 = rng.uniform(0.5, 1.0, n) if r0_high else rng.uniform(0.0, 1.0, n)
    return ModelParams(beta, total * share, total * (1 - share), delta, alpha, lam, np.maximum(xi, 0.0), W, Wt, x0)


def diffused_params(rng, n, margin=1.05):
    """Random parameters with ``r0_min > margin``."""
    from adoptnet.analysis import r0_extremes

    while True:
        p = random_params(rng, n, r0_high=True)
        if r0_extremes(p)[0] > margin:
            return p


def random_state(rng, n):
    a = rng.uniform(0, 1, n)
    d = rng.uniform(0, 1, n) * (1 - a)
    return State(a, d, rng.uniform(0, 1, n))


@pytest.fixture
def scalar():
    return scalar_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
