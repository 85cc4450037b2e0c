import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kronlearn.data import BipartiteDataset
from kronlearn.kron import SampledKronOperator

settings.register_profile(
    "kronlearn", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("kronlearn")


def random_operator(rng, max_dim=8, max_edges=64):
    a, b, c, d = rng.integers(1, max_dim + 1, size=4)
    e, f = rng.integers(1, max_edges + 1, size=2)
    M = rng.uniform(-1, 1, size=(a, b))
    N = rng.uniform(-1, 1, size=(c, d))
    return SampledKronOperator(M, N, rng.integers(0, a, f), rng.integers(0, c, f),
                               rng.integers(0, b, e), rng.integers(0, d, e))


def random_dataset(rng, m, q, n, d=2, r=3, classification=True):
    flat = rng.choice(m * q, size=n, replace=False)
    s, e = np.divmod(flat, q)
    y = rng.choice([-1.0, 1.0], size=n) if classification else rng.standard_normal(n)
    return BipartiteDataset(rng.standard_normal((m, d)), rng.standard_normal((q, r)), s, e, y)


def edge_kernel_dense(K, G, s1, e1, s2, e2):
    """Explicit R (G kron K) C^T from the Kronecker definition."""
    return np.kron(G, K)[np.ix_(e1 * K.shape[0] + s1, e2 * K.shape[1] + s2)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
