import numpy as np
import pytest

from prefwalk import _backend
from prefwalk.graph import ComparisonGraph, connected_erdos_renyi
from prefwalk.simulate import setting_one_scores, setting_sampler, simulate_dataset


def _available_backends():
    out = ["python"]
    try:
        _backend.get_kernels("compiled")
    except ImportError:
        pass
    else:
        out.insert(0, "compiled")
    return out


BACKENDS = _available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def triangle():
    return ComparisonGraph(3, ((0, 1), (0, 2), (1, 2)))


@pytest.fixture
def star4():
    return ComparisonGraph(4, ((0, 1), (0, 2), (0, 3)))


@pytest.fixture(scope="session")
def small_setting_one():
    """Setting I data on a connected 8-item graph, 60 replicates."""
    g, _ = connected_erdos_renyi(8, 0.5, seed=3)
    ds = simulate_dataset(g, setting_one_scores(8), 60, setting_sampler("I"), seed=3)
    return ds


def random_connected_graphs(count, n_lo, n_hi, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(n_lo, n_hi + 1))
        g, _ = connected_erdos_renyi(n, float(rng.uniform(0.3, 0.9)), int(rng.integers(2**31)))
        out.append(g)
    return out


def centered_uniform(rng, n, scale=1.0):
    theta = rng.uniform(-scale, scale, size=n)
    return theta - theta.mean()
