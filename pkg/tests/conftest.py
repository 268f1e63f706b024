import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from wdgnn.architecture import FilterTaps, GnnParams, WdGnnParams
from wdgnn.graph import Gso, normalize_adjacency

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_graph(n, rng, p=0.5, normalize=True, connected=True):
    """Symmetric Erdos-Renyi graph, redrawn until connected if asked."""
    while True:
        a = np.triu((rng.random((n, n)) < p).astype(float), 1)
        g = Gso(a + a.T)
        if not connected or g.is_connected():
            return normalize_adjacency(g) if normalize else g


def random_wdgnn(rng, f_in=2, g=3, hidden=(3,), k_wide=2, k_deep=2, n_out=2,
                 nonlinearity="tanh", bias=True):
    wide = FilterTaps(rng.normal(size=(k_wide + 1, f_in, g)))
    dims = [f_in, *hidden, g]
    layers = tuple(FilterTaps(rng.normal(size=(k_deep + 1, a, b)) / 2) for a, b in zip(dims, dims[1:]))
    biases = tuple(rng.normal(size=b) for b in dims[1:]) if bias else None
    deep = GnnParams(layers, nonlinearity, biases)
    return WdGnnParams(
        wide, deep, alpha_w=rng.normal(), alpha_d=rng.normal(), beta=rng.normal(),
        readout_w=rng.normal(size=(g, n_out)), readout_b=rng.normal(size=n_out),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def finite_difference_errors(params, s, x, upstream, h=1e-5):
    """Relative error of every backward block against central differences.

    The loss is the linear functional ``sum(out * upstream)``, whose output
    gradient is exactly ``upstream``.
    """
    from wdgnn.architecture import wdgnn_backward, wdgnn_forward

    out, cache = wdgnn_forward(s, x, params)
    grads = wdgnn_backward(cache, s, params, upstream)
    arrays = params.arrays()
    assert set(grads) == set(arrays)
    errors = {}
    for key, value in arrays.items():
        fd = np.zeros_like(value, dtype=float)
        flat = value.reshape(-1)
        for idx in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[idx] += h
            minus[idx] -= h
            lp = np.sum(wdgnn_forward(s, x, params.with_arrays({key: plus.reshape(value.shape)}))[0] * upstream)
            lm = np.sum(wdgnn_forward(s, x, params.with_arrays({key: minus.reshape(value.shape)}))[0] * upstream)
            fd.reshape(-1)[idx] = (lp - lm) / (2 * h)
        g = np.asarray(grads[key], dtype=float).reshape(fd.shape)
        scale = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        errors[key] = float(np.linalg.norm(g - fd) / scale)
    return errors


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines collected by ``tests/test_acceptance.py``."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
