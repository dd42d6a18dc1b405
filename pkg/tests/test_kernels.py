import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedopl._kernels import BACKEND, _sgd_py

try:
    from fedopl._kernels import _sgd_cy
except ImportError:
    _sgd_cy = None


def run_backend(impl, order, t0=0, eta0=0.05, decay=1e-4):
    rng = np.random.default_rng(0)
    contexts = rng.standard_normal((60, 12))
    costs = rng.standard_normal((60, 3))
    weights = rng.standard_normal((3, 4))
    intercepts = rng.standard_normal(3)
    t, sse = impl.sgd_run(weights, intercepts, contexts, costs, order, eta0, decay, t0)
    return weights, intercepts, t, sse


@pytest.mark.skipif(_sgd_cy is None, reason="compiled kernel not built")
def test_backends_bit_identical():
    order = np.random.default_rng(3).integers(0, 60, size=5000).astype(np.int64)
    w1, b1, t1, s1 = run_backend(_sgd_cy, order, t0=7)
    w2, b2, t2, s2 = run_backend(_sgd_py, order, t0=7)
    assert np.array_equal(w1, w2)
    assert np.array_equal(b1, b2)
    assert t1 == t2
    assert s1 == s2  # identical accumulation order: exact


@pytest.mark.skipif(_sgd_cy is None, reason="compiled kernel not built")
@given(
    seed=st.integers(0, 2**32 - 1),
    d=st.integers(2, 6),
    q=st.integers(1, 12),
    n=st.integers(1, 40),
    steps=st.integers(0, 200),
    eta0=st.floats(1e-4, 0.2),
    decay=st.floats(0.0, 1e-2),
    t0=st.integers(0, 10_000),
)
@settings(max_examples=60, deadline=None)
def test_backends_bit_identical_property(seed, d, q, n, steps, eta0, decay, t0):
    gen = np.random.default_rng(seed)
    contexts = gen.standard_normal((n, d * q))
    costs = gen.standard_normal((n, d))
    order = gen.integers(0, n, size=steps).astype(np.int64)
    results = []
    for impl in (_sgd_cy, _sgd_py):
        weights = np.zeros((d, q))
        intercepts = np.zeros(d)
        t, sse = impl.sgd_run(weights, intercepts, contexts, costs, order, eta0, decay, t0)
        results.append((weights, intercepts, t, sse))
    (w1, b1, t1, s1), (w2, b2, t2, s2) = results
    assert np.array_equal(w1, w2) and np.array_equal(b1, b2)
    assert t1 == t2 == t0 + steps
    assert s1 == s2


def test_empty_order_is_a_no_op():
    w = np.ones((2, 3))
    b = np.ones(2)
    t, sse = _sgd_py.sgd_run(
        w, b, np.zeros((4, 6)), np.zeros((4, 2)), np.empty(0, dtype=np.int64), 0.1, 0.0, 9
    )
    assert t == 9 and sse == 0.0
    assert np.all(w == 1.0) and np.all(b == 1.0)


def test_step_counter_advances_once_per_sample():
    order = np.arange(10, dtype=np.int64)
    _, _, t, _ = run_backend(_sgd_py, order, t0=5)
    assert t == 15


def test_loss_accumulates_pre_update_half_squared_error():
    contexts = np.array([[1.0, 2.0]])
    costs = np.array([[3.0, -1.0]])
    weights = np.zeros((2, 1))
    intercepts = np.zeros(2)
    t, sse = _sgd_py.sgd_run(
        weights, intercepts, contexts, costs, np.zeros(1, dtype=np.int64), 1.0, 0.0, 0
    )
    assert sse == 0.5 * (3.0**2 + 1.0**2)
    # action 0 sees block [1.0], action 1 sees block [2.0]
    assert weights[0, 0] == 3.0 and intercepts[0] == 3.0
    assert weights[1, 0] == -2.0 and intercepts[1] == -1.0


def test_active_backend_reported():
    assert BACKEND in ("cython", "python")
