"""numba and numpy kernel paths must agree exactly."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dmls2r import _kernels as K


@given(arrays(np.float64, st.integers(2, 60), elements=st.integers(-5, 5).map(float)),
       st.integers(1, 30))
@settings(max_examples=200, deadline=None)
def test_select_topk_paths_agree_with_ties(scores, k):
    k = min(k, scores.shape[0] // 2)
    p1, n1 = K.select_topk_numba(scores, k)
    p2, n2 = K.select_topk_numpy(scores, k)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(n1, n2)
    assert not set(p1) & set(n1)


def test_select_topk_batch_matches_rowwise():
    rng = np.random.default_rng(1)
    s = rng.random((7, 40))
    pb, nb = K.select_topk_batch_numba(s, 4)
    for a in range(7):
        p, n = K.select_topk_numpy(s[a], 4)
        np.testing.assert_array_equal(pb[a], p)
        np.testing.assert_array_equal(nb[a], n)


@pytest.mark.parametrize("params", [
    (1.0, 0.6, 1.0, 0.6),
    (-1.0, 1.0, -1.0, 1.0),
    (1.0, 0.6, -1.0, 1.0),
])
def test_set_loss_paths_agree(params):
    rng = np.random.default_rng(2)
    d = rng.uniform(0, 2, size=(9, 5))
    a = K.set_loss_grad_numba(d, 10.0, *params)
    b = K.set_loss_grad_numpy(d, 10.0, *params)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-15)


def test_set_loss_large_tau_does_not_overflow():
    d = np.array([[0.0, 50.0, 100.0]])
    loss, grad, w = K.set_loss_grad(d, 100.0, 1.0, 0.6, 1.0, 0.6)
    assert np.all(np.isfinite(loss)) and np.all(np.isfinite(grad))
    assert w.sum() == pytest.approx(1.0)


def test_knn_paths_agree():
    rng = np.random.default_rng(3)
    X, y, Q = rng.random((30, 4)), rng.random(30), rng.random((50, 4))
    np.testing.assert_allclose(K.knn_predict_numba(X, y, Q, 3), K.knn_predict_numpy(X, y, Q, 3), rtol=1e-14)


def test_backend_flag():
    assert K.backend() in ("numba", "numpy")
