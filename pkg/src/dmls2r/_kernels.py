"""Loop-heavy kernels with a numba path and a pure-numpy fallback.

Set ``DMLS2R_NO_NUMBA=1`` in the environment to force the numpy versions.
Both implementations are always importable (``*_numba`` / ``*_numpy``) so
they can be compared directly; the unsuffixed names point at the active one.
"""

import os

import numpy as np

try:
    import numba as nb
except ImportError:  # pragma: no cover
    nb = None

USE_NUMBA = nb is not None and os.environ.get("DMLS2R_NO_NUMBA", "0") not in ("1", "true", "yes")

njit_kwargs = {
    "nogil": True,
    "fastmath": False,  # strict IEEE; agrees with the numpy path to rounding
    "cache": True,
}


def _jit(fn):
    if nb is None:
        return fn
    return nb.njit(**njit_kwargs)(fn)


# --------------------------------------------------------------------------
# positive / negative set selection
# --------------------------------------------------------------------------

def select_topk_numpy(scores, k):
    """Return (pos, neg): k smallest and k largest scores.

    Ties go to the lower index. Negatives are drawn from the candidates left
    after the positives are taken, so the sets are disjoint when M >= 2k.
    """
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    pos = order[:k]
    mask = np.ones(scores.shape[0], dtype=np.bool_)
    mask[pos] = False
    rest = np.flatnonzero(mask)
    # stable sort of -score keeps ascending index among equal scores
    neg = rest[np.argsort(-scores[rest], kind="stable")[:k]]
    return pos.astype(np.int64), neg.astype(np.int64)


def _select_topk_loop(scores, k):
    m = scores.shape[0]
    order = np.argsort(scores, kind="mergesort")
    pos = np.empty(k, dtype=np.int64)
    taken = np.zeros(m, dtype=np.bool_)
    for i in range(k):
        pos[i] = order[i]
        taken[order[i]] = True
    neg = np.empty(k, dtype=np.int64)
    filled = 0
    # walk from the top of the ascending order; within a run of equal scores
    # the lowest index must come first
    hi = m - 1
    while filled < k and hi >= 0:
        lo = hi
        while lo > 0 and scores[order[lo - 1]] == scores[order[hi]]:
            lo -= 1
        for j in range(lo, hi + 1):
            idx = order[j]
            if not taken[idx] and filled < k:
                neg[filled] = idx
                filled += 1
        hi = lo - 1
    return pos, neg


select_topk_numba = _jit(_select_topk_loop)


def select_topk_batch_numpy(scores, k):
    n = scores.shape[0]
    pos = np.empty((n, k), dtype=np.int64)
    neg = np.empty((n, k), dtype=np.int64)
    for a in range(n):
        pos[a], neg[a] = select_topk_numpy(scores[a], k)
    return pos, neg


def _select_topk_batch_loop(scores, k):
    n = scores.shape[0]
    pos = np.empty((n, k), dtype=np.int64)
    neg = np.empty((n, k), dtype=np.int64)
    for a in range(n):
        p, q = _select_topk_jit(scores[a], k)
        pos[a] = p
        neg[a] = q
    return pos, neg


_select_topk_jit = select_topk_numba
select_topk_batch_numba = _jit(_select_topk_batch_loop)


# --------------------------------------------------------------------------
# weighted hinge over one set (ranked list loss building block)
# --------------------------------------------------------------------------
#
# For distances d_j within one set:
#   s_j  = tau * ws * (d_j - wb)           log-weight
#   h_j  = max(0, hs * (d_j - hb))         hinge
#   p_j  = softmax(s)_j
#   L    = sum_j p_j h_j
#   dL/dd_j = p_j * h'_j + p_j * (h_j - L) * tau * ws

def set_loss_grad_numpy(d, tau, ws, wb, hs, hb):
    """Batched weighted hinge. ``d`` is [n_sets, k].

    Returns (loss [n_sets], grad [n_sets, k], weights [n_sets, k]).
    """
    d = np.asarray(d, dtype=np.float64)
    s = tau * ws * (d - wb)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=1, keepdims=True)
    u = hs * (d - hb)
    h = np.maximum(u, 0.0)
    dh = np.where(u > 0.0, hs, 0.0)
    loss = (p * h).sum(axis=1)
    grad = p * dh + p * (h - loss[:, None]) * (tau * ws)
    return loss, grad, p


def _set_loss_grad_loop(d, tau, ws, wb, hs, hb):
    n, k = d.shape
    loss = np.zeros(n)
    grad = np.zeros((n, k))
    p = np.zeros((n, k))
    for a in range(n):
        smax = -np.inf
        for j in range(k):
            s = tau * ws * (d[a, j] - wb)
            if s > smax:
                smax = s
        tot = 0.0
        for j in range(k):
            e = np.exp(tau * ws * (d[a, j] - wb) - smax)
            p[a, j] = e
            tot += e
        for j in range(k):
            p[a, j] = p[a, j] / tot
        acc = 0.0
        for j in range(k):
            u = hs * (d[a, j] - hb)
            if u > 0.0:
                acc += p[a, j] * u
        loss[a] = acc
        for j in range(k):
            u = hs * (d[a, j] - hb)
            h = u if u > 0.0 else 0.0
            dh = hs if u > 0.0 else 0.0
            grad[a, j] = p[a, j] * dh + p[a, j] * (h - acc) * (tau * ws)
    return loss, grad, p


set_loss_grad_numba = _jit(_set_loss_grad_loop)


# --------------------------------------------------------------------------
# k-nearest-neighbour regression on raw features
# --------------------------------------------------------------------------

def knn_predict_numpy(train_x, train_y, query, k, chunk=2048):
    out = np.empty(query.shape[0])
    for start in range(0, query.shape[0], chunk):
        q = query[start:start + chunk]
        diff = q[:, None, :] - train_x[None, :, :]
        d2 = (diff * diff).sum(axis=2)
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[start:start + chunk] = train_y[idx].mean(axis=1)
    return out


def _knn_predict_loop(train_x, train_y, query, k):
    n, f = train_x.shape
    q = query.shape[0]
    out = np.empty(q)
    d2 = np.empty(n)
    for i in range(q):
        for j in range(n):
            acc = 0.0
            for c in range(f):
                diff = query[i, c] - train_x[j, c]
                acc += diff * diff
            d2[j] = acc
        idx = np.argsort(d2, kind="mergesort")
        s = 0.0
        for j in range(k):
            s += train_y[idx[j]]
        out[i] = s / k
    return out


knn_predict_numba = _jit(_knn_predict_loop)


if USE_NUMBA:
    select_topk = select_topk_numba
    select_topk_batch = select_topk_batch_numba
    set_loss_grad = set_loss_grad_numba
    knn_predict = knn_predict_numba
else:
    select_topk = select_topk_numpy
    select_topk_batch = select_topk_batch_numpy
    set_loss_grad = set_loss_grad_numpy
    knn_predict = knn_predict_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
