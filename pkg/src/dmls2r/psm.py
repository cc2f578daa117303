"""Step 1: regress target differences over every ordered labeled pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .siamese import SiameseModel, pair_forward, pair_forward_backward


@dataclass(frozen=True)
class PairBatch:
    left: np.ndarray
    right: np.ndarray
    z: np.ndarray

    def __len__(self):
        return self.z.shape[0]


def build_pairs(targets) -> PairBatch:
    """All (i, j) with i != j, i-major order, z = y_i - y_j."""
    y = np.asarray(targets, dtype=np.float64)
    n = y.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 labeled samples to form pairs, got {n}")
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = i != j
    left, right = i[off].astype(np.int64), j[off].astype(np.int64)
    return PairBatch(left, right, y[left] - y[right])


def psm_loss(m: SiameseModel, pb: PairBatch, X) -> float:
    X = np.asarray(X, dtype=np.float64)
    pred = pair_forward(m, X[pb.left], X[pb.right])
    return float(np.mean((pb.z - pred) ** 2))


def psm_loss_grad(m: SiameseModel, pb: PairBatch, X, rows=None):
    """Mean squared pair-difference error over ``rows`` (all pairs by default) and its gradient."""
    X = np.asarray(X, dtype=np.float64)
    if rows is None:
        rows = np.arange(len(pb))
    left, right, z = pb.left[rows], pb.right[rows], pb.z[rows]
    b = z.shape[0]
    pred, grads, _, _ = pair_forward_backward(m, X[left], X[right], lambda out: 2.0 * (out - z) / b)
    return float(np.mean((pred - z) ** 2)), grads


def psm_epoch(m: SiameseModel, pb: PairBatch, X, opt: nn.AdamState, batch_size: int = 64,
              shuffle_seed: int = 0):
    """One shuffled pass of mini-batch Adam steps. Returns (m, opt, mean batch loss)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(shuffle_seed).permutation(len(pb))
    losses = []
    for start in range(0, len(pb), batch_size):
        rows = order[start:start + batch_size]
        loss, grads = psm_loss_grad(m, pb, X, rows)
        nn.adam_step(m, grads, opt)
        losses.append(loss)
    return m, opt, float(np.mean(losses))
