"""Siamese difference model: one shared sub-network plus a linear pair head.

``f(a, b) = w_a . e(a) + w_b . e(b) + bias`` where ``e`` is the sub-network
output and the head weight is the concatenation ``[w_a, w_b]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

MODEL_KIND = "siamese-v1"


@dataclass
class SiameseModel:
    subnet: nn.MlpParams
    head_w: np.ndarray  # [2E]
    head_b: np.ndarray  # [1]
    normalize: bool = False

    @property
    def embed_dim(self) -> int:
        return self.subnet.weights[-1].shape[0]

    @property
    def input_dim(self) -> int:
        return self.subnet.weights[0].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return self.subnet.arrays() + [self.head_w, self.head_b]

    def copy(self) -> SiameseModel:
        return SiameseModel(self.subnet.copy(), self.head_w.copy(), self.head_b.copy(), self.normalize)

    # the predictor and the selector only need these two
    def pair_forward(self, xi, xj):
        return pair_forward(self, xi, xj)

    def pair_matrix(self, A, B):
        return pair_matrix(self, A, B)


@dataclass
class SiameseGrads:
    subnet: nn.Gradients
    head_w: np.ndarray
    head_b: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return self.subnet.arrays() + [self.head_w, self.head_b]


def init_siamese(input_dim: int, seed: int, hidden=(100, 100), normalize: bool = False) -> SiameseModel:
    sub = nn.init_mlp([input_dim, *hidden], seed, hidden_activation="relu", output_activation="relu")
    e = hidden[-1]
    rng = np.random.default_rng([seed, 1])
    bound = 1.0 / np.sqrt(2 * e)
    return SiameseModel(sub, rng.uniform(-bound, bound, size=2 * e), np.zeros(1), normalize)


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

def _embed_acts(m: SiameseModel, batch):
    acts = nn.forward(m.subnet, batch)
    z = acts.output
    if not m.normalize:
        return z, acts, None
    norm = np.sqrt((z * z).sum(axis=1, keepdims=True))
    norm = np.maximum(norm, 1e-12)
    return z / norm, acts, norm


def _embed_backward(m: SiameseModel, emb, acts, norm, grad_emb):
    if m.normalize:
        # d(z/|z|) = (g - e (e.g)) / |z|
        grad_emb = (grad_emb - emb * (emb * grad_emb).sum(axis=1, keepdims=True)) / norm
    return nn.backward(m.subnet, acts, grad_emb)


def embed(m: SiameseModel, batch) -> np.ndarray:
    return _embed_acts(m, batch)[0]


def embed_distance(m: SiameseModel, xa, xj) -> float:
    e = embed(m, np.vstack([np.atleast_2d(xa), np.atleast_2d(xj)]))
    return float(np.linalg.norm(e[0] - e[1]))


# --------------------------------------------------------------------------
# difference head
# --------------------------------------------------------------------------

def pair_forward(m: SiameseModel, xi, xj) -> np.ndarray:
    """Estimated y_i - y_j for each row pair, left sample first in the concat."""
    xi, xj = np.atleast_2d(xi), np.atleast_2d(xj)
    if xi.shape[0] != xj.shape[0]:
        raise ValueError(f"batch sizes differ: {xi.shape[0]} vs {xj.shape[0]}")
    e = embed(m, np.vstack([xi, xj]))
    b = xi.shape[0]
    feat = np.hstack([e[:b], e[b:]])
    return feat @ m.head_w + m.head_b[0]


def pair_matrix(m: SiameseModel, A, B) -> np.ndarray:
    """All-pairs f(A[r], B[c]) as an [len(A), len(B)] matrix (two embeddings, no pair replication)."""
    E = m.embed_dim
    ea, eb = embed(m, np.atleast_2d(A)), embed(m, np.atleast_2d(B))
    return (ea @ m.head_w[:E])[:, None] + (eb @ m.head_w[E:])[None, :] + m.head_b[0]


def pair_forward_backward(m: SiameseModel, xi, xj, grad_out) -> tuple[np.ndarray, SiameseGrads, np.ndarray, np.ndarray]:
    """Forward plus backward of ``sum(grad_out * f(xi, xj))``.

    ``grad_out`` may be a callable mapping the forward output to its gradient.

    Both towers run as one stacked batch through the shared sub-network, so
    its gradient is the sum of the two towers' contributions.
    Returns (output, grads, grad_xi, grad_xj).
    """
    xi, xj = np.atleast_2d(xi), np.atleast_2d(xj)
    if xi.shape[0] != xj.shape[0]:
        raise ValueError(f"batch sizes differ: {xi.shape[0]} vs {xj.shape[0]}")
    b, E = xi.shape[0], m.embed_dim
    emb, acts, norm = _embed_acts(m, np.vstack([xi, xj]))
    feat = np.hstack([emb[:b], emb[b:]])
    out = feat @ m.head_w + m.head_b[0]

    if callable(grad_out):
        grad_out = grad_out(out)
    g = np.asarray(grad_out, dtype=np.float64)
    gw = feat.T @ g
    gb = np.array([g.sum()])
    gfeat = g[:, None] * m.head_w[None, :]
    gemb = np.vstack([gfeat[:, :E], gfeat[:, E:]])
    sub_grads, gx = _embed_backward(m, emb, acts, norm, gemb)
    return out, SiameseGrads(sub_grads, gw, gb), gx[:b], gx[b:]


# --------------------------------------------------------------------------
# checkpoint
# --------------------------------------------------------------------------

def model_to_dict(m: SiameseModel) -> dict:
    return {
        "kind": MODEL_KIND,
        "normalize": m.normalize,
        "subnet": nn.mlp_to_dict(m.subnet),
        "head": {"weight": m.head_w.tolist(), "bias": m.head_b.tolist()},
    }


def model_from_dict(d: dict) -> SiameseModel:
    if d.get("kind") != MODEL_KIND:
        raise ValueError(f"not a {MODEL_KIND} checkpoint: kind={d.get('kind')!r}")
    return SiameseModel(
        nn.mlp_from_dict(d["subnet"]),
        np.asarray(d["head"]["weight"], dtype=np.float64),
        np.asarray(d["head"]["bias"], dtype=np.float64),
        bool(d.get("normalize", False)),
    )
