"""Step 2: mine positive/negative unlabeled sets per labeled anchor and train
the shared embedding with a ranked list loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels, nn
from .siamese import SiameseGrads, SiameseModel, _embed_acts, _embed_backward, embed

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class RLLConfig:
    tau: float = 10.0
    alpha: float = 1.0
    margin: float = 0.4
    k: int = 5
    neg_weight: str = "rll"  # "rll": exp(tau*(alpha-d)); "shared": positive formula reused
    signed_selection: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if not 0 < self.margin < self.alpha:
            raise ValueError("margin must satisfy 0 < margin < alpha")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.neg_weight not in ("rll", "shared"):
            raise ValueError(f"neg_weight must be 'rll' or 'shared', got {self.neg_weight!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TripletSets:
    anchor: int
    positive_idx: np.ndarray
    negative_idx: np.ndarray


def _check_k(k: int, n_unlabeled: int):
    if n_unlabeled < 2 * k:
        raise ValueError(f"k > M/2: need M >= 2k unlabeled samples (k={k}, M={n_unlabeled})")


# --------------------------------------------------------------------------
# selection
# --------------------------------------------------------------------------

def select_from_scores(scores, k: int) -> tuple[np.ndarray, np.ndarray]:
    """k lowest scores as positives, k highest (not already positive) as negatives."""
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    _check_k(k, scores.shape[0])
    return _kernels.select_topk(scores, k)


def selection_scores(m, anchors, unlabeled, signed: bool = False) -> np.ndarray:
    """[N, M] matrix of f(anchor, u), absolute unless ``signed``."""
    anchors = np.atleast_2d(anchors)
    if hasattr(m, "pair_matrix"):
        s = m.pair_matrix(anchors, unlabeled)
    else:
        n, mm = anchors.shape[0], unlabeled.shape[0]
        s = m.pair_forward(np.repeat(anchors, mm, axis=0), np.tile(unlabeled, (n, 1))).reshape(n, mm)
    return s if signed else np.abs(s)


def select_sets(m, anchor, unlabeled, k: int, signed: bool = False, anchor_index: int = 0) -> TripletSets:
    unlabeled = np.atleast_2d(unlabeled)
    _check_k(k, unlabeled.shape[0])
    scores = selection_scores(m, anchor, unlabeled, signed)[0]
    pos, neg = select_from_scores(scores, k)
    return TripletSets(anchor_index, pos, neg)


def select_all(m, anchors, unlabeled, k: int, signed: bool = False):
    """Sets for every anchor plus the score matrix they were chosen from."""
    unlabeled = np.atleast_2d(unlabeled)
    _check_k(k, unlabeled.shape[0])
    scores = np.ascontiguousarray(selection_scores(m, anchors, unlabeled, signed))
    pos, neg = _kernels.select_topk_batch(scores, k)
    return [TripletSets(a, pos[a], neg[a]) for a in range(scores.shape[0])], scores


# --------------------------------------------------------------------------
# ranked list loss pieces
# --------------------------------------------------------------------------

def _kernel_params(cfg: RLLConfig, polarity: str):
    """(weight sign, weight boundary, hinge sign, hinge boundary)."""
    inner = cfg.alpha - cfg.margin
    if polarity == POSITIVE:
        return 1.0, inner, 1.0, inner
    if polarity == NEGATIVE:
        if cfg.neg_weight == "rll":
            return -1.0, cfg.alpha, -1.0, cfg.alpha
        return 1.0, inner, -1.0, cfg.alpha
    raise ValueError(f"polarity must be {POSITIVE!r} or {NEGATIVE!r}")


def rll_weight(dist, cfg: RLLConfig, polarity: str):
    ws, wb, _, _ = _kernel_params(cfg, polarity)
    return np.exp(cfg.tau * ws * (np.asarray(dist, dtype=np.float64) - wb))


def margin_loss(dist, cfg: RLLConfig, polarity: str):
    _, _, hs, hb = _kernel_params(cfg, polarity)
    return np.maximum(hs * (np.asarray(dist, dtype=np.float64) - hb), 0.0)


def set_loss_from_distances(dists, cfg: RLLConfig, polarity: str):
    """Weighted hinge over one or more sets of distances ([k] or [n_sets, k]).

    Weights are normalized within each set (log-space softmax).
    Returns (loss, d loss / d dist, normalized weights).
    """
    d = np.asarray(dists, dtype=np.float64)
    single = d.ndim == 1
    d2 = np.ascontiguousarray(np.atleast_2d(d))
    if d2.shape[1] == 0:
        raise ValueError("set must be non-empty")
    loss, grad, w = _kernels.set_loss_grad(d2, cfg.tau, *_kernel_params(cfg, polarity))
    if single:
        return float(loss[0]), grad[0], w[0]
    return loss, grad, w


def set_loss(m: SiameseModel, anchor, members, cfg: RLLConfig, polarity: str) -> float:
    e = embed(m, np.vstack([np.atleast_2d(anchor), np.atleast_2d(members)]))
    d = np.linalg.norm(e[1:] - e[0], axis=1)
    return set_loss_from_distances(d, cfg, polarity)[0]


def rll_loss_grad(m: SiameseModel, anchors, unlabeled, sets, cfg: RLLConfig):
    """Ranked list loss over all anchors with frozen sets, and its gradient.

    Returns (loss, grads, info) where info carries distances and the
    normalized weights per anchor.
    """
    anchors = np.atleast_2d(anchors)
    unlabeled = np.atleast_2d(unlabeled)
    n = anchors.shape[0]
    if len(sets) != n:
        raise ValueError(f"expected one TripletSets per anchor ({n}), got {len(sets)}")
    pos = np.stack([s.positive_idx for s in sets])
    neg = np.stack([s.negative_idx for s in sets])
    used, inv = np.unique(np.concatenate([pos.ravel(), neg.ravel()]), return_inverse=True)
    pos_r = inv[:pos.size].reshape(pos.shape)
    neg_r = inv[pos.size:].reshape(neg.shape)

    batch = np.vstack([anchors, unlabeled[used]])
    emb, acts, norm = _embed_acts(m, batch)
    ea, eu = emb[:n], emb[n:]
    g_emb = np.zeros_like(emb)

    total = 0.0
    info = {}
    for name, idx, pol in ((POSITIVE, pos_r, POSITIVE), (NEGATIVE, neg_r, NEGATIVE)):
        diff = ea[:, None, :] - eu[idx]            # [n, k, E]
        dist = np.sqrt((diff * diff).sum(axis=2))  # [n, k]
        loss, gd, w = set_loss_from_distances(dist, cfg, pol)
        total += loss.sum()
        safe = np.where(dist > 0.0, dist, 1.0)
        unit = np.where((dist > 0.0)[:, :, None], diff / safe[:, :, None], 0.0)
        contrib = gd[:, :, None] * unit / (2.0 * n)
        g_emb[:n] += contrib.sum(axis=1)
        np.add.at(g_emb, n + idx.ravel(), -contrib.reshape(-1, contrib.shape[2]))
        info[name] = {"dist": dist, "weights": w, "loss": loss}

    sub_grads, _ = _embed_backward(m, emb, acts, norm, g_emb)
    # the head is not part of this loss
    grads = SiameseGrads(sub_grads, None, None)
    return total / (2.0 * n), grads, info


def rll_loss(m: SiameseModel, anchors, unlabeled, sets, cfg: RLLConfig) -> float:
    return rll_loss_grad(m, anchors, unlabeled, sets, cfg)[0]


def dml_epoch(m: SiameseModel, labeled, unlabeled, cfg: RLLConfig, opt: nn.AdamState, diagnostics=None):
    """Reselect sets with the current model, then one full-batch Adam step.

    Returns (m, opt, pre-step loss). When ``diagnostics`` is a list, one
    record per anchor is appended (indices, weights, score margin).
    """
    unlabeled = np.atleast_2d(unlabeled)
    _check_k(cfg.k, unlabeled.shape[0])
    sets, scores = select_all(m, labeled, unlabeled, cfg.k, cfg.signed_selection)
    loss, grads, info = rll_loss_grad(m, labeled, unlabeled, sets, cfg)
    if diagnostics is not None:
        for a, s in enumerate(sets):
            diagnostics.append({
                "anchor": a,
                "positive_idx": s.positive_idx.tolist(),
                "negative_idx": s.negative_idx.tolist(),
                "score_margin": float(scores[a, s.negative_idx].min() - scores[a, s.positive_idx].max()),
                "positive_weights": info[POSITIVE]["weights"][a].tolist(),
                "negative_weights": info[NEGATIVE]["weights"][a].tolist(),
            })
    nn.adam_step(m, grads, opt)
    return m, opt, float(loss)
