import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmls2r import nn
from dmls2r.dml import (NEGATIVE, POSITIVE, RLLConfig, dml_epoch, margin_loss, rll_loss,
                        rll_loss_grad, rll_weight, select_all, select_from_scores, select_sets, set_loss,
                        set_loss_from_distances)
from dmls2r.siamese import embed, init_siamese


class ScoreModel:
    """Stand-in whose f(anchor, u_i) is a fixed score per unlabeled row."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def pair_matrix(self, A, B):
        return np.tile(self.scores[: len(B)], (len(A), 1))


def sort_oracle(scores, k):
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    return set(order[:k]), set(order[-k:])


# ------------------------------------------------------------- selection

def test_select_k1():
    p, n = select_from_scores([0.1, 5.0, 0.2, 3.0], 1)
    assert (set(p), set(n)) == ({0}, {1})


def test_select_k2_against_oracle():
    s = [0.1, 5.0, 0.2, 3.0]
    p, n = select_from_scores(s, 2)
    assert (set(p), set(n)) == sort_oracle(s, 2) == ({0, 2}, {1, 3})


def test_select_all_tied():
    p, n = select_from_scores([1.0] * 5, 2)
    assert p.tolist() == [0, 1] and n.tolist() == [2, 3]


def test_select_rejects_small_pool():
    with pytest.raises(ValueError, match="k > M/2"):
        select_from_scores([1.0, 2.0, 3.0], 2)


def test_select_sets_absolute_vs_signed():
    m = ScoreModel([-9.0, 0.5, 2.0, -0.1])
    ts = select_sets(m, np.zeros(1), np.zeros((4, 1)), 1)
    assert ts.positive_idx.tolist() == [3] and ts.negative_idx.tolist() == [0]
    ts = select_sets(m, np.zeros(1), np.zeros((4, 1)), 1, signed=True)
    assert ts.positive_idx.tolist() == [0] and ts.negative_idx.tolist() == [2]


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=80, unique=True),
       st.integers(1, 40))
@settings(max_examples=200, deadline=None)
def test_select_matches_sort_oracle(scores, k):
    k = min(k, len(scores) // 2)
    p, n = select_from_scores(scores, k)
    assert (set(p.tolist()), set(n.tolist())) == sort_oracle(scores, k)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=4, max_size=50, unique=True),
       st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_selection_permutation_covariant(scores, rnd):
    k = len(scores) // 4 or 1
    perm = list(range(len(scores)))
    rnd.shuffle(perm)
    p, n = select_from_scores(scores, k)
    pp, nn_ = select_from_scores([scores[i] for i in perm], k)
    assert {perm[i] for i in pp} == set(p.tolist())
    assert {perm[i] for i in nn_} == set(n.tolist())


def test_select_sets_real_model_uses_absolute_difference():
    rng = np.random.default_rng(0)
    m = init_siamese(3, 1)
    a, U = rng.random(3), rng.random((12, 3))
    ts = select_sets(m, a, U, 3)
    f = m.pair_forward(np.tile(a, (12, 1)), U)
    assert (set(ts.positive_idx), set(ts.negative_idx)) == sort_oracle(np.abs(f).tolist(), 3)


# ------------------------------------------------------------- weights and hinges

CFG = RLLConfig(tau=10.0, alpha=1.0, margin=0.4, k=2)


def test_rll_weight_examples():
    assert rll_weight(CFG.alpha - CFG.margin, CFG, POSITIVE) == 1.0
    assert rll_weight(CFG.alpha, CFG, NEGATIVE) == 1.0
    assert rll_weight(0.7, CFG, POSITIVE) == pytest.approx(math.e, rel=1e-12)


def test_rll_weight_shared_variant_for_negatives():
    cfg = RLLConfig(neg_weight="shared")
    assert rll_weight(0.7, cfg, NEGATIVE) == pytest.approx(math.e, rel=1e-12)
    # the default mines hard negatives: closer means heavier
    assert rll_weight(0.2, CFG, NEGATIVE) > rll_weight(0.9, CFG, NEGATIVE)


def test_margin_loss_examples():
    assert margin_loss(0.6, CFG, POSITIVE) == 0.0
    assert margin_loss(1.0, CFG, NEGATIVE) == 0.0
    assert margin_loss(3.0, CFG, NEGATIVE) == 0.0
    assert margin_loss(0.9, CFG, POSITIVE) == pytest.approx(0.3)


def test_config_validation_raises():
    for kw in ({"alpha": 0.5, "margin": 0.5}, {"tau": 0}, {"k": 0}, {"neg_weight": "x"}, {"alpha": -1}):
        with pytest.raises(ValueError):
            RLLConfig(**kw)


# ------------------------------------------------------------- set and list loss

def _set_loss_direct(dists, cfg, polarity):
    """Plain loops with math.exp, no shifting."""
    if polarity == POSITIVE:
        w = [math.exp(cfg.tau * (d - (cfg.alpha - cfg.margin))) for d in dists]
        h = [max(0.0, d - (cfg.alpha - cfg.margin)) for d in dists]
    else:
        if cfg.neg_weight == "rll":
            w = [math.exp(cfg.tau * (cfg.alpha - d)) for d in dists]
        else:
            w = [math.exp(cfg.tau * (d - (cfg.alpha - cfg.margin))) for d in dists]
        h = [max(0.0, cfg.alpha - d) for d in dists]
    tot = sum(w)
    return sum(wi / tot * hi for wi, hi in zip(w, h))


def test_set_loss_singleton():
    loss, _, w = set_loss_from_distances([0.9], CFG, POSITIVE)
    assert w.tolist() == [1.0]
    assert loss == pytest.approx(0.3)


def test_set_loss_at_boundary_is_zero():
    assert set_loss_from_distances([0.6, 0.6, 0.6], CFG, POSITIVE)[0] == 0.0
    assert set_loss_from_distances([1.0, 1.0], CFG, NEGATIVE)[0] == 0.0


@pytest.mark.parametrize("neg_weight", ["rll", "shared"])
def test_set_loss_matches_direct_formula(neg_weight):
    cfg = RLLConfig(tau=3.0, alpha=1.5, margin=0.5, k=3, neg_weight=neg_weight)
    rng = np.random.default_rng(1)
    m = init_siamese(4, 2)
    a, S = rng.random(4), rng.random((3, 4))
    e = embed(m, np.vstack([a, S]))
    d = [float(np.linalg.norm(e[0] - e[i])) for i in range(1, 4)]
    for pol in (POSITIVE, NEGATIVE):
        assert set_loss(m, a, S, cfg, pol) == pytest.approx(_set_loss_direct(d, cfg, pol), rel=1e-12)


def test_normalized_weights_sum_to_one():
    rng = np.random.default_rng(2)
    for pol in (POSITIVE, NEGATIVE):
        _, _, w = set_loss_from_distances(rng.uniform(0, 3, size=(20, 5)), CFG, pol)
        assert np.all(w > 0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_set_losses_zero_when_separated():
    assert set_loss_from_distances([0.1, 0.5], CFG, POSITIVE)[0] == 0.0
    assert set_loss_from_distances([1.2, 4.0], CFG, NEGATIVE)[0] == 0.0


def _toy(n_anchor, k, seed=3, dim=4):
    rng = np.random.default_rng(seed)
    m = init_siamese(dim, seed)
    XL, U = rng.random((n_anchor, dim)), rng.random((4 * k + 2, dim))
    sets, _ = select_all(m, XL, U, k)
    return m, XL, U, sets


def _rll_direct(m, XL, U, sets, cfg):
    n = len(sets)
    total = 0.0
    for a, s in enumerate(sets):
        e_a = embed(m, XL[a:a + 1])[0]
        dp = [float(np.linalg.norm(e_a - embed(m, U[i:i + 1])[0])) for i in s.positive_idx]
        dn = [float(np.linalg.norm(e_a - embed(m, U[i:i + 1])[0])) for i in s.negative_idx]
        total += _set_loss_direct(dp, cfg, POSITIVE) + _set_loss_direct(dn, cfg, NEGATIVE)
    return total / (2 * n)


def test_rll_loss_single_anchor_closed_form():
    cfg = RLLConfig(tau=2.0, alpha=0.5, margin=0.2, k=1)
    m, XL, U, sets = _toy(1, 1)
    loss, _, info = rll_loss_grad(m, XL, U, sets, cfg)
    lp, ln = info[POSITIVE]["loss"][0], info[NEGATIVE]["loss"][0]
    assert loss == pytest.approx((lp + ln) / 2, rel=1e-14)


def test_rll_loss_matches_direct():
    cfg = RLLConfig(tau=2.0, alpha=0.5, margin=0.2, k=2)
    m, XL, U, sets = _toy(2, 2)
    assert rll_loss(m, XL, U, sets, cfg) == pytest.approx(_rll_direct(m, XL, U, sets, cfg), rel=1e-12)


def test_rll_loss_requires_one_set_per_anchor():
    m, XL, U, sets = _toy(2, 2)
    with pytest.raises(ValueError):
        rll_loss(m, XL, U, sets[:1], CFG)


@pytest.mark.parametrize("neg_weight", ["rll", "shared"])
@pytest.mark.parametrize("normalize", [False, True])
def test_rll_gradient_check(neg_weight, normalize):
    m, XL, U, sets = _toy(2, 2, seed=5, dim=3)
    m = init_siamese(3, 5, hidden=(8, 6), normalize=normalize)
    sets, _ = select_all(m, XL, U, 2)
    _, _, info = rll_loss_grad(m, XL, U, sets, RLLConfig())
    d = np.concatenate([info[POSITIVE]["dist"].ravel(), info[NEGATIVE]["dist"].ravel()])
    # put the hinge boundaries inside the distance range so both branches are exercised
    inner = float(np.median(d))
    cfg = RLLConfig(tau=4.0, alpha=inner + 0.05, margin=0.1, k=2, neg_weight=neg_weight)
    assert np.abs(d - (cfg.alpha - cfg.margin)).min() > 1e-3 and np.abs(d - cfg.alpha).min() > 1e-3
    dev = nn.grad_check(lambda p: rll_loss_grad(p, XL, U, sets, cfg)[:2], m, 1e-4, n_samples=None)
    assert dev < 1e-4


def test_rll_leaves_head_untouched():
    m, XL, U, sets = _toy(2, 2)
    _, g, _ = rll_loss_grad(m, XL, U, sets, CFG)
    assert g.head_w is None and g.head_b is None


# ------------------------------------------------------------- epoch

def test_dml_epoch_zero_lr():
    m, XL, U, _ = _toy(3, 2)
    before = [a.copy() for a in m.arrays()]
    diag = []
    dml_epoch(m, XL, U, CFG, nn.AdamState(lr=0.0), diag)
    assert len(diag) == 3
    assert all(np.array_equal(a, b) for a, b in zip(before, m.arrays()))


def test_dml_epoch_rejects_large_k():
    m, XL, U, _ = _toy(2, 2)
    with pytest.raises(ValueError, match="k > M/2"):
        dml_epoch(m, XL, U[:3], CFG, nn.AdamState())


def test_dml_epochs_reduce_loss_on_fixed_sets():
    rng = np.random.default_rng(7)
    m = init_siamese(3, 7, hidden=(16, 16))
    XL, U = rng.random((4, 3)), rng.random((30, 3))
    cfg = RLLConfig(tau=10.0, alpha=1.0, margin=0.4, k=3)
    sets, _ = select_all(m, XL, U, cfg.k)
    start = rll_loss(m, XL, U, sets, cfg)
    opt = nn.AdamState(lr=1e-2)
    for _ in range(5):
        dml_epoch(m, XL, U, cfg, opt)
    assert start > 0
    assert rll_loss(m, XL, U, sets, cfg) < start
