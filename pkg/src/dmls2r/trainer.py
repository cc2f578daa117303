"""Alternate training of the two steps, checkpoints, and the symmetrized predictor."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .dml import RLLConfig, dml_epoch
from .psm import build_pairs, psm_epoch
from .siamese import SiameseModel, init_siamese, model_from_dict, model_to_dict

CHECKPOINT_KIND = "dmls2r-train-v1"


@dataclass(frozen=True)
class TrainConfig:
    cycles: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    rll: RLLConfig = field(default_factory=RLLConfig)
    seed: int = 0
    hidden: tuple[int, ...] = (100, 100)
    use_dml: bool = True              # False gives the step-1-only ablation
    epoch_semantics: str = "cycles"   # "total": ``cycles`` counts single-step epochs
    shared_optimizer: bool = True
    normalize_embeddings: bool = False
    plateau_patience: int | None = None
    plateau_tol: float = 1e-4

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epoch_semantics not in ("cycles", "total"):
            raise ValueError("epoch_semantics must be 'cycles' or 'total'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        d["rll"] = RLLConfig(**d.get("rll", {}))
        d["hidden"] = tuple(d.get("hidden", (100, 100)))
        return cls(**d)


@dataclass
class TrainHistory:
    psm: list[float] = field(default_factory=list)
    rll: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def to_dict(self, timing: bool = False) -> dict:
        d = {"psm": list(self.psm), "rll": list(self.rll)}
        if timing:
            d["seconds"] = list(self.seconds)
        return d


@dataclass
class TrainState:
    """Everything needed to resume a run bit-for-bit."""
    model: SiameseModel
    opt_psm: nn.AdamState
    opt_dml: nn.AdamState
    rng: np.random.Generator
    cycle: int
    history: TrainHistory

    def to_dict(self) -> dict:
        return {
            "kind": CHECKPOINT_KIND,
            "cycle": self.cycle,
            "model": model_to_dict(self.model),
            "opt_psm": self.opt_psm.to_dict(),
            "opt_dml": None if self.opt_dml is self.opt_psm else self.opt_dml.to_dict(),
            "rng": self.rng.bit_generator.state,
            "history": self.history.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainState:
        if d.get("kind") != CHECKPOINT_KIND:
            raise ValueError(f"not a training checkpoint: kind={d.get('kind')!r}")
        opt_psm = nn.AdamState.from_dict(d["opt_psm"])
        opt_dml = opt_psm if d["opt_dml"] is None else nn.AdamState.from_dict(d["opt_dml"])
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        h = d["history"]
        return cls(model_from_dict(d["model"]), opt_psm, opt_dml, rng, d["cycle"],
                   TrainHistory(list(h["psm"]), list(h["rll"])))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _plateaued(values: list[float], patience: int, tol: float) -> bool:
    if len(values) <= patience:
        return False
    window = values[-(patience + 1):]
    return all(abs(b - a) <= tol * max(abs(a), 1e-12) for a, b in zip(window[:-1], window[1:]))


def init_state(input_dim: int, cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    model = init_siamese(input_dim, int(rng.integers(2**32)), cfg.hidden, cfg.normalize_embeddings)
    opt = nn.AdamState(lr=cfg.lr)
    opt_dml = opt if cfg.shared_optimizer else nn.AdamState(lr=cfg.lr)
    return TrainState(model, opt, opt_dml, rng, 0, TrainHistory())


def alternate_train(X_labeled, y_labeled, X_unlabeled, cfg: TrainConfig, state: TrainState | None = None,
                    callback=None, diagnostics=None):
    """Run PSM / DML epochs in alternation.

    Each cycle is one PSM epoch followed by one DML epoch. With
    ``epoch_semantics="total"`` the budget counts single-step epochs, so 30
    means 15 cycles. Passing ``state`` resumes from a checkpoint and runs
    ``cfg.cycles`` cycles in total. ``callback(state)`` fires after every cycle.
    Returns the final TrainState (model and history inside).
    """
    X_labeled = np.asarray(X_labeled, dtype=np.float64)
    y_labeled = np.asarray(y_labeled, dtype=np.float64)
    X_unlabeled = np.asarray(X_unlabeled, dtype=np.float64)
    if cfg.use_dml and X_unlabeled.shape[0] < 2 * cfg.rll.k:
        raise ValueError(f"k > M/2: need M >= 2k unlabeled samples (k={cfg.rll.k}, M={X_unlabeled.shape[0]})")

    pairs = build_pairs(y_labeled)
    if state is None:
        state = init_state(X_labeled.shape[1], cfg)

    if cfg.epoch_semantics == "cycles":
        n_cycles, last_psm_only = cfg.cycles, False
    else:
        n_cycles, last_psm_only = (cfg.cycles + 1) // 2, cfg.cycles % 2 == 1

    hist = state.history
    while state.cycle < n_cycles:
        t0 = time.perf_counter()
        shuffle_seed = int(state.rng.integers(2**32))
        _, _, lp = psm_epoch(state.model, pairs, X_labeled, state.opt_psm, cfg.batch_size, shuffle_seed)
        hist.psm.append(lp)
        final = state.cycle == n_cycles - 1
        if cfg.use_dml and not (final and last_psm_only):
            diag = [] if diagnostics is not None else None
            _, _, lr_ = dml_epoch(state.model, X_labeled, X_unlabeled, cfg.rll, state.opt_dml, diag)
            hist.rll.append(lr_)
            if diagnostics is not None:
                diagnostics.append({"cycle": state.cycle, "anchors": diag})
        hist.seconds.append(time.perf_counter() - t0)
        state.cycle += 1
        if callback is not None:
            callback(state)
        if cfg.plateau_patience:
            p, tol = cfg.plateau_patience, cfg.plateau_tol
            if _plateaued(hist.psm, p, tol) and (not cfg.use_dml or _plateaued(hist.rll, p, tol)):
                break
    return state


# --------------------------------------------------------------------------
# prediction
# --------------------------------------------------------------------------

def _pair_matrix(m, A, B):
    if hasattr(m, "pair_matrix"):
        return m.pair_matrix(A, B)
    na, nb_ = A.shape[0], B.shape[0]
    return np.asarray(m.pair_forward(np.repeat(A, nb_, axis=0), np.tile(B, (na, 1)))).reshape(na, nb_)


def predict_batch(m, X, X_labeled, y_labeled, chunk: int = 4096) -> np.ndarray:
    """Average over labeled i of (f(x, x_i) - f(x_i, x)) / 2 + y_i.

    ``m`` is anything with ``pair_forward`` (and optionally ``pair_matrix``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    X_labeled = np.atleast_2d(np.asarray(X_labeled, dtype=np.float64))
    y_labeled = np.asarray(y_labeled, dtype=np.float64)
    if y_labeled.shape[0] == 0:
        raise ValueError("empty labeled set")
    n = y_labeled.shape[0]
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], chunk):
        xs = X[s:s + chunk]
        fwd = _pair_matrix(m, xs, X_labeled)          # f(x*, x_i)
        rev = _pair_matrix(m, X_labeled, xs).T        # f(x_i, x*)
        terms = (fwd - rev) / 2.0 + y_labeled[None, :]
        # sorted sequential sum: result does not depend on labeled-set order
        terms = np.sort(terms, axis=1)
        acc = np.zeros(xs.shape[0])
        for i in range(n):
            acc += terms[:, i]
        out[s:s + chunk] = acc / n
    return out


def predict(m, x_star, X_labeled, y_labeled) -> float:
    return float(predict_batch(m, np.atleast_2d(x_star), X_labeled, y_labeled)[0])
