"""A small MLP engine: init, forward, reverse-mode backward, Adam, grad check.

Everything runs in float64. Weights are stored [fan_out, fan_in], so a layer
computes ``h @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for i, (w, b, a) in enumerate(zip(self.weights, self.biases, self.activations)):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weight {w.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i}: fan_in {w.shape[1]} != previous fan_out {self.weights[i - 1].shape[0]}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> MlpParams:
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


@dataclass
class Activations:
    """Per-layer inputs and pre-activations kept for the backward pass."""
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    output: np.ndarray


def init_mlp(layer_sizes, seed: int, hidden_activation: str = "relu",
             output_activation: str = "identity") -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"need at least two positive layer sizes, got {layer_sizes}")
    rng = np.random.default_rng(seed)
    weights, biases, acts = [], [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        acts.append(output_activation if i == len(sizes) - 2 else hidden_activation)
    return MlpParams(weights, biases, acts)


def forward(p: MlpParams, batch: np.ndarray) -> Activations:
    h = np.asarray(batch, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != p.weights[0].shape[1]:
        raise ValueError(f"batch shape {h.shape} does not match fan_in {p.weights[0].shape[1]}")
    inputs, pre = [], []
    for w, b, a in zip(p.weights, p.biases, p.activations):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if a == "relu" else z
    return Activations(inputs, pre, h)


def backward(p: MlpParams, acts: Activations, output_grad: np.ndarray) -> tuple[Gradients, np.ndarray]:
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != acts.output.shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {acts.output.shape}")
    gw = [None] * len(p.weights)
    gb = [None] * len(p.weights)
    for i in range(len(p.weights) - 1, -1, -1):
        if p.activations[i] == "relu":
            # subgradient 0 at exactly z == 0
            g = g * (acts.pre[i] > 0.0)
        gw[i] = g.T @ acts.inputs[i]
        gb[i] = g.sum(axis=0)
        g = g @ p.weights[i]
    return Gradients(gw, gb), g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
                "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d: dict) -> AdamState:
        return cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["t"],
                   [np.asarray(a, dtype=np.float64) for a in d["m"]],
                   [np.asarray(a, dtype=np.float64) for a in d["v"]])


def adam_step(p, g, s: AdamState):
    """One bias-corrected Adam update, in place. ``p`` and ``g`` expose ``arrays()``.

    A ``None`` gradient entry skips that parameter.

    Returns ``(p, s)`` for chaining.
    """
    params, grads = p.arrays(), g.arrays()
    if len(params) != len(grads):
        raise ValueError("parameter / gradient count mismatch")
    for a, ga in zip(params, grads):
        if ga is None:
            continue
        if a.shape != ga.shape:
            raise ValueError(f"gradient shape {ga.shape} != parameter shape {a.shape}")
        if not np.all(np.isfinite(ga)):
            raise FloatingPointError("non-finite gradient entries")
    if not s.m:
        s.m = [np.zeros_like(a) for a in params]
        s.v = [np.zeros_like(a) for a in params]
    s.t += 1
    bc1 = 1.0 - s.beta1 ** s.t
    bc2 = 1.0 - s.beta2 ** s.t
    for a, ga, m, v in zip(params, grads, s.m, s.v):
        if ga is None:
            # parameter outside this loss's graph: leave it and its moments alone
            continue
        m *= s.beta1
        m += (1.0 - s.beta1) * ga
        v *= s.beta2
        v += (1.0 - s.beta2) * (ga * ga)
        a -= s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)
    return p, s


def grad_check(loss_fn, p, step: float = 1e-4, n_samples: int | None = 64, seed: int = 0,
               floor: float = 1e-8) -> float:
    """Worst relative gap between analytic and central-difference gradients.

    ``loss_fn(p)`` returns ``(loss, grads)`` with ``grads.arrays()`` congruent
    to ``p.arrays()``. Entries are perturbed in place and restored. With
    ``n_samples=None`` every entry is checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = loss_fn(p)
    analytic = [np.zeros_like(a) if g is None else np.array(g, copy=True)
                for a, g in zip(p.arrays(), grads.arrays())]
    params = p.arrays()
    coords = [(ai, idx) for ai, a in enumerate(params) for idx in np.ndindex(a.shape)]
    if n_samples is not None and n_samples < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for ai, idx in coords:
        a = params[ai]
        orig = a[idx]
        a[idx] = orig + step
        lp, _ = loss_fn(p)
        a[idx] = orig - step
        lm, _ = loss_fn(p)
        a[idx] = orig
        num = (lp - lm) / (2.0 * step)
        ana = analytic[ai][idx]
        rel = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, rel)
    return worst


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def mlp_to_dict(p: MlpParams) -> dict:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": p.layer_sizes,
        "activations": list(p.activations),
        "weights": [w.ravel().tolist() for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
    }


def mlp_from_dict(d: dict) -> MlpParams:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    sizes = d["layer_sizes"]
    weights = [np.asarray(w, dtype=np.float64).reshape(fo, fi)
               for w, fi, fo in zip(d["weights"], sizes[:-1], sizes[1:])]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    return MlpParams(weights, biases, list(d["activations"]))


def save_mlp(p: MlpParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_dict(p), fh)


def load_mlp(path) -> MlpParams:
    with open(path) as fh:
        return mlp_from_dict(json.load(fh))
