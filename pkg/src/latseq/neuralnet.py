"""Small numpy multilayer perceptrons with hand-written backprop and Adam."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "relu", "identity")


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_grad(name, pre, post, g):
    if name == "tanh":
        return g * (1.0 - post * post)
    if name == "relu":
        return g * (pre > 0)
    return g


class Mlp:
    """Fully connected network.

    ``activations[i]`` is applied after layer ``i``; ``bias[i]`` toggles the
    bias vector of layer ``i``.
    """

    def __init__(self, sizes, activations, bias=True, rng: np.random.Generator | None = None):
        sizes = [int(s) for s in sizes]
        n_layers = len(sizes) - 1
        if n_layers < 1:
            raise ValueError("need at least one layer")
        if isinstance(activations, str):
            activations = [activations] * n_layers
        if isinstance(bias, bool):
            bias = [bias] * n_layers
        if len(activations) != n_layers or len(bias) != n_layers:
            raise ValueError("activations/bias must have one entry per layer")
        for a in activations:
            if a not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = sizes
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        for i in range(n_layers):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out) if bias[i] else None)
        self.version = 0

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            if b is not None:
                out.append(b)
        return out

    def mark_updated(self):
        """Invalidate caches from earlier forward passes."""
        self.version += 1

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.n_in:
            raise ValueError(f"input dimension {h.shape[1]} != {self.n_in}")
        layers = []
        for W, b, a in zip(self.weights, self.biases, self.activations):
            pre = h @ W
            if b is not None:
                pre = pre + b
            post = _act(a, pre)
            layers.append((h, pre, post))
            h = post
        cache = {"layers": layers, "version": self.version, "single": single}
        return (h[0] if single else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        """Return ``(parameter gradients, input gradient)``.

        Parameter gradients follow the order of :meth:`parameters`.
        """
        if cache.get("version") != self.version:
            raise ValueError("stale cache: network parameters changed since forward")
        g = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        grads = []
        for (h, pre, post), W, b, a in reversed(list(zip(cache["layers"], self.weights, self.biases, self.activations))):
            g = _act_grad(a, pre, post, g)
            if b is not None:
                grads.append(g.sum(axis=0))
            grads.append(h.T @ g)
            g = g @ W.T
        grads.reverse()
        return grads, (g[0] if cache["single"] else g)

    def get_state(self) -> dict:
        return {
            "sizes": self.sizes,
            "activations": self.activations,
            "bias": [b is not None for b in self.biases],
            "params": [p.ravel().tolist() for p in self.parameters()],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Mlp":
        net = cls(state["sizes"], state["activations"], state["bias"])
        params = net.parameters()
        if len(params) != len(state["params"]):
            raise ValueError("checkpoint parameter count does not match layer layout")
        for p, flat in zip(params, state["params"]):
            flat = np.asarray(flat, dtype=np.float64)
            if flat.size != p.size:
                raise ValueError(f"checkpoint array of size {flat.size} does not fit shape {p.shape}")
            p[...] = flat.reshape(p.shape)
        return net

    def copy(self) -> "Mlp":
        return Mlp.from_state(self.get_state())


@dataclass
class AdamState:
    """Adam with decoupled weight decay."""

    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params, grads):
    """Update ``params`` in place and return them."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in count")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != np.shape(g) or m.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape} grad {np.shape(g)}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= state.lr * update
    return params


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


def log_softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    return np.exp(log_softmax(logits, axis=axis))


def cross_entropy(logits, targets):
    """Mean cross-entropy over rows and its gradient w.r.t. ``logits``.

    ``logits`` is ``(..., C)`` and ``targets`` integer class indices of shape ``(...)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    logp = log_softmax(logits)
    flat = logp.reshape(-1, logp.shape[-1])
    t = targets.reshape(-1)
    n = len(t)
    loss = -flat[np.arange(n), t].mean()
    grad = np.exp(flat)
    grad[np.arange(n), t] -= 1.0
    return float(loss), (grad / n).reshape(logits.shape)


def mse(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64).reshape(pred.shape)
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def save_checkpoint(path, nets: dict, extra: dict | None = None):
    payload = {
        "format": "latseq-mlp",
        "version": CHECKPOINT_VERSION,
        "networks": {k: v.get_state() for k, v in nets.items()},
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "latseq-mlp":
        raise ValueError(f"{path}: not a latseq network checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    nets = {k: Mlp.from_state(v) for k, v in payload["networks"].items()}
    return nets, payload.get("extra", {})
