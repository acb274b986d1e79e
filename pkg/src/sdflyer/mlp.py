"""Dense feed-forward ReLU networks with analytic backpropagation, a diagonal
Gaussian exploration head, and Adam.

Weights follow the ``y = W x + b`` convention with ``W`` of shape
``(out_dim, in_dim)``; batched inputs are ``(B, in_dim)``. Hidden layers are
ReLU, the output layer is identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mathcore import SeededRng

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class DenseNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        dims = self.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("parameter count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} shape mismatch: {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations kept for backprop."""

    inputs: list[np.ndarray]
    pre_acts: list[np.ndarray]
    squeezed: bool


@dataclass
class GaussianHead:
    """State-independent diagonal Gaussian over actions."""

    log_std: np.ndarray

    def clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    @property
    def std(self) -> np.ndarray:
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))


@dataclass
class GradientSet:
    """Partials matching a DenseNet (and optionally its Gaussian head)."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_log_std: np.ndarray | None = None

    def as_list(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for dw, db in zip(self.d_weights, self.d_biases):
            out.extend((dw, db))
        if self.d_log_std is not None:
            out.append(self.d_log_std)
        return out


def _orthogonal(rows: int, cols: int, rng: SeededRng) -> np.ndarray:
    a = rng.normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    s = np.sign(np.diag(r))
    q *= np.where(s == 0.0, 1.0, s)  # fix QR sign ambiguity for determinism
    return np.ascontiguousarray(q if rows >= cols else q.T)


def init_dense(layer_dims: list[int], rng: SeededRng, out_gain: float = 0.01) -> DenseNet:
    """Orthogonal-style init: gain sqrt(2) on hidden layers, ``out_gain`` on the
    output layer so initial actions stay small."""
    weights, biases = [], []
    n = len(layer_dims) - 1
    for i in range(n):
        gain = out_gain if i == n - 1 else np.sqrt(2.0)
        weights.append(gain * _orthogonal(layer_dims[i + 1], layer_dims[i], rng))
        biases.append(np.zeros(layer_dims[i + 1]))
    return DenseNet(list(layer_dims), weights, biases)


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network; returns output and the cache backward() needs."""
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.shape[1] != net.layer_dims[0]:
        raise ValueError(f"input dim {x.shape[1]} != {net.layer_dims[0]}")
    inputs, pre_acts = [], []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(x)
        z = x @ w.T + b
        pre_acts.append(z)
        x = z if i == net.n_layers - 1 else np.maximum(z, 0.0)
    out = x[0] if squeezed else x
    return out, ForwardCache(inputs, pre_acts, squeezed)


def backward(net: DenseNet, cache: ForwardCache, grad_out: np.ndarray) -> GradientSet:
    """Exact analytic gradients of sum(grad_out * output) w.r.t. all parameters."""
    if len(cache.inputs) != net.n_layers:
        raise ValueError("forward cache does not match network")
    delta = np.asarray(grad_out, dtype=np.float64)
    if cache.squeezed:
        delta = delta[None, :]
    d_weights: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * net.n_layers  # type: ignore[list-item]
    for i in range(net.n_layers - 1, -1, -1):
        d_weights[i] = delta.T @ cache.inputs[i]
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * (cache.pre_acts[i - 1] > 0.0)
    return GradientSet(d_weights, d_biases)


def log_prob(mean: np.ndarray, head: GaussianHead, action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density of action(s) under N(mean, exp(log_std)^2)."""
    std = head.std
    z = (np.asarray(action) - np.asarray(mean)) / std
    return -0.5 * (z * z).sum(axis=-1) - np.log(std).sum() - 0.5 * z.shape[-1] * _LOG_2PI


def log_prob_grads(
    mean: np.ndarray, head: GaussianHead, action: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample partials of log_prob w.r.t. mean and log_std."""
    std = head.std
    z = (np.asarray(action) - np.asarray(mean)) / std
    return z / std, z * z - 1.0


def entropy(head: GaussianHead) -> float:
    return float(np.sum(head.log_std) + 0.5 * head.log_std.size * (1.0 + _LOG_2PI))


def sample_action(mean: np.ndarray, head: GaussianHead, rng: SeededRng) -> np.ndarray:
    return np.asarray(mean) + head.std * rng.normal(np.shape(mean))


@dataclass
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    cfg: AdamConfig,
) -> None:
    """One bias-corrected Adam update, applied to params in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
