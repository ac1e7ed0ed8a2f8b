"""Dense networks with explicit forward/backward passes.

Weights are stored ``(in, out)`` so a batch ``x`` of shape (..., in) maps to
``x @ W + b``. The activation is applied between layers, never after the last.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CacheMismatchError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


@dataclass
class MlpParams:
    layers: list  # [(W, b), ...]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for (w0, _), (w1, _) in zip(self.layers, self.layers[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ShapeError(f"layer dims do not chain: {w0.shape} -> {w1.shape}")

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def token(self):
        return tuple((id(w), w.shape) for w, _ in self.layers)


@dataclass
class MlpCache:
    token: tuple
    lead_shape: tuple
    inputs: list  # input to each layer, flattened to 2-D
    pre: list  # pre-activation of each hidden layer
    post: list


def kaiming_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_mlp(sizes, rng, activation="relu") -> MlpParams:
    layers = [
        (kaiming_uniform(a, b, rng), np.zeros(b))
        for a, b in zip(sizes[:-1], sizes[1:])
    ]
    return MlpParams(layers, activation)


def mlp_forward(p: MlpParams, x):
    x = np.asarray(x)
    if x.shape[-1] != p.in_dim:
        raise ShapeError(f"input dim {x.shape[-1]} does not match first layer {p.in_dim}")
    lead = x.shape[:-1]
    h = x.reshape(-1, x.shape[-1])
    inputs, pre, post = [], [], []
    n = len(p.layers)
    for i, (w, b) in enumerate(p.layers):
        inputs.append(h)
        z = h @ w + b
        if i < n - 1:
            h = _act(p.activation, z)
            pre.append(z)
            post.append(h)
        else:
            h = z
    return h.reshape(lead + (p.out_dim,)), MlpCache(p.token(), lead, inputs, pre, post)


def mlp_backward(p: MlpParams, cache: MlpCache, grad_out):
    """Returns ``([(dW, db), ...], grad_input)``."""
    if cache.token != p.token():
        raise CacheMismatchError("cache was produced by a different network")
    grad_out = np.asarray(grad_out)
    if grad_out.shape != cache.lead_shape + (p.out_dim,):
        raise CacheMismatchError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{cache.lead_shape + (p.out_dim,)}"
        )
    g = grad_out.reshape(-1, p.out_dim)
    grads = [None] * len(p.layers)
    for i in range(len(p.layers) - 1, -1, -1):
        w, _ = p.layers[i]
        grads[i] = (cache.inputs[i].T @ g, g.sum(axis=0))
        g = g @ w.T
        if i > 0:
            g = _act_grad(p.activation, cache.pre[i - 1], cache.post[i - 1], g)
    return grads, g.reshape(cache.lead_shape + (p.in_dim,))
