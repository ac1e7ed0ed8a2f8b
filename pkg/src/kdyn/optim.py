"""Adam over flat ``{name: array}`` parameter dicts."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergence


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: dict) -> AdamState:
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip=None):
    """In-place Adam update with bias correction.

    ``clip`` maps parameter names to ``(lo, hi)`` bounds enforced after the
    update. A non-finite gradient raises :class:`TrainingDivergence` before any
    parameter is touched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for parameter {name!r}", param=name)
    if not state.m:
        state.m = {k: np.zeros_like(p) for k, p in params.items()}
        state.v = {k: np.zeros_like(p) for k, p in params.items()}
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    for name, (lo, hi) in (clip or {}).items():
        if name in params:
            np.clip(params[name], lo, hi, out=params[name])
    return params, state
