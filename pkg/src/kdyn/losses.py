"""Horizon-summed squared-error losses.

Inputs are (..., tau, d) (or (..., tau) for rewards). Errors are summed over
the horizon and feature axes and averaged over any leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class LossWeights:
    w_consistency: float = 0.001
    w_state: float = 1.0
    w_reward: float = 1.0

    def __post_init__(self):
        for name in ("w_consistency", "w_state", "w_reward"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossBreakdown:
    total: float
    consistency: float
    state: float
    reward: float


def horizon_sse(pred, target, sum_axes=2, return_grad=False):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n_batch = int(np.prod(pred.shape[: pred.ndim - sum_axes])) if pred.ndim > sum_axes else 1
    loss = float(np.sum(diff * diff)) / n_batch
    if return_grad:
        return loss, (2.0 / n_batch) * diff
    return loss


def consistency_loss(pred_latents, true_latents, return_grad=False):
    return horizon_sse(pred_latents, true_latents, 2, return_grad)


def state_prediction_loss(decoded_preds, true_states, return_grad=False):
    return horizon_sse(decoded_preds, true_states, 2, return_grad)


def reward_prediction_loss(pred_rewards, true_rewards, return_grad=False):
    return horizon_sse(pred_rewards, true_rewards, 1, return_grad)
