"""MLP latent dynamics baseline: x_{t+1} = W2 relu(W1 [x_t, u_t] + b1) + b2."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RolloutBlowup, ShapeError
from .nets import MlpParams, mlp_backward, mlp_forward


def mlp_dynamics_step(p: MlpParams, x_latent, u_emb):
    x_latent = np.asarray(x_latent)
    u_emb = np.asarray(u_emb)
    if x_latent.shape[-1] + u_emb.shape[-1] != p.in_dim:
        raise ShapeError(
            f"latent ({x_latent.shape[-1]}) + action embedding ({u_emb.shape[-1]}) "
            f"!= network input {p.in_dim}"
        )
    out, _ = mlp_forward(p, np.concatenate([x_latent, u_emb], axis=-1))
    return out


@dataclass
class MlpRolloutCache:
    caches: list
    latent_dim: int


def mlp_rollout(p: MlpParams, x0, u_seq, return_cache=False):
    """Iterate the step network; ``u_seq`` is (..., tau, emb). Output (..., tau, latent).

    Raises :class:`RolloutBlowup` with the offending step index as soon as a
    prediction stops being finite.
    """
    x = np.asarray(x0)
    u_seq = np.asarray(u_seq)
    tau = u_seq.shape[-2]
    m = x.shape[-1]
    if m + u_seq.shape[-1] != p.in_dim:
        raise ShapeError("latent + action embedding width does not match the step network")
    out = np.empty(u_seq.shape[:-1] + (m,), dtype=np.result_type(x, u_seq))
    caches = []
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(tau):
            x, cache = mlp_forward(p, np.concatenate([x, u_seq[..., k, :]], axis=-1))
            if not np.all(np.isfinite(x)):
                raise RolloutBlowup(f"MLP rollout produced non-finite latent at step {k + 1}", step=k + 1)
            out[..., k, :] = x
            caches.append(cache)
    if return_cache:
        return out, MlpRolloutCache(caches, m)
    return out


def mlp_rollout_backward(p: MlpParams, cache: MlpRolloutCache, grad_out):
    """Backpropagation through time. Returns (layer grads, grad_x0, grad_u_seq)."""
    grad_out = np.asarray(grad_out)
    tau = grad_out.shape[-2]
    m = cache.latent_dim
    acc = [(np.zeros_like(w), np.zeros_like(b)) for w, b in p.layers]
    grad_u = np.empty(grad_out.shape[:-1] + (p.in_dim - m,), dtype=grad_out.dtype)
    carry = np.zeros_like(grad_out[..., 0, :])
    for k in range(tau - 1, -1, -1):
        g = grad_out[..., k, :] + carry
        layer_grads, g_in = mlp_backward(p, cache.caches[k], g)
        for j, (dw, db) in enumerate(layer_grads):
            acc[j][0][...] += dw
            acc[j][1][...] += db
        carry = g_in[..., :m]
        grad_u[..., k, :] = g_in[..., m:]
    return acc, carry, grad_u


def parity_hidden_width(latent_dim: int, emb_dim: int, target_params: int) -> int:
    """Hidden width whose step network has about ``target_params`` parameters."""
    per_unit = latent_dim + emb_dim + 1 + latent_dim
    return max(1, int(round((target_params - latent_dim) / per_unit)))
