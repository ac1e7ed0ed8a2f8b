"""Horizon-wise prediction error on held-out sub-trajectories."""
from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .errors import ConfigError
from .model import LatentModel, ModelConfig
from .training import TrainConfig, gather, train

EVAL_FIELDS = ("horizon", "state_mse", "normalized_state_mse", "state_mse_at", "reward_mse")


def sample_eval_pairs(ds: Dataset, horizon: int, n_samples: int, seed: int, split="test"):
    if horizon > ds.length:
        raise ConfigError(
            f"eval horizon {horizon} exceeds stored trajectory length {ds.length}"
        )
    idx = ds.test_idx if split == "test" else ds.train_idx
    if len(idx) == 0:
        raise ConfigError(f"{split} split is empty")
    rng = np.random.default_rng([seed, 2])
    traj = rng.choice(idx, size=n_samples)
    start = rng.integers(0, ds.length - horizon + 1, size=n_samples)
    return np.stack([traj, start], axis=1)


def evaluate(
    model: LatentModel,
    ds: Dataset,
    horizon: int = 100,
    n_samples: int = 500,
    seed: int = 0,
    buckets=(1, 10, 50, 100),
    split="test",
    chunk: int = 256,
):
    """One row per bucket h <= horizon.

    ``state_mse`` averages squared error over steps 1..h and state dims;
    ``normalized_state_mse`` divides each dim by its variance over the split;
    ``state_mse_at`` is the error at step h alone; ``reward_mse`` averages
    over reward steps 0..h-1.
    """
    pairs = sample_eval_pairs(ds, horizon, n_samples, seed, split)
    idx = ds.test_idx if split == "test" else ds.train_idx
    var = ds.states[idx].reshape(-1, ds.states.shape[-1]).var(axis=0)
    var = np.where(var > 0, var, 1.0)
    se_state = np.zeros((horizon, ds.states.shape[-1]))
    se_reward = np.zeros(horizon)
    for i in range(0, len(pairs), chunk):
        b = gather(ds, pairs[i : i + chunk], horizon)
        s_hat, r_hat = model.predict(b.states[:, 0], b.actions)
        se_state += np.sum((s_hat - b.states[:, 1:]) ** 2, axis=0)
        se_reward += np.sum((r_hat - b.rewards) ** 2, axis=0)
    se_state /= len(pairs)
    se_reward /= len(pairs)
    rows = []
    for h in sorted(set(int(b) for b in buckets if b <= horizon) | {horizon}):
        rows.append(
            {
                "horizon": h,
                "state_mse": float(np.mean(se_state[:h])),
                "normalized_state_mse": float(np.mean(se_state[:h] / var)),
                "state_mse_at": float(np.mean(se_state[h - 1])),
                "reward_mse": float(np.mean(se_reward[:h])),
            }
        )
    return rows


ABLATION_FIELDS = ("mu_init", "omega_init", "seed", "state_mse", "reward_mse", "epochs", "dataset_checksum")
SCHEMES = tuple((mu, om) for mu in ("constant", "learnable") for om in ("increasing", "random"))


def ablate_init(ds: Dataset, cfg: TrainConfig, seeds=(0,), horizon: int = 100, n_samples: int = 500, log=None):
    """Train every (mu mode, omega init) combination per seed on one dataset.

    Errors are evaluated at ``horizon`` (clamped to the trajectory length).
    """
    checksum = ds.checksum
    h = min(horizon, ds.length)
    rows = []
    for mu_mode, omega_init in SCHEMES:
        for seed in seeds:
            model_cfg = ModelConfig(**{**cfg.model.to_dict(), "mu_mode": mu_mode, "omega_init": omega_init})
            run = TrainConfig.from_dict({**cfg.to_dict(), "seed": int(seed), "model": model_cfg.to_dict()})
            state = train(ds, run)
            res = evaluate(state.model, ds, h, n_samples, seed=int(seed), buckets=(h,))[-1]
            row = {
                "mu_init": mu_mode,
                "omega_init": omega_init,
                "seed": int(seed),
                "state_mse": res["state_mse"],
                "reward_mse": res["reward_mse"],
                "epochs": state.epoch,
                "dataset_checksum": checksum,
            }
            rows.append(row)
            if log:
                log(row)
    return rows
