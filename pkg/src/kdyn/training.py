"""Training loop over uniformly sampled sub-trajectories."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, RolloutBlowup, TrainingDivergence
from .losses import (  # noqa: F401  re-exported
    LossBreakdown,
    LossWeights,
    consistency_loss,
    reward_prediction_loss,
    state_prediction_loss,
)
from .model import Batch, LatentModel, ModelConfig, build_model
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

METRIC_FIELDS = (
    "epoch",
    "total",
    "consistency",
    "state",
    "reward",
    "grad_norm_mean",
    "grad_norm_max",
    "envelope_max",
    "wall_clock",
)


@dataclass
class TrainConfig:
    horizon: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    steps_per_epoch: int = 0  # 0 = one full pass over all (trajectory, start) pairs
    seed: int = 0
    w_consistency: float = 0.001
    w_state: float = 1.0
    w_reward: float = 1.0
    stop_grad_targets: bool = True
    normalize_rewards: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if min(self.w_consistency, self.w_state, self.w_reward) < 0:
            raise ConfigError("loss weights must be >= 0")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_consistency, self.w_state, self.w_reward)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        return cls(model=model, **d)


@dataclass
class TrainState:
    model: LatentModel
    adam: AdamState
    rng: np.random.Generator
    history: list = field(default_factory=list)

    @property
    def epoch(self) -> int:
        return len(self.history)


def sample_pairs(ds: Dataset, horizon: int, split="train") -> np.ndarray:
    idx = ds.train_idx if split == "train" else ds.test_idx
    if horizon > ds.length:
        raise ConfigError(
            f"horizon {horizon} exceeds stored trajectory length {ds.length}; "
            "regenerate data with a larger T or lower the horizon"
        )
    starts = np.arange(ds.length - horizon + 1)
    return np.array([(i, s) for i in idx for s in starts], dtype=np.int64).reshape(-1, 2)


def gather(ds: Dataset, pairs: np.ndarray, horizon: int) -> Batch:
    traj = pairs[:, 0][:, None]
    t = pairs[:, 1][:, None] + np.arange(horizon + 1)
    return Batch(
        states=ds.states[traj, t],
        actions=ds.actions[traj, t[:, :-1]],
        rewards=ds.rewards[traj, t[:, :-1]],
    )


def new_state(cfg: TrainConfig, ds: Dataset) -> TrainState:
    mc = cfg.model
    if mc.state_dim != ds.spec.state_dim or mc.action_dim != ds.spec.action_dim:
        mc = ModelConfig(**{**mc.to_dict(), "state_dim": ds.spec.state_dim, "action_dim": ds.spec.action_dim})
        cfg.model = mc
    model = build_model(mc, seed=cfg.seed)
    if cfg.normalize_rewards:
        r = ds.rewards[ds.train_idx]
        model.reward_shift = float(r.mean())
        model.reward_scale = float(r.std()) or 1.0
    return TrainState(model, AdamState.zeros_like(model.params), np.random.default_rng([cfg.seed, 1]))


def train(ds: Dataset, cfg: TrainConfig, state: TrainState | None = None, callback=None) -> TrainState:
    """Train (or resume) until ``cfg.epochs`` epochs are recorded in the history.

    Non-finite losses or gradients raise :class:`TrainingDivergence`; the
    exception carries the partial history as ``exc.history``. A ``callback``
    returning True ends training after the current epoch.
    """
    if cfg.horizon > ds.length:
        raise ConfigError(f"horizon {cfg.horizon} exceeds stored trajectory length {ds.length}")
    pairs = sample_pairs(ds, cfg.horizon)
    if len(pairs) == 0:
        raise ConfigError("training split is empty")
    state = state or new_state(cfg, ds)
    model = state.model
    clip = {"koopman.mu": (cfg.model.mu_lo, cfg.model.mu_hi)}
    bsz = min(cfg.batch_size, len(pairs))
    n_batches = max(1, len(pairs) // bsz)
    if cfg.steps_per_epoch:
        n_batches = min(n_batches, cfg.steps_per_epoch)
    t0 = time.perf_counter()

    while state.epoch < cfg.epochs:
        epoch = state.epoch + 1
        perm = state.rng.permutation(len(pairs))
        sums = np.zeros(4)
        norms, envs = [], []
        for b in range(n_batches):
            batch = gather(ds, pairs[perm[b * bsz : (b + 1) * bsz]], cfg.horizon)
            if cfg.normalize_rewards:
                batch.rewards = (batch.rewards - model.reward_shift) / model.reward_scale
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    losses, grads, diag = model.loss_and_grad(batch, cfg.weights, cfg.stop_grad_targets)
            except RolloutBlowup as exc:
                err = TrainingDivergence(f"epoch {epoch}, batch {b}: {exc}", epoch=epoch)
                err.history = state.history
                raise err from exc
            vals = np.array([losses.total, losses.consistency, losses.state, losses.reward])
            if not np.all(np.isfinite(vals)) or not np.isfinite(diag.grad_norm):
                err = TrainingDivergence(
                    f"epoch {epoch}, batch {b}: non-finite loss (total={losses.total}, "
                    f"consistency={losses.consistency}, state={losses.state}, reward={losses.reward}, "
                    f"grad_norm={diag.grad_norm})",
                    epoch=epoch,
                )
                err.history = state.history
                raise err
            try:
                adam_step(model.params, grads, state.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, clip)
            except TrainingDivergence as exc:
                exc.epoch = epoch
                exc.history = state.history
                raise
            sums += vals
            norms.append(diag.grad_norm)
            envs.append(diag.envelope_ratio)
        envs = np.asarray(envs)
        rec = {
            "epoch": epoch,
            "total": float(sums[0] / n_batches),
            "consistency": float(sums[1] / n_batches),
            "state": float(sums[2] / n_batches),
            "reward": float(sums[3] / n_batches),
            "grad_norm_mean": float(np.mean(norms)),
            "grad_norm_max": float(np.max(norms)),
            "envelope_max": float(np.max(envs)) if np.any(np.isfinite(envs)) else float("nan"),
            "wall_clock": time.perf_counter() - t0,
        }
        state.history.append(rec)
        log.info("epoch %d total=%.6g state=%.6g reward=%.6g", epoch, rec["total"], rec["state"], rec["reward"])
        if callback is not None and callback(state, rec):
            break
    return state
