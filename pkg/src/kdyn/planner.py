"""Cross-entropy-method MPC over a learned latent model or the true simulator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rollout as ro
from .envs import EnvSpec, env_step, observe, reward, rk4_step
from .errors import ConfigError, ShapeError
from .model import KoopmanModel, LatentModel


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 20
    population: int = 256
    elite_frac: float = 0.1
    iterations: int = 6
    action_low: tuple | None = None  # None: take the environment bounds
    action_high: tuple | None = None
    init_std: float = 0.5  # fraction of the action range
    std_floor: float = 0.05  # same units as init_std
    discount: float = 1.0
    warm_start: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("plan horizon must be >= 1")
        if self.population < 1 or self.iterations < 1:
            raise ConfigError("population and iterations must be >= 1")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ConfigError("elite_frac must lie in (0, 1]")
        if self.init_std <= 0 or self.std_floor < 0:
            raise ConfigError("init_std must be positive and std_floor non-negative")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")

    @property
    def n_elite(self) -> int:
        return max(1, int(round(self.elite_frac * self.population)))

    def bounds(self, spec: EnvSpec | None = None, action_dim: int | None = None):
        lo, hi = self.action_low, self.action_high
        if lo is None or hi is None:
            if spec is None:
                if action_dim is None:
                    raise ConfigError("action bounds unknown: pass an env spec or set action_low/high")
                lo, hi = (-1.0,) * action_dim, (1.0,) * action_dim
            else:
                lo, hi = spec.action_low, spec.action_high
        return np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)


def _discounts(h: int, gamma: float) -> np.ndarray:
    return gamma ** np.arange(h)


def evaluate_plan(model: LatentModel, s0, action_seqs, discount: float = 1.0) -> np.ndarray:
    """Predicted return of each action sequence from observation ``s0``.

    ``action_seqs`` has shape (N, H, da) or (H, da); the reward head sees
    latents x_0..x_{H-1} paired with actions a_0..a_{H-1}.
    """
    a = np.asarray(action_seqs, dtype=np.float64)
    single = a.ndim == 2
    if single:
        a = a[None]
    if a.ndim != 3 or a.shape[1] < 1 or a.shape[2] != model.cfg.action_dim:
        raise ShapeError(f"action sequences must be (N, H>=1, {model.cfg.action_dim}), got {np.shape(action_seqs)}")
    s0 = np.broadcast_to(np.asarray(s0, dtype=np.float64), (a.shape[0], model.cfg.state_dim))
    x0 = model.encode_state(s0)
    xhat = model._dyn_forward(x0, model.encode_action(a))[0]
    lat = np.concatenate([x0[:, None, :], xhat[:, :-1, :]], axis=1)
    r = model.predict_reward(lat, a)
    ret = r @ _discounts(a.shape[1], discount)
    return ret[0] if single else ret


def evaluate_plan_sequential(model: KoopmanModel, s0, action_seq, discount: float = 1.0) -> float:
    """Reference evaluation of one sequence by stepping the latent recurrence."""
    a = np.asarray(action_seq, dtype=np.float64)
    op = model.operator()
    x = ro.unpack(model.encode_state(np.asarray(s0, dtype=np.float64)))
    u = ro.unpack(model.encode_action(a))
    total = 0.0
    for t in range(a.shape[0]):
        total += discount**t * float(model.predict_reward(ro.pack(x), a[t]))
        x = ro.step(op, x, u[t])
    return total


class TrueDynamics:
    """Planning objective that rolls the ground-truth simulator (the oracle controller)."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec

    def __call__(self, state, action_seqs, discount: float = 1.0) -> np.ndarray:
        a = np.clip(np.asarray(action_seqs, dtype=np.float64), self.spec.low, self.spec.high)
        x = np.broadcast_to(np.asarray(state, dtype=np.float64), a.shape[:1] + (self.spec.raw_dim,))
        ret = np.zeros(a.shape[0])
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(a.shape[1]):
                ret += discount**t * reward(self.spec, x, a[:, t])
                x = rk4_step(self.spec, x, a[:, t], self.spec.dt)
        return np.where(np.isfinite(ret), ret, -np.inf)


@dataclass
class CemResult:
    mean: np.ndarray
    best_sequence: np.ndarray
    best_return: float
    best_history: list = field(default_factory=list)  # best-ever sampled return after each iteration
    elite_history: list = field(default_factory=list)  # mean elite return per iteration


def _objective(model_or_fn, discount):
    if isinstance(model_or_fn, LatentModel):
        return lambda s0, a: evaluate_plan(model_or_fn, s0, a, discount)
    return lambda s0, a: model_or_fn(s0, a, discount)


def cem_plan(model_or_fn, s0, cfg: PlanConfig, seed=0, init_mean=None, spec: EnvSpec | None = None) -> CemResult:
    """Plan an action sequence by iterated Gaussian refitting.

    ``model_or_fn`` is a :class:`LatentModel` or a callable
    ``f(s0, seqs, discount) -> returns``. With population 1 and one elite this
    is plain random search around the initial mean.
    """
    action_dim = model_or_fn.cfg.action_dim if isinstance(model_or_fn, LatentModel) else None
    if action_dim is None:
        action_dim = spec.action_dim if spec is not None else len(cfg.action_low or (0.0,))
    lo, hi = cfg.bounds(spec, action_dim)
    span = hi - lo
    h = cfg.horizon
    mean = np.zeros((h, action_dim)) + 0.5 * (lo + hi) if init_mean is None else np.array(init_mean, dtype=np.float64)
    if mean.shape != (h, action_dim):
        raise ShapeError(f"init_mean must be ({h}, {action_dim}), got {mean.shape}")
    std = np.broadcast_to(cfg.init_std * span, mean.shape).copy()
    floor = cfg.std_floor * span
    rng = np.random.default_rng(seed)
    f = _objective(model_or_fn, cfg.discount)
    best_seq, best_ret = mean.copy(), -np.inf
    res = CemResult(mean, best_seq, best_ret)
    for _ in range(cfg.iterations):
        samples = mean + std * rng.standard_normal((cfg.population, h, action_dim))
        samples = np.clip(samples, lo, hi)
        rets = np.asarray(f(s0, samples), dtype=np.float64)
        rets = np.where(np.isfinite(rets), rets, -np.inf)
        order = np.argsort(-rets, kind="stable")
        elite = samples[order[: cfg.n_elite]]
        if rets[order[0]] > best_ret:
            best_ret, best_seq = float(rets[order[0]]), samples[order[0]].copy()
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), floor)
        res.best_history.append(best_ret)
        res.elite_history.append(float(np.mean(rets[order[: cfg.n_elite]])))
    res.mean, res.best_sequence, res.best_return = mean, best_seq, best_ret
    return res


@dataclass
class Episode:
    states: np.ndarray  # raw simulator states, (T+1, raw_dim)
    actions: np.ndarray  # (T, da)
    rewards: np.ndarray  # (T,)

    @property
    def total_return(self) -> float:
        return float(np.sum(self.rewards))

    def rows(self):
        for t in range(len(self.actions)):
            yield {
                "step": t,
                "state": " ".join(f"{v:.10g}" for v in self.states[t]),
                "action": " ".join(f"{v:.10g}" for v in self.actions[t]),
                "reward": float(self.rewards[t]),
            }


def mpc_episode(spec: EnvSpec, model_or_fn, cfg: PlanConfig, episode_len: int, seed=0, x0=None) -> Episode:
    """Receding-horizon control: plan each step, apply the first action to the simulator.

    The learned model plans from observations; the ground-truth objective
    plans from raw states. Simulator blowups propagate.
    """
    if episode_len < 0:
        raise ConfigError("episode_len must be >= 0")
    x = np.zeros(spec.raw_dim) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    states, actions, rewards = [x.copy()], [], []
    learned = isinstance(model_or_fn, LatentModel)
    mean = None
    for t in range(episode_len):
        s_plan = observe(spec, x) if learned else x
        res = cem_plan(model_or_fn, s_plan, cfg, seed=[seed, t], init_mean=mean, spec=spec)
        a = res.mean[0]
        if cfg.warm_start:
            mean = np.concatenate([res.mean[1:], np.zeros((1, spec.action_dim))])
        x, r = env_step(spec, x, a)
        states.append(x.copy())
        actions.append(np.clip(a, spec.low, spec.high))
        rewards.append(float(r))
    return Episode(
        np.array(states).reshape(-1, spec.raw_dim),
        np.array(actions).reshape(-1, spec.action_dim),
        np.array(rewards),
    )
