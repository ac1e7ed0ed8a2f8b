"""Desk-scale controlled systems with known dynamics, integrated with RK4.

Three systems are provided:

* ``pendulum``: theta'' = -(g/l) sin(theta) - beta theta' + u / (m l^2), with
  theta measured from the hanging-down rest position. The swing-up reward
  penalises the wrapped angle from upright, ``wrap(theta - pi)``.
* ``duffing``: x'' = -delta x' - alpha x - beta x^3 + u.
* ``linear``: x' = A x + B u with a fixed diagonalizable A (two lightly damped
  oscillatory modes sharing decay rate 0.2).

All functions accept batched states (..., raw_dim) and actions (..., action_dim).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SimulationBlowup

ENV_NAMES = ("pendulum", "duffing", "linear")


def _linear_system():
    blocks = np.zeros((4, 4))
    for i, w in enumerate((1.0, 2.5)):
        blocks[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[-0.2, w], [-w, -0.2]]
    basis = np.array(
        [
            [1.0, 0.5, 0.0, 0.2],
            [0.0, 1.0, 0.3, 0.0],
            [0.2, 0.0, 1.0, 0.4],
            [0.0, 0.3, 0.0, 1.0],
        ]
    )
    a = basis @ blocks @ np.linalg.inv(basis)
    b = np.array([[1.0], [0.5], [-0.5], [1.0]])
    return a, b


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int  # width of the observation fed to models
    raw_dim: int  # width of the integrated physical state
    action_dim: int
    action_low: tuple
    action_high: tuple
    dt: float
    params: dict = field(default_factory=dict, hash=False, compare=True)
    reward: str = "quadratic"

    def __post_init__(self):
        if len(self.action_low) != self.action_dim or len(self.action_high) != self.action_dim:
            raise ConfigError("action bounds must have action_dim entries")
        if any(lo > hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ConfigError("action bounds must be ordered (low <= high)")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")

    @property
    def low(self):
        return np.asarray(self.action_low, dtype=np.float64)

    @property
    def high(self):
        return np.asarray(self.action_high, dtype=np.float64)

    def to_descriptor(self) -> dict:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "raw_dim": self.raw_dim,
            "action_dim": self.action_dim,
            "action_low": list(self.action_low),
            "action_high": list(self.action_high),
            "dt": self.dt,
            "params": self.params,
            "reward": self.reward,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> EnvSpec:
        d = dict(d)
        d["action_low"] = tuple(d["action_low"])
        d["action_high"] = tuple(d["action_high"])
        return cls(**d)


def make_env(name: str, dt: float | None = None, **overrides) -> EnvSpec:
    if name == "pendulum":
        params = {"g": 9.81, "length": 1.0, "mass": 1.0, "damping": 0.1}
        params.update(overrides)
        umax = params.pop("max_torque", 5.0)
        return EnvSpec("pendulum", 3, 2, 1, (-umax,), (umax,), dt or 0.05, params, "swingup")
    if name == "duffing":
        params = {"alpha": -1.0, "beta": 1.0, "delta": 0.2}
        params.update(overrides)
        return EnvSpec("duffing", 2, 2, 1, (-1.0,), (1.0,), dt or 0.05, params, "quadratic")
    if name == "linear":
        a, b = _linear_system()
        params = {"A": a.tolist(), "B": b.tolist()}
        return EnvSpec("linear", 4, 4, 1, (-1.0,), (1.0,), dt or 0.05, params, "quadratic")
    raise ConfigError(f"unknown environment {name!r}; choose from {', '.join(ENV_NAMES)}")


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def dynamics(spec: EnvSpec, x, u):
    p = spec.params
    if spec.name == "pendulum":
        th, om = x[..., 0], x[..., 1]
        ml2 = p["mass"] * p["length"] ** 2
        acc = -(p["g"] / p["length"]) * np.sin(th) - p["damping"] * om + u[..., 0] / ml2
        return np.stack([om, acc], axis=-1)
    if spec.name == "duffing":
        pos, vel = x[..., 0], x[..., 1]
        acc = -p["delta"] * vel - p["alpha"] * pos - p["beta"] * pos**3 + u[..., 0]
        return np.stack([vel, acc], axis=-1)
    a = np.asarray(p["A"])
    b = np.asarray(p["B"])
    return x @ a.T + u @ b.T


def rk4_step(spec: EnvSpec, x, u, dt):
    k1 = dynamics(spec, x, u)
    k2 = dynamics(spec, x + 0.5 * dt * k1, u)
    k3 = dynamics(spec, x + 0.5 * dt * k2, u)
    k4 = dynamics(spec, x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def reward(spec: EnvSpec, x, u):
    if spec.reward == "swingup":
        err = wrap_angle(x[..., 0] - np.pi)
        return -(err**2 + 0.1 * x[..., 1] ** 2 + 0.001 * u[..., 0] ** 2)
    return -np.sum(x * x, axis=-1) - 0.01 * np.sum(u * u, axis=-1)


def observe(spec: EnvSpec, x):
    if spec.name == "pendulum":
        return np.stack([np.cos(x[..., 0]), np.sin(x[..., 0]), x[..., 1]], axis=-1)
    return np.array(x, dtype=np.float64, copy=True)


def upright_error(x):
    """Pendulum angle from upright, wrapped."""
    return wrap_angle(np.asarray(x)[..., 0] - np.pi)


def env_step(spec: EnvSpec, state, action, dt=None):
    """Advance one step. The reward is r(state, clipped action)."""
    state = np.asarray(state, dtype=np.float64)
    action = np.clip(np.asarray(action, dtype=np.float64), spec.low, spec.high)
    r = reward(spec, state, action)
    with np.errstate(over="ignore", invalid="ignore"):
        nxt = rk4_step(spec, state, action, dt or spec.dt)
    if not np.all(np.isfinite(nxt)):
        raise SimulationBlowup(f"{spec.name} simulation produced a non-finite state")
    return nxt, r


def pendulum_energy(spec: EnvSpec, x):
    p = spec.params
    ml2 = p["mass"] * p["length"] ** 2
    return 0.5 * ml2 * x[..., 1] ** 2 + p["mass"] * p["g"] * p["length"] * (1.0 - np.cos(x[..., 0]))


def pendulum_speed_cap(spec: EnvSpec, initial_speed: float = 1.0) -> float:
    """Upper bound on |theta'| for trajectories started with |theta'| <= initial_speed.

    Per unit inertia, V = theta'^2 / 2 + (g/l)(1 - cos theta) obeys
    dV/dt <= |theta'| (u_max / (m l^2) - beta |theta'|), so V can only grow while
    |theta'| < u_max / (beta m l^2). Hence sup |theta'| <= sqrt(2 V_max) with
    V_max = max(V(0), (u_max / (beta m l^2))^2 / 2 + 2 g / l).
    """
    p = spec.params
    ubar = float(np.max(np.abs(spec.high))) / (p["mass"] * p["length"] ** 2)
    v0 = 0.5 * initial_speed**2 + 2.0 * p["g"] / p["length"]
    vmax = max(v0, 0.5 * (ubar / p["damping"]) ** 2 + 2.0 * p["g"] / p["length"])
    return float(np.sqrt(2.0 * vmax))


def sample_initial_state(spec: EnvSpec, rng: np.random.Generator):
    if spec.name == "pendulum":
        return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])
    if spec.name == "duffing":
        return np.array([rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0)])
    return rng.normal(0.0, 0.5, size=spec.raw_dim)


def hanging_state(spec: EnvSpec):
    return np.zeros(spec.raw_dim)


def sample_actions(spec: EnvSpec, policy: str, T: int, rng: np.random.Generator):
    lo, hi = spec.low, spec.high
    if policy == "uniform":
        return rng.uniform(lo, hi, size=(T, spec.action_dim))
    if policy == "sinusoid":
        amp = rng.uniform(0.2, 1.0, size=spec.action_dim)
        period = rng.uniform(10.0, 100.0, size=spec.action_dim)  # in steps
        phase = rng.uniform(0.0, 2 * np.pi, size=spec.action_dim)
        t = np.arange(T)[:, None]
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        return mid + half * amp * np.sin(2 * np.pi * t / period + phase)
    raise ConfigError(f"unknown policy {policy!r}; choose 'uniform' or 'sinusoid'")


def simulate(spec: EnvSpec, x0, actions):
    """Roll the true system forward. Returns raw states (..., T+1, raw) and rewards (..., T)."""
    x = np.asarray(x0, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    T = actions.shape[-2]
    states = np.empty(actions.shape[:-1] + (spec.raw_dim,))
    states = np.concatenate([x[..., None, :], states], axis=-2)
    rewards = np.empty(actions.shape[:-1])
    for t in range(T):
        x, r = env_step(spec, x, actions[..., t, :])
        states[..., t + 1, :] = x
        rewards[..., t] = r
    return states, rewards


def spec_json(spec: EnvSpec) -> str:
    return json.dumps(spec.to_descriptor(), sort_keys=True)
