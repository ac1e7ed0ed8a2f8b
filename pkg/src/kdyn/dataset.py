"""Trajectory datasets: generation and the KDYN binary file format.

File layout (little-endian)::

    b"KDYN"                      magic
    u32 version                  FORMAT_VERSION
    u32 n, n bytes               UTF-8 JSON descriptor (env spec, policy, seed, split)
    u32 state_dim, u32 action_dim
    u32 n_traj, u32 T
    f64[n_traj, T+1, state_dim]  states
    f64[n_traj, T, action_dim]   actions
    f64[n_traj, T]               rewards
    u32 crc32                    of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .envs import EnvSpec, observe, sample_actions, sample_initial_state, simulate
from .errors import DataFormatError

MAGIC = b"KDYN"
FORMAT_VERSION = 1


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, state_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: np.ndarray  # (T,)
    dt: float

    def __post_init__(self):
        T = self.actions.shape[0]
        if T < 1 or self.states.shape[0] != T + 1 or self.rewards.shape != (T,):
            raise ValueError("trajectory needs T >= 1 actions, T+1 states and T rewards")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not all(np.all(np.isfinite(a)) for a in (self.states, self.actions, self.rewards)):
            raise ValueError("trajectory contains non-finite entries")


@dataclass
class Dataset:
    spec: EnvSpec
    states: np.ndarray  # (n, T+1, state_dim)
    actions: np.ndarray  # (n, T, action_dim)
    rewards: np.ndarray  # (n, T)
    train_idx: np.ndarray
    test_idx: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def length(self) -> int:
        return self.actions.shape[1]

    @property
    def dt(self) -> float:
        return self.spec.dt

    def trajectory(self, i) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.rewards[i], self.dt)

    def to_bytes(self) -> bytes:
        desc = {
            "env": self.spec.to_descriptor(),
            "train_idx": [int(i) for i in self.train_idx],
            "test_idx": [int(i) for i in self.test_idx],
            "meta": self.meta,
        }
        blob = json.dumps(desc, sort_keys=True).encode("utf-8")
        n, T1, ds = self.states.shape
        da = self.actions.shape[2]
        parts = [
            MAGIC,
            struct.pack("<I", FORMAT_VERSION),
            struct.pack("<I", len(blob)),
            blob,
            struct.pack("<IIII", ds, da, n, T1 - 1),
            np.ascontiguousarray(self.states, dtype="<f8").tobytes(),
            np.ascontiguousarray(self.actions, dtype="<f8").tobytes(),
            np.ascontiguousarray(self.rewards, dtype="<f8").tobytes(),
        ]
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @property
    def checksum(self) -> str:
        return f"{zlib.crc32(self.to_bytes()):08x}"


def split_indices(n: int, seed: int, train_frac: float = 0.8):
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(train_frac * n + 0.5))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def generate_dataset(spec: EnvSpec, policy: str = "uniform", n_traj: int = 100, T: int = 200, seed: int = 0) -> Dataset:
    """Seeded trajectory set; trajectory i draws from its own stream (seed, i)."""
    if n_traj < 1 or T < 1:
        raise ValueError("n_traj and T must be >= 1")
    x0 = np.empty((n_traj, spec.raw_dim))
    actions = np.empty((n_traj, T, spec.action_dim))
    for i in range(n_traj):
        rng = np.random.default_rng([seed, i])
        x0[i] = sample_initial_state(spec, rng)
        actions[i] = sample_actions(spec, policy, T, rng)
    raw, rewards = simulate(spec, x0, actions)
    train_idx, test_idx = split_indices(n_traj, seed)
    return Dataset(
        spec=spec,
        states=observe(spec, raw),
        actions=actions,
        rewards=rewards,
        train_idx=train_idx,
        test_idx=test_idx,
        meta={"policy": policy, "seed": int(seed), "n_traj": int(n_traj), "T": int(T)},
    )


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(
                f"truncated file while reading {what}: need {n} bytes, {len(self.data) - self.pos} left",
                offset=self.pos,
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64(self, shape, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def dataset_from_bytes(data: bytes) -> Dataset:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise DataFormatError("not a KDYN dataset (bad magic bytes)", offset=0)
    version = r.u32("format version")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported format version {version}", offset=4)
    n_desc = r.u32("descriptor length")
    desc_at = r.pos
    try:
        desc = json.loads(r.take(n_desc, "descriptor").decode("utf-8"))
        spec = EnvSpec.from_descriptor(desc["env"])
    except DataFormatError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"corrupt descriptor: {exc}", offset=desc_at) from None
    dims_at = r.pos
    ds, da, n, T = (r.u32(w) for w in ("state_dim", "action_dim", "n_traj", "T"))
    if ds != spec.state_dim or da != spec.action_dim:
        raise DataFormatError("header dims disagree with the env descriptor", offset=dims_at)
    states = r.f64((n, T + 1, ds), "states")
    actions = r.f64((n, T, da), "actions")
    rewards = r.f64((n, T), "rewards")
    crc_at = r.pos
    stored = r.u32("crc32")
    if r.pos != len(data):
        raise DataFormatError(f"{len(data) - r.pos} trailing bytes after checksum", offset=r.pos)
    if zlib.crc32(data[:crc_at]) != stored:
        raise DataFormatError("checksum mismatch", offset=crc_at)
    return Dataset(
        spec=spec,
        states=states,
        actions=actions,
        rewards=rewards,
        train_idx=np.asarray(desc["train_idx"], dtype=np.int64),
        test_idx=np.asarray(desc["test_idx"], dtype=np.int64),
        meta=desc.get("meta", {}),
    )


def save_dataset(path, ds: Dataset) -> None:
    Path(path).write_bytes(ds.to_bytes())


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def export_jsonl(path, ds: Dataset) -> None:
    """Human-readable export: a header line, then one line per trajectory."""
    train = set(int(i) for i in ds.train_idx)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"env": ds.spec.to_descriptor(), "meta": ds.meta}) + "\n")
        for i in range(ds.n_traj):
            rec = {
                "traj": i,
                "split": "train" if i in train else "test",
                "states": ds.states[i].tolist(),
                "actions": ds.actions[i].tolist(),
                "rewards": ds.rewards[i].tolist(),
            }
            fh.write(json.dumps(rec) + "\n")
