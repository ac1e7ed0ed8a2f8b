"""Binary checkpoints holding parameters, optimizer moments, RNG state and history.

Layout (little-endian)::

    b"KCKP"          magic
    u32 version
    u32 n, n bytes   UTF-8 JSON header (config, history, rng, tensor index)
    f64 blobs        tensors in index order
    u32 crc32        of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .model import MlpBaselineModel, model_from_params
from .optim import AdamState
from .training import TrainConfig, TrainState

MAGIC = b"KCKP"
VERSION = 1


def _tensor_items(state: TrainState):
    for k, v in state.model.params.items():
        yield f"param/{k}", v
    for k, v in state.adam.m.items():
        yield f"adam_m/{k}", v
    for k, v in state.adam.v.items():
        yield f"adam_v/{k}", v


def _model_info(model) -> dict:
    info = {"model_type": model.cfg.model_type, "n_params": model.n_params()}
    if isinstance(model, MlpBaselineModel):
        info["baseline_hidden_width"] = model.hidden_width
    return info


def checkpoint_bytes(state: TrainState, cfg: TrainConfig, meta: dict | None = None) -> bytes:
    index, blobs = [], []
    for name, arr in _tensor_items(state):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = {
        "train_config": cfg.to_dict(),
        "history": state.history,
        "rng_state": state.rng.bit_generator.state,
        "rng_kind": type(state.rng.bit_generator).__name__,
        "adam_step": state.adam.step,
        "reward_shift": state.model.reward_shift,
        "reward_scale": state.model.reward_scale,
        "tensors": index,
        "meta": meta or {},
        "model_info": _model_info(state.model),
    }
    hb = json.dumps(header).encode("utf-8")
    body = MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(path, state: TrainState, cfg: TrainConfig, meta: dict | None = None) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state, cfg, meta))
    tmp.replace(path)


def checkpoint_from_bytes(data: bytes):
    """Returns ``(TrainState, TrainConfig, meta)``; raises :class:`DataFormatError` on any corruption."""
    if len(data) < 16:
        raise DataFormatError(f"checkpoint too short ({len(data)} bytes)", offset=0)
    if data[:4] != MAGIC:
        raise DataFormatError("not a checkpoint (bad magic bytes)", offset=0)
    if zlib.crc32(data[:-4]) != struct.unpack("<I", data[-4:])[0]:
        raise DataFormatError("checkpoint checksum mismatch", offset=len(data) - 4)
    version, n = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", offset=4)
    try:
        header = json.loads(data[12 : 12 + n].decode("utf-8"))
        cfg = TrainConfig.from_dict(header["train_config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"corrupt checkpoint header: {exc}", offset=12) from None
    pos = 12 + n
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = 8 * int(np.prod(shape))
        if pos + size > len(data) - 4:
            raise DataFormatError(f"truncated tensor {entry['name']}", offset=pos)
        tensors[entry["name"]] = np.frombuffer(data[pos : pos + size], dtype="<f8").reshape(shape).astype(np.float64)
        pos += size
    if pos != len(data) - 4:
        raise DataFormatError("unexpected bytes after tensor data", offset=pos)

    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    model = model_from_params(cfg.model, group("param/"))
    model.reward_shift = header["reward_shift"]
    model.reward_scale = header["reward_scale"]
    adam = AdamState(header["adam_step"], group("adam_m/"), group("adam_v/"))
    bitgen = getattr(np.random, header["rng_kind"])()
    bitgen.state = header["rng_state"]
    state = TrainState(model, adam, np.random.Generator(bitgen), header["history"])
    return state, cfg, header.get("meta", {})


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
