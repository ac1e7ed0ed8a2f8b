"""Training-throughput benchmark: full update iterations per second per model and horizon."""
from __future__ import annotations

import statistics
import time

import numpy as np
import psutil

from .config import BenchConfig
from .errors import SizingError
from .model import Batch, ModelConfig, build_model
from .optim import AdamState, adam_step

BENCH_FIELDS = (
    "model",
    "horizon",
    "batch_size",
    "its_per_sec_median",
    "its_per_sec_mean",
    "its_per_sec_std",
    "repeats",
    "n_params",
    "precision",
)


def estimate_iteration_bytes(cfg: ModelConfig, batch: int, horizon: int) -> int:
    """Conservative peak working-set estimate for one training iteration.

    Activations and their gradients for the three per-step networks dominate;
    the factor was calibrated against ``tracemalloc`` peaks.
    """
    per_step = 12 * cfg.hidden + 16 * cfg.latent_dim + 8 * cfg.action_emb_dim
    return int(1.2 * 8 * batch * (horizon + 1) * per_step)


def fit_batch(cfg: ModelConfig, batch: int, horizon: int, available: int | None = None, shrink: bool = True) -> int:
    """Largest batch <= ``batch`` (halving) whose estimate fits in available memory."""
    avail = psutil.virtual_memory().available if available is None else available
    b = batch
    while estimate_iteration_bytes(cfg, b, horizon) > avail:
        if not shrink or b == 1:
            need = estimate_iteration_bytes(cfg, b, horizon) / 2**30
            raise SizingError(
                f"batch {b} at horizon {horizon} needs ~{need:.2f} GiB, only {avail / 2**30:.2f} GiB available; "
                "lower --batch-size or the horizon set"
            )
        b //= 2
    return b


def synthetic_batch(cfg: ModelConfig, batch: int, horizon: int, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(
        states=rng.standard_normal((batch, horizon + 1, cfg.state_dim)),
        actions=rng.uniform(-1.0, 1.0, (batch, horizon, cfg.action_dim)),
        rewards=rng.standard_normal((batch, horizon)),
    )


def time_iterations(cfg: ModelConfig, batch: Batch, warmup: int, repeats: int, iters: int, seed: int = 0):
    """Iterations/second for each repetition (forward, backward and Adam step)."""
    model = build_model(cfg, seed)
    adam = AdamState.zeros_like(model.params)

    def one():
        _, grads, _ = model.loss_and_grad(batch, diagnostics=False)
        adam_step(model.params, grads, adam)

    for _ in range(warmup):
        one()
    rates = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(iters):
            one()
        rates.append(iters / (time.perf_counter() - t0))
    return rates, model.n_params()


def run_bench(bench: BenchConfig, model_cfg: ModelConfig | None = None, seed: int = 0, shrink: bool = True, log=None):
    """One row per (model, horizon); Koopman and MLP share every setting but the dynamics."""
    base = model_cfg or ModelConfig()
    rows = []
    for h in bench.horizons:
        b = fit_batch(base, bench.batch_size, h, shrink=shrink)
        data = synthetic_batch(base, b, h, seed)
        for kind in ("koopman", "mlp"):
            cfg = ModelConfig(**{**base.to_dict(), "model_type": kind})
            rates, n_params = time_iterations(cfg, data, bench.warmup, bench.repeats, bench.iters, seed)
            row = {
                "model": kind,
                "horizon": int(h),
                "batch_size": b,
                "its_per_sec_median": statistics.median(rates),
                "its_per_sec_mean": statistics.fmean(rates),
                "its_per_sec_std": statistics.pstdev(rates),
                "repeats": bench.repeats,
                "n_params": n_params,
                "precision": bench.precision,
            }
            rows.append(row)
            if log:
                log(row)
    return rows


def speedup_table(rows):
    """Koopman/MLP ratio of median its/sec per horizon."""
    by = {(r["model"], r["horizon"]): r["its_per_sec_median"] for r in rows}
    out = []
    for h in sorted({r["horizon"] for r in rows}):
        if ("koopman", h) in by and ("mlp", h) in by:
            out.append({"horizon": h, "speedup": by[("koopman", h)] / by[("mlp", h)]})
    return out
