"""Training throughput of the Koopman and MLP dynamics across horizons, plus a time breakdown.

The breakdown separates the shared encoder/decoder/reward-head work from the
dynamics-specific forward and backward passes, which explains the ratio on CPU.
"""
import argparse
import csv
import time

from kdyn import rollout as ro
from kdyn.bench import BENCH_FIELDS, run_bench, speedup_table, synthetic_batch
from kdyn.config import BenchConfig
from kdyn.model import ModelConfig, build_model


def dynamics_share(cfg: ModelConfig, batch, reps=3):
    model = build_model(cfg, 0)
    x0 = model.encode_state(batch.states[:, 0])
    u = model.encode_action(batch.actions)
    total = dyn = 0.0
    for _ in range(reps):
        t0 = time.perf_counter()
        model.loss_and_grad(batch, diagnostics=False)
        t1 = time.perf_counter()
        xhat, ctx = model._dyn_forward(x0, u)
        model._dyn_backward(ctx, xhat)
        t2 = time.perf_counter()
        total, dyn = total + t1 - t0, dyn + t2 - t1
    return total / reps, dyn / reps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizons", type=int, nargs="+", default=[10, 50, 100, 200, 500])
    ap.add_argument("--batch-size", type=int, default=256)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="throughput.csv")
    args = ap.parse_args()
    ro.FFT_WORKERS = args.workers

    rows = run_bench(BenchConfig(horizons=tuple(args.horizons), batch_size=args.batch_size, iters=1), log=print)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(BENCH_FIELDS))
        w.writeheader()
        w.writerows(rows)
    for s in speedup_table(rows):
        print(f"horizon {s['horizon']}: speedup {s['speedup']:.3f}")
    h = max(args.horizons)
    batch = synthetic_batch(ModelConfig(), rows[-1]["batch_size"], h)
    for kind in ("koopman", "mlp"):
        total, dyn = dynamics_share(ModelConfig(model_type=kind), batch)
        print(f"{kind} at horizon {h}: {total:.3f}s/iter, dynamics fwd+bwd {dyn:.3f}s, shared {total - dyn:.3f}s")


if __name__ == "__main__":
    main()
