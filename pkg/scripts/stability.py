"""Compare per-epoch loss and gradient norms of the Koopman and MLP dynamics at a long training horizon."""
import argparse
import csv
import dataclasses

from kdyn.dataset import generate_dataset
from kdyn.envs import make_env
from kdyn.errors import TrainingDivergence
from kdyn.model import ModelConfig
from kdyn.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--out", default="stability.csv")
    args = ap.parse_args()

    ds = generate_dataset(make_env("pendulum"), "uniform", 50, max(150, args.horizon + 1), seed=0)
    base = TrainConfig(horizon=args.horizon, batch_size=32, epochs=args.epochs, steps_per_epoch=10, seed=0)
    rows = []
    for kind in ("koopman", "mlp"):
        cfg = dataclasses.replace(base, model=ModelConfig(model_type=kind))
        status = "ok"
        try:
            hist = train(ds, cfg).history
        except TrainingDivergence as exc:
            hist, status = exc.history, f"diverged: {exc}"
        for r in hist:
            rows.append({"model": kind, "epoch": r["epoch"], "total": r["total"], "grad_norm_max": r["grad_norm_max"]})
        print(kind, status, "max grad norm", max((r["grad_norm_max"] for r in hist), default=float("nan")))
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["model", "epoch", "total", "grad_norm_max"])
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
