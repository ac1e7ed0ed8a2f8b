"""Spectrum-initialisation ablation on the forced pendulum (four schemes x seeds)."""
import argparse
import csv

from kdyn.dataset import generate_dataset
from kdyn.envs import make_env
from kdyn.evaluation import ABLATION_FIELDS, ablate_init
from kdyn.model import ModelConfig
from kdyn.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()

    ds = generate_dataset(make_env("pendulum"), "uniform", 100, 200, seed=0)
    cfg = TrainConfig(horizon=20, batch_size=64, epochs=args.epochs, steps_per_epoch=50, lr=3e-3, model=ModelConfig())
    rows = ablate_init(ds, cfg, args.seeds, horizon=100, n_samples=500, log=print)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(ABLATION_FIELDS))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
