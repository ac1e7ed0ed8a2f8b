"""Pendulum swing-up by CEM planning: ground-truth simulator first, then a trained latent model."""
import argparse
import csv

import numpy as np

from kdyn.dataset import generate_dataset
from kdyn.envs import hanging_state, make_env, upright_error
from kdyn.model import ModelConfig
from kdyn.planner import PlanConfig, TrueDynamics, mpc_episode
from kdyn.training import TrainConfig, train


def run(spec, planner, label, episodes, rows):
    for seed in range(episodes):
        ep = mpc_episode(spec, planner, PlanConfig(), 200, seed=seed, x0=hanging_state(spec))
        err = float(np.max(np.abs(upright_error(ep.states[-50:]))))
        rows.append({"planner": label, "seed": seed, "return": ep.total_return, "final_err_max": err,
                     "success": int(err < 0.3)})
        print(rows[-1], flush=True)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--out", default="mpc.csv")
    args = ap.parse_args()

    spec = make_env("pendulum")
    rows = []
    run(spec, TrueDynamics(spec), "simulator", args.episodes, rows)
    ds = generate_dataset(spec, "uniform", 200, 200, seed=0)
    cfg = TrainConfig(horizon=20, batch_size=64, epochs=args.epochs, steps_per_epoch=100, lr=3e-3,
                      model=ModelConfig(latent_dim=64))
    run(spec, train(ds, cfg).model, "koopman", args.episodes, rows)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
