"""``kdyn`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
``KDYN_SEED`` overrides seeds from the config file and defaults; an explicit
``--seed`` flag still wins.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import rollout
from .bench import BENCH_FIELDS, run_bench, speedup_table
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_config
from .dataset import export_jsonl, generate_dataset, load_dataset, save_dataset
from .envs import EnvSpec, hanging_state, make_env, upright_error
from .errors import ConfigError, DataFormatError, KdynError, NumericalError, ShapeError, TrainingDivergence
from .evaluation import ABLATION_FIELDS, EVAL_FIELDS, ablate_init, evaluate
from .gradcheck import check_model_gradients, check_rollout_gradients, verify_gradient_scaling
from .model import ModelConfig, build_model
from .planner import TrueDynamics, mpc_episode
from .training import METRIC_FIELDS, gather, sample_pairs, train

log = logging.getLogger("kdyn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def write_csv(path, fields, rows):
    """Write rows to ``path`` (or stdout for ``-``)."""
    fh = sys.stdout if str(path) == "-" else open(path, "w", newline="")
    try:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()


# ---------------------------------------------------------------------------
# configuration plumbing

# flag dest -> (section, key)
FLAG_MAP = {
    "env": ("data", "env"),
    "policy": ("data", "policy"),
    "n_traj": ("data", "n_traj"),
    "T": ("data", "T"),
    "max_torque": ("data", "max_torque"),
    "model_type": ("model", "model_type"),
    "latent_dim": ("model", "latent_dim"),
    "action_emb_dim": ("model", "action_emb_dim"),
    "hidden": ("model", "hidden"),
    "activation": ("model", "activation"),
    "mu_mode": ("model", "mu_mode"),
    "omega_init": ("model", "omega_init"),
    "epochs": ("train", "epochs"),
    "horizon": ("train", "horizon"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr"),
    "steps_per_epoch": ("train", "steps_per_epoch"),
    "eval_horizon": ("eval", "horizon"),
    "n_samples": ("eval", "n_samples"),
    "plan_horizon": ("plan", "horizon"),
    "population": ("plan", "population"),
    "iterations": ("plan", "iterations"),
    "episodes": ("plan", "episodes"),
    "episode_len": ("plan", "episode_len"),
    "horizons": ("bench", "horizons"),
    "bench_batch": ("bench", "batch_size"),
    "repeats": ("bench", "repeats"),
    "warmup": ("bench", "warmup"),
    "iters": ("bench", "iters"),
}
SEED_KEYS = (("data", "seed"), ("train", "seed"), ("eval", "seed"), ("plan", "seed"))


def _seed_all(cfg: RunConfig, seed: int) -> RunConfig:
    for section, key in SEED_KEYS:
        cfg = apply_overrides(cfg, section, {key: int(seed)})
    return cfg


def resolve_config(args) -> RunConfig:
    """defaults < config file < KDYN_SEED < command-line flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    env_seed = os.environ.get("KDYN_SEED")
    if env_seed not in (None, ""):
        try:
            cfg = _seed_all(cfg, int(env_seed))
        except ValueError:
            raise ConfigError(f"KDYN_SEED must be an integer, got {env_seed!r}") from None
    if getattr(args, "seed", None) is not None:
        cfg = _seed_all(cfg, args.seed)
    by_section: dict = {}
    for dest, (section, key) in FLAG_MAP.items():
        v = getattr(args, dest, None)
        if v is not None:
            by_section.setdefault(section, {})[key] = tuple(v) if isinstance(v, list) else v
    for section, values in by_section.items():
        cfg = apply_overrides(cfg, section, values)
    return cfg


def _env_from_data_cfg(cfg: RunConfig) -> EnvSpec:
    d = cfg.data
    if d.env == "pendulum":
        return make_env("pendulum", max_torque=d.max_torque)
    return make_env(d.env)


def _load_data(path):
    p = Path(path)
    if not p.is_file():
        raise DataFormatError(f"dataset file not found: {p} (create one with `kdyn gen-data --out {p}`)")
    return load_dataset(p)


def _load_ckpt(path):
    p = Path(path)
    if not p.is_file():
        raise DataFormatError(f"checkpoint not found: {p} (create one with `kdyn train`)")
    return load_checkpoint(p)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    spec = _env_from_data_cfg(cfg)
    ds = generate_dataset(spec, cfg.data.policy, cfg.data.n_traj, cfg.data.T, cfg.data.seed)
    save_dataset(args.out, ds)
    if args.jsonl:
        export_jsonl(args.jsonl, ds)
    print(f"wrote {args.out}: {ds.n_traj} trajectories x {ds.length} steps, checksum {ds.checksum}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    ds = _load_data(args.data)
    state = None
    if args.resume:
        state, tcfg, _ = _load_ckpt(args.resume)
        # the stored config wins on resume; only the epoch budget may be extended
        if args.epochs is not None:
            tcfg.epochs = args.epochs
    else:
        tcfg = cfg.train_config()
    meta = {"env": ds.spec.to_descriptor(), "dataset_checksum": ds.checksum}

    def on_epoch(st, rec):
        if args.checkpoint_every and rec["epoch"] % args.checkpoint_every == 0:
            save_checkpoint(args.out, st, tcfg, meta)

    try:
        state = train(ds, tcfg, state, callback=on_epoch)
    except TrainingDivergence as exc:
        if args.metrics:
            write_csv(args.metrics, METRIC_FIELDS, getattr(exc, "history", []))
        raise
    save_checkpoint(args.out, state, tcfg, meta)
    if args.metrics:
        write_csv(args.metrics, METRIC_FIELDS, state.history)
    last = state.history[-1] if state.history else {}
    print(f"trained {state.epoch} epochs; final total loss {last.get('total', float('nan')):.6g}; saved {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ds = _load_data(args.data)
    if args.checkpoint:
        state, _, _ = _load_ckpt(args.checkpoint)
        model = state.model
    else:
        mc = ModelConfig(**{**cfg.model.to_dict(), "state_dim": ds.spec.state_dim, "action_dim": ds.spec.action_dim})
        model = build_model(mc, cfg.train.seed)
    e = cfg.eval
    rows = evaluate(model, ds, e.horizon, e.n_samples, e.seed, e.buckets)
    write_csv(args.out, EVAL_FIELDS, rows)
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    rows = run_bench(cfg.bench, cfg.model, seed=cfg.train.seed, shrink=not args.no_shrink,
                     log=lambda r: log.info("bench %s", r))
    write_csv(args.out, BENCH_FIELDS, rows)
    if args.speedup:
        write_csv(args.speedup, ("horizon", "speedup"), speedup_table(rows))
    return EXIT_OK


def cmd_ablate_init(args) -> int:
    cfg = resolve_config(args)
    ds = _load_data(args.data)
    seeds = args.seeds if args.seeds else [cfg.train.seed]
    rows = ablate_init(ds, cfg.train_config(), seeds, cfg.eval.horizon, cfg.eval.n_samples,
                       log=lambda r: log.info("ablation %s", r))
    write_csv(args.out, ABLATION_FIELDS, rows)
    return EXIT_OK


EPISODE_FIELDS = ("episode", "step", "state", "action", "reward")
SUMMARY_FIELDS = ("episode", "seed", "return", "final_upright_error_max", "success")


def cmd_plan(args) -> int:
    cfg = resolve_config(args)
    if args.checkpoint:
        state, _, meta = _load_ckpt(args.checkpoint)
        if "env" not in meta:
            raise DataFormatError("checkpoint carries no environment descriptor")
        spec = EnvSpec.from_descriptor(meta["env"])
        planner = state.model
    else:
        spec = _env_from_data_cfg(cfg)
        planner = TrueDynamics(spec)
    ep_cfg = cfg.episode
    plan_cfg = cfg.plan
    steps, summary = [], []
    for i in range(ep_cfg.episodes):
        seed = ep_cfg.seed + i
        x0 = hanging_state(spec) if spec.name == "pendulum" else np.random.default_rng([seed, 3]).normal(0, 0.5, spec.raw_dim)
        ep = mpc_episode(spec, planner, plan_cfg, ep_cfg.episode_len, seed=seed, x0=x0)
        for r in ep.rows():
            steps.append({"episode": i, **r})
        row = {"episode": i, "seed": seed, "return": ep.total_return, "final_upright_error_max": "", "success": ""}
        if spec.name == "pendulum" and len(ep.actions):
            err = float(np.max(np.abs(upright_error(ep.states[-50:]))))
            row.update(final_upright_error_max=err, success=int(err < 0.3))
        summary.append(row)
        print(f"episode {i}: return {ep.total_return:.4f}")
    if args.log:
        write_csv(args.log, EPISODE_FIELDS, steps)
    write_csv(args.out, SUMMARY_FIELDS, summary)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.mode == "scaling":
        report = verify_gradient_scaling(tau=args.tau, trials=args.trials, seed=args.seed or 0, keep_table=True)
    elif args.mode == "rollout":
        report = check_rollout_gradients(seed=args.seed or 0)
    else:
        cfg = ModelConfig(state_dim=3, action_dim=1, latent_dim=8, action_emb_dim=2, hidden=6, activation="tanh",
                          mu_mode="learnable")
        model = build_model(cfg, args.seed or 0)
        ds = generate_dataset(make_env("pendulum"), "uniform", 4, 10, seed=args.seed or 0)
        batch = gather(ds, sample_pairs(ds, 4)[:3], 4)
        report = check_model_gradients(model, batch)
    text = report.to_csv()
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status}: max relative error {report.max_error:.3e} (tolerance {report.tolerance:.0e}), worst {report.worst}",
          file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def _common(p, *groups):
    p.add_argument("--config", help="INI config file (flags override file values)")
    p.add_argument("--seed", type=int, help="global seed (overrides KDYN_SEED and the config file)")
    if "data" in groups:
        p.add_argument("--env", choices=("pendulum", "duffing", "linear"))
        p.add_argument("--policy", choices=("uniform", "sinusoid"))
        p.add_argument("--n-traj", dest="n_traj", type=int)
        p.add_argument("--T", dest="T", type=int, help="steps per trajectory")
        p.add_argument("--max-torque", dest="max_torque", type=float)
    if "model" in groups:
        p.add_argument("--model-type", dest="model_type", choices=("koopman", "mlp"))
        p.add_argument("--latent-dim", dest="latent_dim", type=int)
        p.add_argument("--action-emb-dim", dest="action_emb_dim", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--activation", choices=("relu", "tanh", "identity"))
        p.add_argument("--mu-mode", dest="mu_mode", choices=("constant", "learnable"))
        p.add_argument("--omega-init", dest="omega_init", choices=("increasing", "random"))
    if "train" in groups:
        p.add_argument("--epochs", type=int)
        p.add_argument("--horizon", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    if "eval" in groups:
        p.add_argument("--eval-horizon", dest="eval_horizon", type=int)
        p.add_argument("--n-samples", dest="n_samples", type=int)
    if "plan" in groups:
        p.add_argument("--plan-horizon", dest="plan_horizon", type=int)
        p.add_argument("--population", type=int)
        p.add_argument("--iterations", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--episode-len", dest="episode_len", type=int)
    if "bench" in groups:
        p.add_argument("--horizons", type=int, nargs="+")
        p.add_argument("--batch-size", dest="bench_batch", type=int)
        p.add_argument("--repeats", type=int)
        p.add_argument("--warmup", type=int)
        p.add_argument("--iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kdyn", description="Diagonal Koopman latent dynamics models.")
    ap.add_argument("--workers", type=int, default=None,
                    help="FFT worker threads (default: all cores; results are bit-exact only with 1)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="simulate a trajectory dataset")
    _common(p, "data")
    p.add_argument("--out", required=True)
    p.add_argument("--jsonl", help="also export trajectories as JSON lines")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model; writes a checkpoint and per-epoch metrics CSV")
    _common(p, "model", "train")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="metrics CSV path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="horizon-wise state/reward MSE on held-out data")
    _common(p, "model", "eval")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", help="omit to evaluate a freshly initialised model")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="training throughput, Koopman vs MLP baseline")
    _common(p, "model", "bench")
    p.add_argument("--out", default="-")
    p.add_argument("--speedup", help="also write the per-horizon speedup CSV")
    p.add_argument("--no-shrink", dest="no_shrink", action="store_true",
                   help="fail instead of halving the batch when memory is short")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ablate-init", help="train all four spectrum initialisation schemes")
    _common(p, "model", "train", "eval")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_ablate_init)

    p = sub.add_parser("plan", help="receding-horizon CEM episodes")
    _common(p, "data", "plan")
    p.add_argument("--checkpoint", help="plan with a trained model (default: true simulator)")
    p.add_argument("--out", default="-", help="episode summary CSV")
    p.add_argument("--log", help="per-step episode log CSV")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("gradcheck", help="gradient checks against finite differences")
    p.add_argument("--mode", choices=("scaling", "rollout", "model"), default="scaling")
    p.add_argument("--tau", type=int, default=32)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    rollout.FFT_WORKERS = args.workers or os.cpu_count() or 1
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KdynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
