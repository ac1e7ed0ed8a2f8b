"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Each test computes its measurement, records the verdict line through the
``criterion`` fixture, then asserts. Tolerances are pinned here, not derived
from the measurement.
"""
import csv
import dataclasses
import time

import numpy as np
import pytest

from kdyn import rollout as ro
from kdyn.bench import run_bench, speedup_table
from kdyn.cli import main
from kdyn.config import BenchConfig
from kdyn.dataset import generate_dataset
from kdyn.envs import hanging_state, make_env, simulate, upright_error
from kdyn.errors import TrainingDivergence
from kdyn.evaluation import ABLATION_FIELDS, SCHEMES, evaluate
from kdyn.gradcheck import (
    check_model_gradients,
    check_rollout_gradients,
    random_spectrum,
    scaling_ratios,
    verify_gradient_scaling,
)
from kdyn.losses import LossWeights
from kdyn.model import Batch, ModelConfig, build_model
from kdyn.planner import PlanConfig, TrueDynamics, mpc_episode
from kdyn.spectral import (
    TAYLOR_THRESHOLD,
    ComplexSpectrum,
    InitScheme,
    discretize,
    init_spectrum,
    vandermonde,
    zoh_scale,
    zoh_scale_direct,
    zoh_scale_taylor,
)
from kdyn.training import TrainConfig, train

ROLLOUT_TOL = 1e-9
SCALING_TOL = 1e-10
GRAD_TOL = 1e-5
FD_EPS = 1e-5
ZOH_TOL = 1e-8
LINEAR_MSE_TARGET = 1e-3
LINEAR_EPOCH_BUDGET = 200
LINEAR_TIME_BUDGET = 600.0
GRAD_RATIO = 100.0
SPEEDUP_AT_500 = 1.5
MPC_RETURN_FRACTION = 0.9
SWINGUP_TOL = 0.3
SWINGUP_NEEDED = 3

LINEAR_MODEL = ModelConfig(state_dim=4, action_dim=1, latent_dim=8, action_emb_dim=4, hidden=128,
                           activation="relu", mu_mode="constant")


def _cplx(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# 1. parallel rollout equals the recurrence


def test_c1_rollout_equivalence(criterion):
    t0 = time.perf_counter()
    worst, where = 0.0, None
    for seed in range(20):
        for m_c in (2, 8, 256):
            for tau in (1, 7, 64, 257, 1024):
                rng = np.random.default_rng([seed, m_c, tau])
                spec = random_spectrum(m_c, rng)
                op = discretize(spec, _cplx(rng, 3, m_c))
                x0, c = _cplx(rng, 2, m_c), _cplx(rng, 2, tau, m_c)
                par = ro.rollout_parallel(vandermonde(op, tau), x0, c)
                seq = ro.rollout_sequential(op, x0, c)
                # error relative to each (batch, mode) trajectory's peak magnitude
                scale = np.max(np.abs(seq), axis=-2, keepdims=True)
                err = float(np.max(np.abs(par - seq) / scale))
                if err > worst:
                    worst, where = err, (seed, m_c, tau)
    elapsed = time.perf_counter() - t0
    ok = worst <= ROLLOUT_TOL and elapsed < 60.0
    criterion(1, ok, f"max rel err {worst:.2e} at (seed, m_c, tau)={where}; tol {ROLLOUT_TOL:g}; {elapsed:.1f}s (< 60s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. gradient-scaling identities


def test_c2_gradient_scaling_identities(criterion):
    rep = verify_gradient_scaling(tau=32, trials=100, seed=0, tol=SCALING_TOL, max_m_c=16, keep_table=False)
    spec = ComplexSpectrum(mu=np.array([-0.2]), omega=np.array([np.pi]), log_dt=np.log(0.1), mu_mode="learnable")
    state, pred, _, _ = scaling_ratios(spec, 10, np.random.default_rng(0))
    point = float(state[9, 0])
    point_ok = abs(point - np.exp(-0.2)) <= SCALING_TOL * np.exp(-0.2) and abs(point - 0.8187) < 5e-5
    ok = rep.passed and point_ok
    criterion(2, ok, f"100 trials max rel err {rep.max_error:.2e} (tol {SCALING_TOL:g}), worst (trial, j, k, l)={rep.worst}; "
                     f"mu=-0.2 dt=0.1 k=10 ratio {point:.6f}")
    assert ok


# ---------------------------------------------------------------------------
# 3. end-to-end gradients


def test_c3_gradient_correctness(criterion):
    t0 = time.perf_counter()
    errors = {}
    for mode in ("learnable", "constant"):
        rep = check_rollout_gradients(m_c=4, tau=8, seed=0, eps=FD_EPS, tol=GRAD_TOL, mu_mode=mode)
        errors.update({f"rollout[{mode}].{k}": v for k, v in rep.param_errors.items()})
    rng = np.random.default_rng(0)
    for extra in ({"mu_mode": "learnable"}, {"mu_mode": "constant"}, {"model_type": "mlp"}):
        cfg = ModelConfig(state_dim=3, action_dim=2, latent_dim=8, action_emb_dim=2, hidden=6, activation="tanh", **extra)
        batch = Batch(rng.standard_normal((3, 6, 3)), rng.uniform(-1, 1, (3, 5, 2)), rng.standard_normal((3, 5)))
        rep = check_model_gradients(build_model(cfg, 1), batch, LossWeights(0.3, 1.0, 0.7), eps=FD_EPS, tol=GRAD_TOL)
        tag = extra.get("model_type", extra.get("mu_mode"))
        errors.update({f"model[{tag}].{k}": v for k, v in rep.param_errors.items()})
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    classes = {"x0_re", "c_re", "mu", "omega", "log_dt", "L_re"}
    covered = classes <= {k.split(".", 1)[1] for k in errors if k.startswith("rollout")}
    covered &= any(".enc." in k for k in errors) and any(".dec." in k for k in errors) and any(".rew." in k for k in errors)
    ok = errors[worst] <= GRAD_TOL and covered and elapsed < 120.0
    criterion(3, ok, f"{len(errors)} tensors, worst {worst} rel err {errors[worst]:.2e} (tol {GRAD_TOL:g}, eps {FD_EPS:g}); "
                     f"{elapsed:.1f}s (< 120s)")
    assert ok


# ---------------------------------------------------------------------------
# 4. ZOH branch continuity


def test_c4_zoh_continuity(criterion):
    worst = 0.0
    jump = 0.0
    for dt in np.logspace(-3, 0, 13):
        for ang in np.linspace(0.0, 2 * np.pi, 17):
            unit = np.exp(1j * ang)
            lam = TAYLOR_THRESHOLD / dt * unit
            d, t = zoh_scale_direct(lam, dt), zoh_scale_taylor(lam, dt)
            worst = max(worst, abs(d - t) / abs(d))
            below = zoh_scale(lam * (1 - 1e-12), dt)
            above = zoh_scale(lam * (1 + 1e-12), dt)
            jump = max(jump, abs(above - below) / abs(below))
    ok = worst <= ZOH_TOL and jump <= ZOH_TOL
    criterion(4, ok, f"|dt*lam| = {TAYLOR_THRESHOLD:g}, 13 dt x 17 angles: branch gap {worst:.2e}, "
                     f"switch jump {jump:.2e} (tol {ZOH_TOL:g})")
    assert ok


# ---------------------------------------------------------------------------
# 5. exact representation on the linear system


@pytest.fixture(scope="module")
def linear_data():
    return generate_dataset(make_env("linear"), "uniform", 100, 200, seed=0)


def _least_squares_oracle(ds):
    x = ds.states[:, :-1].reshape(-1, 4)
    u = ds.actions.reshape(-1, 1)
    y = ds.states[:, 1:].reshape(-1, 4)
    feats = np.concatenate([x, u], axis=1)
    theta, *_ = np.linalg.lstsq(feats, y, rcond=None)
    resid = float(np.max(np.abs(feats @ theta - y)) / np.max(np.abs(y)))
    a, b = theta[:4].T, theta[4:].T
    test = ds.test_idx
    var = ds.states[test].reshape(-1, 4).var(axis=0)
    xs = ds.states[test, 0]
    se = np.zeros(4)
    for t in range(100):
        xs = xs @ a.T + ds.actions[test, t] @ b.T
        se += np.mean((xs - ds.states[test, t + 1]) ** 2, axis=0)
    return resid, float(np.mean(se / 100 / var))


@pytest.fixture(scope="module")
def linear_run(linear_data):
    cfg = TrainConfig(horizon=50, batch_size=32, epochs=LINEAR_EPOCH_BUDGET, steps_per_epoch=100, lr=1e-2, seed=0,
                      model=LINEAR_MODEL)
    checks = []

    def every_tenth(st, rec):
        if rec["epoch"] % 10:
            return False
        mse = evaluate(st.model, linear_data, 100, 200)[-1]["normalized_state_mse"]
        checks.append((rec["epoch"], mse))
        return mse < LINEAR_MSE_TARGET

    t0 = time.perf_counter()
    state = train(linear_data, cfg, callback=every_tenth)
    return state, checks, time.perf_counter() - t0


@pytest.mark.slow
def test_c5_exact_representation(criterion, linear_data, linear_run):
    resid, ls_mse = _least_squares_oracle(linear_data)
    oracle_ok = resid < 1e-8 and ls_mse < LINEAR_MSE_TARGET
    state, checks, elapsed = linear_run
    epoch, mse = checks[-1]
    ok = oracle_ok and mse < LINEAR_MSE_TARGET and epoch <= LINEAR_EPOCH_BUDGET and elapsed < LINEAR_TIME_BUDGET
    criterion(5, ok, f"least-squares oracle residual {resid:.1e}, 100-step nMSE {ls_mse:.1e}; "
                     f"trained nMSE {mse:.2e} at epoch {epoch} (target {LINEAR_MSE_TARGET:g}, "
                     f"<= {LINEAR_EPOCH_BUDGET} epochs) in {elapsed:.0f}s (< {LINEAR_TIME_BUDGET:.0f}s)")
    assert ok


# ---------------------------------------------------------------------------
# 6. long-horizon stability


def test_c6_long_horizon_stability(criterion):
    ds = generate_dataset(make_env("pendulum"), "uniform", 50, 150, seed=0)
    base = TrainConfig(horizon=100, batch_size=32, epochs=5, steps_per_epoch=10, seed=0)
    k = train(ds, dataclasses.replace(base, model=ModelConfig()))
    losses = ("total", "consistency", "state", "reward")
    k_finite = len(k.history) == 5 and all(np.isfinite(r[c]) for r in k.history for c in losses)
    k_gmax = max(r["grad_norm_max"] for r in k.history)
    diverged = False
    try:
        m_hist = train(ds, dataclasses.replace(base, model=ModelConfig(model_type="mlp"))).history
    except TrainingDivergence as exc:
        diverged, m_hist = True, exc.history
    diverged = diverged or any(not np.isfinite(r[c]) for r in m_hist for c in losses)
    m_gmax = max((r["grad_norm_max"] for r in m_hist), default=float("nan"))
    ratio_ok = bool(np.isfinite(m_gmax) and m_gmax >= GRAD_RATIO * k_gmax)
    ok = k_finite and (diverged or ratio_ok)
    criterion(6, ok, f"koopman tau=100 finite for all 5 epochs: {k_finite}, max grad norm {k_gmax:.3g}; "
                     f"mlp diverged: {diverged}, max grad norm {m_gmax:.3g} ({m_gmax / k_gmax:.3g}x, need >= {GRAD_RATIO:g}x)")
    assert ok


# ---------------------------------------------------------------------------
# 7. throughput trend


@pytest.mark.slow
def test_c7_throughput_trend(criterion):
    rows = run_bench(BenchConfig(iters=1))
    sp = speedup_table(rows)
    ratios = [s["speedup"] for s in sp]
    trend = all(b >= a for a, b in zip(ratios, ratios[1:]))
    at500 = ratios[-1]
    ok = trend and at500 >= SPEEDUP_AT_500 and [s["horizon"] for s in sp] == [10, 50, 100, 200, 500]
    batch = rows[-1]["batch_size"]
    table = ", ".join(f"{s['horizon']}:{s['speedup']:.3f}" for s in sp)
    criterion(7, ok, f"koopman/mlp its/s medians at batch {batch} -> {table}; non-decreasing: {trend}; "
                     f"ratio at 500 {at500:.3f} (need >= {SPEEDUP_AT_500})")
    assert ok


# ---------------------------------------------------------------------------
# 8. initialization ablation harness


def test_c8_ablation_harness(criterion, tmp_path):
    data, out = tmp_path / "pend.kdyn", tmp_path / "ablate.csv"
    rc_gen = main(["gen-data", "--env", "pendulum", "--n-traj", "40", "--T", "150", "--seed", "0", "--out", str(data)])
    rc = main(["ablate-init", "--data", str(data), "--seeds", "0", "1", "--epochs", "2", "--steps-per-epoch", "10",
               "--horizon", "20", "--eval-horizon", "100", "--n-samples", "100", "--out", str(out)])
    with open(out) as fh:
        reader = csv.DictReader(fh)
        header, rows = tuple(reader.fieldnames), list(reader)
    schemes = {(r["mu_init"], r["omega_init"]) for r in rows}
    finite = all(np.isfinite(float(r["state_mse"])) and np.isfinite(float(r["reward_mse"])) for r in rows)
    ok = (rc_gen == rc == 0 and header == ABLATION_FIELDS and len(rows) == 8 and schemes == set(SCHEMES)
          and finite and len({r["dataset_checksum"] for r in rows}) == 1)
    criterion(8, ok, f"exit {rc}, {len(rows)} rows (4 schemes x 2 seeds), schema {header == ABLATION_FIELDS}, "
                     f"finite errors {finite}, one dataset checksum")
    assert ok


# ---------------------------------------------------------------------------
# 9. MPC sanity


def _linear_mpc(linear_data, model):
    spec = linear_data.spec
    cfg = PlanConfig()
    totals = {"oracle": 0.0, "model": 0.0, "passive": 0.0}
    for seed in range(3):
        x0 = np.random.default_rng([seed, 3]).normal(0.0, 0.5, spec.raw_dim)
        # the oracle controller runs first
        totals["oracle"] += mpc_episode(spec, TrueDynamics(spec), cfg, 100, seed=seed, x0=x0).total_return
        totals["model"] += mpc_episode(spec, model, cfg, 100, seed=seed, x0=x0).total_return
        totals["passive"] += float(np.sum(simulate(spec, x0, np.zeros((100, 1)))[1]))
    return totals


def _pendulum_swingups():
    ds = generate_dataset(make_env("pendulum"), "uniform", 200, 200, seed=0)
    cfg = TrainConfig(horizon=20, batch_size=64, epochs=30, steps_per_epoch=100, lr=3e-3, seed=0,
                      model=ModelConfig(latent_dim=64))
    model = train(ds, cfg).model
    spec = ds.spec
    errs = []
    for seed in range(5):
        ep = mpc_episode(spec, model, PlanConfig(), 200, seed=seed, x0=hanging_state(spec))
        errs.append(float(np.max(np.abs(upright_error(ep.states[-50:])))))
    return errs


@pytest.mark.slow
def test_c9_mpc_sanity(criterion, linear_data, linear_run):
    totals = _linear_mpc(linear_data, linear_run[0].model)
    # returns are negative costs, so "at least 0.9x the oracle return" means cost within oracle cost / 0.9
    lin_ok = totals["model"] >= totals["oracle"] / MPC_RETURN_FRACTION
    errs = _pendulum_swingups()
    wins = sum(e < SWINGUP_TOL for e in errs)
    ok = lin_ok and wins >= SWINGUP_NEEDED
    criterion(9, ok, f"linear returns model {totals['model']:.3f} vs oracle {totals['oracle']:.3f} "
                     f"(need >= oracle/{MPC_RETURN_FRACTION}), zero-action {totals['passive']:.3f}; "
                     f"pendulum swingups {wins}/5 (need {SWINGUP_NEEDED}), final-50 max |err| "
                     + " ".join(f"{e:.3f}" for e in errs))
    assert ok


# ---------------------------------------------------------------------------
# 10. defaults


def test_c10_default_configuration(criterion):
    checks = {}
    checks["consistency weight 0.001"] = LossWeights().w_consistency == 0.001 == TrainConfig().w_consistency
    mcfg = ModelConfig()
    spec = init_spectrum(mcfg.m_c, mcfg.init_scheme, seed=0)
    checks["mu = -0.2"] = mcfg.mu_init == -0.2 and InitScheme().mu_value == -0.2 and np.all(spec.mu == -0.2)
    checks["omega_j = j*pi"] = np.array_equal(spec.omega, np.pi * np.arange(mcfg.m_c // 2))
    dts = [build_model(mcfg, s).spectrum().dt for s in range(50)]
    checks["dt in [0.001, 0.1]"] = (InitScheme().dt_min, InitScheme().dt_max) == (0.001, 0.1) and \
        0.001 <= min(dts) and max(dts) <= 0.1
    gaps = []
    for latent, emb, mu_mode in ((64, 16, "constant"), (64, 16, "learnable"), (32, 8, "constant"), (8, 4, "constant")):
        c = ModelConfig(latent_dim=latent, action_emb_dim=emb, mu_mode=mu_mode)
        nk = build_model(c).n_params()
        nm = build_model(dataclasses.replace(c, model_type="mlp")).n_params()
        gaps.append(abs(nm - nk) / nk)
    checks["parity within 10%"] = max(gaps) <= 0.10
    checks["plan horizon 20, bench batch 256"] = PlanConfig().horizon == 20 and BenchConfig().batch_size == 256 and \
        BenchConfig().horizons == (10, 50, 100, 200, 500)
    ok = all(checks.values())
    criterion(10, ok, "; ".join(f"{k}: {'ok' if v else 'NO'}" for k, v in checks.items())
              + f" (max parity gap {max(gaps):.4f})")
    assert ok
