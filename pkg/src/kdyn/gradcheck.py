"""Finite-difference oracle and exact gradient-scaling checks for the diagonal rollout."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import rollout as ro
from .errors import ConfigError, OracleFailure
from .losses import LossWeights
from .model import Batch, LatentModel
from .spectral import ComplexSpectrum, discretize, discretize_backward, vandermonde


@dataclass
class GradReport:
    """Outcome of a gradient check.

    ``param_errors`` maps a parameter name to its max relative error.
    ``ratio_table`` (scaling checks only) holds equal-length column arrays.
    """

    param_errors: dict = field(default_factory=dict)
    ratio_table: dict | None = None
    tolerance: float = 1e-5
    worst: tuple | None = None
    max_error: float = 0.0

    def __post_init__(self):
        if any(e < 0 for e in self.param_errors.values()):
            raise ValueError("errors must be non-negative")

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error <= self.tolerance

    def failures(self) -> list:
        return [k for k, e in self.param_errors.items() if not e <= self.tolerance]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        if self.ratio_table is not None:
            cols = list(self.ratio_table)
            w.writerow(cols)
            for row in zip(*(self.ratio_table[c] for c in cols)):
                w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        else:
            w.writerow(["parameter", "max_rel_error", "tolerance", "passed"])
            for k, e in self.param_errors.items():
                w.writerow([k, f"{e:.6e}", f"{self.tolerance:.1e}", int(e <= self.tolerance)])
        return buf.getvalue()


def finite_difference(f, params, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at the flat vector ``params``."""
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    p = np.array(params, dtype=np.float64).ravel()
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        fp = f(p)
        p[i] = orig - eps
        fm = f(p)
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleFailure(f"objective is non-finite at coordinate {i}")
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(float(np.max(np.abs(n), initial=0.0)), 1e-12)
    return float(np.max(np.abs(a - n), initial=0.0)) / scale


def _fd_params(loss, params: dict, eps: float, names=None) -> dict:
    """FD gradient for each named array in ``params`` (modified in place, then restored)."""
    out = {}
    for name in names or params:
        arr = params[name]
        shape = arr.shape

        def f(flat, arr=arr, shape=shape):
            arr[...] = flat.reshape(shape)
            return loss()

        orig = arr.copy()
        try:
            out[name] = finite_difference(f, orig, eps).reshape(shape)
        finally:
            arr[...] = orig
    return out


def check_model_gradients(model: LatentModel, batch: Batch, weights: LossWeights = LossWeights(), eps=1e-5, tol=1e-5):
    """Compare ``loss_and_grad`` with central differences for every model tensor.

    Targets are not detached here, so the check covers the full objective.
    """
    _, grads, _ = model.loss_and_grad(batch, weights, stop_grad_targets=False)

    def loss():
        return model.loss_and_grad(batch, weights, stop_grad_targets=False)[0].total

    numeric = _fd_params(loss, model.params, eps)
    errs = {k: relative_error(grads[k], numeric[k]) for k in model.params}
    worst = max(errs, key=errs.get)
    return GradReport(errs, tolerance=tol, worst=(worst,), max_error=errs[worst])


def _split(z):
    return {"re": z.real.copy(), "im": z.imag.copy()}


def check_rollout_gradients(m_c=4, tau=8, emb=3, seed=0, eps=1e-5, tol=1e-5, mu_mode="learnable"):
    """Gradients of a random linear read-out of the rollout w.r.t. x0, c, mu, omega, log_dt, L.

    ``c`` is checked on the injected-input path; mu/omega/log_dt/L go
    through the discretization.
    """
    rng = np.random.default_rng(seed)
    n_f = m_c // 2
    tensors = {
        "mu": rng.uniform(-0.4, -0.1, n_f),
        "omega": rng.uniform(0, 4, n_f),
        "log_dt": np.array([np.log(rng.uniform(0.01, 0.1))]),
        "L_re": rng.standard_normal((emb, m_c)),
        "L_im": rng.standard_normal((emb, m_c)),
        "x0_re": rng.standard_normal(m_c),
        "x0_im": rng.standard_normal(m_c),
        "u_re": rng.standard_normal((tau, emb)),
        "u_im": rng.standard_normal((tau, emb)),
        "c_re": rng.standard_normal((tau, m_c)),
        "c_im": rng.standard_normal((tau, m_c)),
    }
    w = rng.standard_normal((tau, 2 * m_c))

    def forward(t):
        spec = ComplexSpectrum(t["mu"], t["omega"], float(t["log_dt"][0]), mu_mode)
        op = discretize(spec, t["L_re"] + 1j * t["L_im"])
        u = t["u_re"] + 1j * t["u_im"]
        c = u @ op.l_matrix + (t["c_re"] + 1j * t["c_im"])
        x0 = t["x0_re"] + 1j * t["x0_im"]
        ker = vandermonde(op, tau)
        xhat = ro.rollout_parallel(ker, x0, c)
        return float(np.sum(ro.pack(xhat) * w)), (spec, op, ker, x0, u, xhat)

    _, (spec, op, ker, x0, u, xhat) = forward(tensors)
    rg = ro.rollout_backward(ker, ro.unpack(w), x0, xhat)
    g_lbar = np.conj(u).T @ rg.grad_c
    sg = discretize_backward(spec, op, rg.grad_k_bar, g_lbar)
    analytic = {
        "omega": sg["omega"],
        "log_dt": np.array([sg["log_dt"]]),
        "L_re": sg["l_matrix"].real,
        "L_im": sg["l_matrix"].imag,
        "x0_re": rg.grad_x0.real,
        "x0_im": rg.grad_x0.imag,
        "c_re": rg.grad_c.real,
        "c_im": rg.grad_c.imag,
    }
    if sg["mu"] is not None:
        analytic["mu"] = sg["mu"]
    numeric = _fd_params(lambda: forward(tensors)[0], tensors, eps, names=list(analytic))
    errs = {k: relative_error(analytic[k], numeric[k]) for k in analytic}
    worst = max(errs, key=errs.get)
    return GradReport(errs, tolerance=tol, worst=(worst,), max_error=errs[worst])


def random_spectrum(m_c: int, rng: np.random.Generator) -> ComplexSpectrum:
    n_f = m_c // 2
    return ComplexSpectrum(
        mu=rng.uniform(-1.0, 0.0, n_f),
        omega=rng.uniform(0.0, 2 * np.pi, n_f),
        log_dt=float(np.log(rng.uniform(0.001, 0.1))),
        mu_mode="learnable",
    )


def scaling_ratios(spec: ComplexSpectrum, tau: int, rng: np.random.Generator):
    """Measured and predicted per-mode gradient ratios for a loss placed at each step k.

    For every k in 1..tau a random upstream gradient is placed on x_k alone
    and pushed back through the rollout backward pass.  Returns arrays indexed
    [k-1, j] (state ratio) and [k-1, l-1, j] (input ratio, zero-padded where l > k).
    """
    m = spec.m_c
    op = discretize(spec, np.zeros((1, m)))
    ker = vandermonde(op, tau)
    g = np.zeros((tau, tau, m), dtype=complex)
    idx = np.arange(tau)
    g[idx, idx] = rng.standard_normal((tau, m)) + 1j * rng.standard_normal((tau, m))
    rg = ro.rollout_backward(ker, g)
    # packed-real norm of each mode's (re, im) pair equals the complex modulus
    g_out = np.abs(g[idx, idx])
    state = np.abs(rg.grad_x0) / g_out
    ctrl = np.abs(rg.grad_c) / g_out[:, None, :]
    mu_modes = np.concatenate([spec.mu, spec.mu])
    k = np.arange(1, tau + 1)[:, None]
    pred_state = np.exp(k * spec.dt * mu_modes[None, :])
    kk = k[:, :, None]
    ll = np.arange(1, tau + 1)[None, :, None]
    pred_ctrl = np.where(ll <= kk, np.exp((kk - ll) * spec.dt * mu_modes[None, None, :]), 0.0)
    return state, pred_state, ctrl, pred_ctrl


def verify_gradient_scaling(spectrum: ComplexSpectrum | None = None, tau: int = 32, trials: int = 100, seed: int = 0,
                     tol: float = 1e-10, max_m_c: int = 16, keep_table: bool = True) -> GradReport:
    """Check both exponential gradient-scaling identities on random instances.

    With ``spectrum=None`` each trial draws a fresh spectrum with an even
    mode count up to ``max_m_c``. Rows of the table are (trial, j, k, l); l = 0
    marks the state ratio, l >= 1 the input ratio at c_{l-1}.
    """
    if tau < 1 or trials < 1:
        raise ConfigError("tau and trials must be >= 1")
    rng = np.random.default_rng(seed)
    cols = {c: [] for c in ("trial", "mode", "k", "l", "mu", "dt", "measured", "expected", "rel_error")}
    worst, worst_err = None, 0.0
    for t in range(trials):
        spec = spectrum
        if spec is None:
            spec = random_spectrum(2 * int(rng.integers(1, max_m_c // 2 + 1)), rng)
        tau_t = tau if spectrum is not None else int(rng.integers(1, tau + 1))
        state, pred_state, ctrl, pred_ctrl = scaling_ratios(spec, tau_t, rng)
        m = spec.m_c
        mu_modes = np.concatenate([spec.mu, spec.mu])
        e_state = np.abs(state - pred_state) / pred_state
        mask = pred_ctrl > 0
        e_ctrl = np.where(mask, np.abs(ctrl - pred_ctrl) / np.where(mask, pred_ctrl, 1.0), 0.0)
        for err, where in ((e_state, None), (e_ctrl, mask)):
            pos = np.unravel_index(int(np.argmax(err)), err.shape)
            if err[pos] > worst_err or worst is None:
                k = pos[0] + 1
                l = pos[1] + 1 if where is not None else 0
                worst, worst_err = (t, int(pos[-1]), int(k), int(l)), float(err[pos])
        if keep_table:
            kk, jj = np.meshgrid(np.arange(1, tau_t + 1), np.arange(m), indexing="ij")
            _append(cols, t, jj, kk, 0, mu_modes[jj], spec.dt, state, pred_state, e_state)
            k3, l3, j3 = np.nonzero(mask)
            _append(cols, t, j3, k3 + 1, l3 + 1, mu_modes[j3], spec.dt,
                    ctrl[mask], pred_ctrl[mask], e_ctrl[mask])
    table = {k: np.concatenate(v) if v else np.array([]) for k, v in cols.items()} if keep_table else None
    return GradReport({"state_ratio_and_input_ratio": worst_err}, table, tol, worst, worst_err)


def _append(cols, trial, j, k, l, mu, dt, meas, exp, err):
    j = np.ravel(j)
    n = j.size
    cols["trial"].append(np.full(n, trial))
    cols["mode"].append(j)
    cols["k"].append(np.broadcast_to(np.ravel(k), n).copy())
    cols["l"].append(np.full(n, l) if np.isscalar(l) else np.ravel(l))
    cols["mu"].append(np.ravel(mu))
    cols["dt"].append(np.full(n, dt))
    cols["measured"].append(np.ravel(meas))
    cols["expected"].append(np.ravel(exp))
    cols["rel_error"].append(np.ravel(err))
