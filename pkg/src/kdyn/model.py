"""Latent dynamics models: the diagonal Koopman model and the MLP baseline.

Both share a state encoder, action encoder, state decoder and reward head.
Parameters live in one flat ``{name: float64 array}`` dict so the optimizer,
gradient checker and checkpoint code never need to know the topology.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import rollout as ro
from .baseline import mlp_rollout, mlp_rollout_backward, parity_hidden_width
from .errors import ConfigError, ShapeError
from .losses import (
    LossBreakdown,
    LossWeights,
    consistency_loss,
    reward_prediction_loss,
    state_prediction_loss,
)
from .nets import MlpParams, init_mlp, mlp_backward, mlp_forward
from .spectral import (
    ComplexSpectrum,
    InitScheme,
    discretize,
    discretize_backward,
    init_spectrum,
    vandermonde,
)


@dataclass
class ModelConfig:
    state_dim: int = 3
    action_dim: int = 1
    latent_dim: int = 64  # packed-real width; complex modes = latent_dim // 2
    action_emb_dim: int = 16  # complex action embedding width
    hidden: int = 128
    activation: str = "relu"
    model_type: str = "koopman"
    mu_mode: str = "constant"
    mu_init: float = -0.2
    mu_lo: float = -0.4
    mu_hi: float = -0.1
    omega_init: str = "increasing"
    omega_scale: float = 1.0
    dt_min: float = 0.001
    dt_max: float = 0.1
    l_init_std: float = 0.1
    baseline_hidden: int = 0  # 0 = choose for parameter parity

    def __post_init__(self):
        if self.latent_dim <= 0 or self.latent_dim % 4:
            raise ConfigError(f"latent_dim must be a positive multiple of 4, got {self.latent_dim}")
        if self.model_type not in ("koopman", "mlp"):
            raise ConfigError(f"model_type must be 'koopman' or 'mlp', got {self.model_type!r}")
        if min(self.state_dim, self.action_dim, self.action_emb_dim, self.hidden) < 1:
            raise ConfigError("dimensions must be >= 1")
        try:
            self.init_scheme
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def m_c(self) -> int:
        return self.latent_dim // 2

    @property
    def init_scheme(self) -> InitScheme:
        return InitScheme(
            mu_mode=self.mu_mode,
            mu_value=self.mu_init,
            mu_bounds=(self.mu_lo, self.mu_hi),
            omega_init=self.omega_init,
            omega_scale=self.omega_scale,
            dt_min=self.dt_min,
            dt_max=self.dt_max,
        )

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Batch:
    states: np.ndarray  # (B, tau+1, state_dim)
    actions: np.ndarray  # (B, tau, action_dim)
    rewards: np.ndarray  # (B, tau)

    @property
    def horizon(self) -> int:
        return self.actions.shape[-2]


@dataclass
class StepDiagnostics:
    grad_norm: float
    # max over k of |dL_k/dx0| / (exp(k dt mu_max) |dL_k/dx_k|); Koopman only
    envelope_ratio: float = float("nan")


def _net_sizes(cfg: ModelConfig) -> dict:
    return {
        "enc": [cfg.state_dim, cfg.hidden, cfg.latent_dim],
        "act": [cfg.action_dim, cfg.hidden, 2 * cfg.action_emb_dim],
        "dec": [cfg.latent_dim, cfg.hidden, cfg.state_dim],
        "rew": [cfg.latent_dim + cfg.action_dim, cfg.hidden, 1],
    }


def _mlp_to_params(prefix, mlp: MlpParams, out: dict):
    for i, (w, b) in enumerate(mlp.layers):
        out[f"{prefix}.{i}.W"] = w
        out[f"{prefix}.{i}.b"] = b


class LatentModel:
    net_names = ("enc", "act", "dec", "rew")

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params
        # affine map from reward-head output to environment reward units
        self.reward_shift = 0.0
        self.reward_scale = 1.0

    # construction -------------------------------------------------------
    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        params = {}
        for name, sizes in _net_sizes(cfg).items():
            _mlp_to_params(name, init_mlp(sizes, rng, cfg.activation), params)
        cls._init_dynamics(cfg, rng, params)
        return cls(cfg, params)

    @classmethod
    def _init_dynamics(cls, cfg, rng, params):
        raise NotImplementedError

    def net(self, prefix) -> MlpParams:
        layers = []
        i = 0
        while f"{prefix}.{i}.W" in self.params:
            layers.append((self.params[f"{prefix}.{i}.W"], self.params[f"{prefix}.{i}.b"]))
            i += 1
        return MlpParams(layers, self.cfg.activation)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # inference ------------------------------------------------------------
    def encode_state(self, s):
        return mlp_forward(self.net("enc"), s)[0]

    def encode_action(self, a):
        return mlp_forward(self.net("act"), a)[0]

    def decode_state(self, x_packed):
        return mlp_forward(self.net("dec"), x_packed)[0]

    def predict_reward(self, x_packed, a):
        x_packed = np.asarray(x_packed)
        a = np.asarray(a)
        inp = np.concatenate([x_packed, a], axis=-1)
        return mlp_forward(self.net("rew"), inp)[0][..., 0] * self.reward_scale + self.reward_shift

    def predict_latents(self, s0, actions):
        """Packed latents x_1..x_tau for start states (..., ds) and actions (..., tau, da)."""
        x0 = self.encode_state(s0)
        u = self.encode_action(actions)
        return self._dyn_forward(x0, u)[0]

    def predict(self, s0, actions):
        """Decoded states s_1..s_tau and rewards r_0..r_{tau-1}."""
        x0 = self.encode_state(s0)
        u = self.encode_action(actions)
        xhat = self._dyn_forward(x0, u)[0]
        lat = np.concatenate([x0[..., None, :], xhat[..., :-1, :]], axis=-2)
        return self.decode_state(xhat), self.predict_reward(lat, actions)

    # training ---------------------------------------------------------------
    def loss_and_grad(self, batch: Batch, weights: LossWeights = LossWeights(), stop_grad_targets=True, diagnostics=True):
        s, a, r = batch.states, batch.actions, batch.rewards
        if s.shape[-2] != a.shape[-2] + 1 or r.shape != a.shape[:-1]:
            raise ShapeError("batch must hold tau+1 states, tau actions and tau rewards")
        enc, act, dec, rew = (self.net(n) for n in self.net_names)

        x0, enc0_cache = mlp_forward(enc, s[..., 0, :])
        u, act_cache = mlp_forward(act, a)
        xhat, ctx = self._dyn_forward(x0, u)
        xtrue, enct_cache = mlp_forward(enc, s[..., 1:, :])
        s_hat, dec_cache = mlp_forward(dec, xhat)
        lat = np.concatenate([x0[..., None, :], xhat[..., :-1, :]], axis=-2)
        r_hat, rew_cache = mlp_forward(rew, np.concatenate([lat, a], axis=-1))

        l_c, g_c = consistency_loss(xhat, xtrue, return_grad=True)
        l_s, g_s = state_prediction_loss(s_hat, s[..., 1:, :], return_grad=True)
        l_r, g_r = reward_prediction_loss(r_hat[..., 0], r, return_grad=True)
        total = weights.w_consistency * l_c + weights.w_state * l_s + weights.w_reward * l_r
        losses = LossBreakdown(total, l_c, l_s, l_r)

        grads = {}
        g_xhat = weights.w_consistency * g_c
        dec_g, g_from_dec = mlp_backward(dec, dec_cache, weights.w_state * g_s)
        _mlp_to_params("dec", MlpParams(dec_g, dec.activation), grads)
        g_xhat = g_xhat + g_from_dec
        rew_g, g_rew_in = mlp_backward(rew, rew_cache, (weights.w_reward * g_r)[..., None])
        _mlp_to_params("rew", MlpParams(rew_g, rew.activation), grads)
        m = self.cfg.latent_dim
        g_lat = g_rew_in[..., :m]
        g_x0 = g_lat[..., 0, :].copy()
        g_xhat[..., :-1, :] += g_lat[..., 1:, :]

        envelope = self._envelope(ctx, g_xhat) if diagnostics else float("nan")
        g_x0_dyn, g_u, dyn_grads = self._dyn_backward(ctx, g_xhat)
        grads.update(dyn_grads)
        g_x0 += g_x0_dyn

        act_g, _ = mlp_backward(act, act_cache, g_u)
        _mlp_to_params("act", MlpParams(act_g, act.activation), grads)
        enc_g, _ = mlp_backward(enc, enc0_cache, g_x0)
        if not stop_grad_targets:
            enc_gt, _ = mlp_backward(enc, enct_cache, -weights.w_consistency * g_c)
            enc_g = [(w0 + w1, b0 + b1) for (w0, b0), (w1, b1) in zip(enc_g, enc_gt)]
        _mlp_to_params("enc", MlpParams(enc_g, enc.activation), grads)

        grads = {k: grads[k] for k in self.params}
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        return losses, grads, StepDiagnostics(norm, envelope)

    def _envelope(self, ctx, g_xhat):
        return float("nan")

    def _dyn_forward(self, x0, u):
        raise NotImplementedError

    def _dyn_backward(self, ctx, g_xhat):
        raise NotImplementedError


class KoopmanModel(LatentModel):
    @classmethod
    def _init_dynamics(cls, cfg, rng, params):
        spec = init_spectrum(cfg.m_c, cfg.init_scheme, seed=int(rng.integers(2**32)))
        if spec.learnable_mu:
            params["koopman.mu"] = spec.mu.copy()
        params["koopman.omega"] = spec.omega.copy()
        params["koopman.log_dt"] = np.array([spec.log_dt])
        shape = (cfg.action_emb_dim, cfg.m_c)
        params["koopman.L_re"] = rng.normal(0.0, cfg.l_init_std, size=shape)
        params["koopman.L_im"] = rng.normal(0.0, cfg.l_init_std, size=shape)

    def spectrum(self) -> ComplexSpectrum:
        cfg = self.cfg
        n_f = cfg.m_c // 2
        if cfg.mu_mode == "learnable":
            mu = self.params["koopman.mu"]
        else:
            mu = np.full(n_f, cfg.mu_init)
        return ComplexSpectrum(
            mu=mu,
            omega=self.params["koopman.omega"],
            log_dt=float(self.params["koopman.log_dt"][0]),
            mu_mode=cfg.mu_mode,
            mu_bounds=(cfg.mu_lo, cfg.mu_hi),
            omega_init=cfg.omega_init,
        )

    def l_matrix(self):
        return self.params["koopman.L_re"] + 1j * self.params["koopman.L_im"]

    def operator(self):
        return discretize(self.spectrum(), self.l_matrix())

    def _dyn_forward(self, x0, u):
        spec = self.spectrum()
        op = discretize(spec, self.l_matrix())
        uc = ro.unpack(u)
        x0c = ro.unpack(x0)
        c = uc @ op.l_matrix
        kernel = vandermonde(op, c.shape[-2])
        xhat = ro.rollout_parallel(kernel, x0c, c)
        return ro.pack(xhat), (spec, op, kernel, x0c, uc, xhat)

    def _envelope(self, ctx, g_xhat):
        spec, op, kernel, *_ = ctx
        g = ro.unpack(g_xhat)
        tau = g.shape[-2]
        prop = np.conj(kernel.lam_pows[:, 1 : tau + 1]).T * g
        axes = tuple(i for i in range(g.ndim) if i != g.ndim - 2)
        num = np.sqrt(np.sum(np.abs(prop) ** 2, axis=axes))
        den = np.sqrt(np.sum(np.abs(g) ** 2, axis=axes))
        k = np.arange(1, tau + 1)
        bound = np.exp(k * spec.dt * np.max(spec.mu))
        ok = den > 0
        if not np.any(ok):
            return float("nan")
        return float(np.max(num[ok] / (bound[ok] * den[ok])))

    def _dyn_backward(self, ctx, g_xhat):
        spec, op, kernel, x0c, uc, xhat = ctx
        g = ro.unpack(g_xhat)
        rg = ro.rollout_backward(kernel, g, x0c, xhat)
        g_uc = rg.grad_c @ np.conj(op.l_matrix).T
        e = uc.shape[-1]
        g_lbar = np.conj(uc).reshape(-1, e).T @ rg.grad_c.reshape(-1, op.m_c)
        sg = discretize_backward(spec, op, rg.grad_k_bar, g_lbar)
        grads = {
            "koopman.omega": sg["omega"],
            "koopman.log_dt": np.array([sg["log_dt"]]),
            "koopman.L_re": sg["l_matrix"].real.copy(),
            "koopman.L_im": sg["l_matrix"].imag.copy(),
        }
        if sg["mu"] is not None:
            grads["koopman.mu"] = sg["mu"]
        return ro.pack(rg.grad_x0), ro.pack(g_uc), grads


class MlpBaselineModel(LatentModel):
    @classmethod
    def _init_dynamics(cls, cfg, rng, params):
        width = cfg.baseline_hidden or baseline_width(cfg)
        emb = 2 * cfg.action_emb_dim
        _mlp_to_params("dyn", init_mlp([cfg.latent_dim + emb, width, cfg.latent_dim], rng, "relu"), params)

    @property
    def hidden_width(self) -> int:
        return self.params["dyn.0.W"].shape[1]

    def dynamics_net(self) -> MlpParams:
        layers = [(self.params["dyn.0.W"], self.params["dyn.0.b"]), (self.params["dyn.1.W"], self.params["dyn.1.b"])]
        return MlpParams(layers, "relu")

    def _dyn_forward(self, x0, u):
        p = self.dynamics_net()
        xhat, cache = mlp_rollout(p, x0, u, return_cache=True)
        return xhat, (p, cache)

    def _dyn_backward(self, ctx, g_xhat):
        p, cache = ctx
        layer_grads, g_x0, g_u = mlp_rollout_backward(p, cache, g_xhat)
        grads = {}
        _mlp_to_params("dyn", MlpParams(layer_grads, "relu"), grads)
        return g_x0, g_u, grads


def koopman_dynamics_param_count(cfg: ModelConfig) -> int:
    n_f = cfg.m_c // 2
    mu = n_f if cfg.mu_mode == "learnable" else 0
    return mu + n_f + 1 + 2 * cfg.action_emb_dim * cfg.m_c


def baseline_width(cfg: ModelConfig) -> int:
    return parity_hidden_width(cfg.latent_dim, 2 * cfg.action_emb_dim, koopman_dynamics_param_count(cfg))


def build_model(cfg: ModelConfig, seed: int = 0) -> LatentModel:
    cls = KoopmanModel if cfg.model_type == "koopman" else MlpBaselineModel
    return cls.create(cfg, seed)


def model_from_params(cfg: ModelConfig, params: dict) -> LatentModel:
    cls = KoopmanModel if cfg.model_type == "koopman" else MlpBaselineModel
    return cls(cfg, params)
