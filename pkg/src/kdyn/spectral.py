"""Continuous-time diagonal Koopman spectrum, ZOH discretization and Vandermonde kernels.

Eigenvalues are stored as ``n_f`` frequencies and expanded into ``m_c = 2 n_f``
complex modes ordered ``[mu + i omega, mu - i omega]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidDimensionError, InvalidHorizonError, ShapeError

TAYLOR_THRESHOLD = 1e-4
# the derivative of the ZOH scale cancels harder than the scale itself
DERIV_TAYLOR_THRESHOLD = 1e-2


@dataclass(frozen=True)
class InitScheme:
    """How to initialize a spectrum.

    ``mu_mode`` is ``"constant"`` (fixed, not trained) or ``"learnable"``
    (trained and clipped into ``mu_bounds``). ``omega_init`` is
    ``"increasing"`` (omega_j = omega_scale * j * pi) or ``"random"``
    (Uniform(0, 1)).
    """

    mu_mode: str = "constant"
    mu_value: float = -0.2
    mu_bounds: tuple[float, float] = (-0.4, -0.1)
    omega_init: str = "increasing"
    omega_scale: float = 1.0
    dt_min: float = 0.001
    dt_max: float = 0.1

    def __post_init__(self):
        if self.mu_mode not in ("constant", "learnable"):
            raise ValueError(f"unknown mu_mode {self.mu_mode!r}")
        if self.omega_init not in ("increasing", "random"):
            raise ValueError(f"unknown omega_init {self.omega_init!r}")
        lo, hi = self.mu_bounds
        if not lo <= hi:
            raise ValueError(f"mu_bounds must be ordered, got {self.mu_bounds}")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")


@dataclass
class ComplexSpectrum:
    mu: np.ndarray
    omega: np.ndarray
    log_dt: float
    mu_mode: str = "constant"
    mu_bounds: tuple[float, float] = (-0.4, -0.1)
    omega_init: str = "increasing"

    @property
    def n_freq(self) -> int:
        return self.omega.shape[0]

    @property
    def m_c(self) -> int:
        return 2 * self.n_freq

    @property
    def dt(self) -> float:
        return float(np.exp(self.log_dt))

    @property
    def learnable_mu(self) -> bool:
        return self.mu_mode == "learnable"

    def eigenvalues(self) -> np.ndarray:
        mu = np.broadcast_to(self.mu, self.omega.shape)
        return np.concatenate([mu + 1j * self.omega, mu - 1j * self.omega])

    def clip_mu(self) -> ComplexSpectrum:
        if not self.learnable_mu:
            return self
        lo, hi = self.mu_bounds
        return replace(self, mu=np.clip(self.mu, lo, hi))


def init_spectrum(m_c: int, scheme: InitScheme | None = None, seed: int = 0) -> ComplexSpectrum:
    scheme = scheme or InitScheme()
    if m_c <= 0 or m_c % 2:
        raise InvalidDimensionError(f"complex latent dimension must be positive and even, got {m_c}")
    n_f = m_c // 2
    rng = np.random.default_rng(seed)
    log_dt = float(
        rng.uniform() * (np.log(scheme.dt_max) - np.log(scheme.dt_min)) + np.log(scheme.dt_min)
    )
    if scheme.omega_init == "increasing":
        omega = scheme.omega_scale * np.pi * np.arange(n_f, dtype=np.float64)
    else:
        omega = rng.uniform(size=n_f)
    mu = np.full(n_f, scheme.mu_value, dtype=np.float64)
    spec = ComplexSpectrum(
        mu=mu,
        omega=omega,
        log_dt=log_dt,
        mu_mode=scheme.mu_mode,
        mu_bounds=tuple(scheme.mu_bounds),
        omega_init=scheme.omega_init,
    )
    return spec.clip_mu()


def complex_expm1(z):
    """exp(z) - 1 without cancellation for small |z|."""
    z = np.asarray(z) + 0j
    x, y = z.real, z.imag
    re = np.expm1(x) * np.cos(y) - 2.0 * np.sin(0.5 * y) ** 2
    im = np.exp(x) * np.sin(y)
    return re + 1j * im


def zoh_scale_direct(lam, dt):
    return complex_expm1(dt * lam) / lam


def zoh_scale_taylor(lam, dt):
    z = dt * lam
    return dt * (1.0 + z / 2.0 + z * z / 6.0)


def zoh_scale(lam, dt):
    """(exp(dt*lam) - 1) / lam with the lam -> 0 limit handled."""
    lam = np.asarray(lam)
    small = np.abs(dt * lam) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, lam)
    return np.where(small, zoh_scale_taylor(lam, dt), zoh_scale_direct(safe, dt))


def zoh_scale_dlam(lam, dt):
    """Complex derivative of zoh_scale with respect to lam."""
    lam = np.asarray(lam)
    z = dt * lam
    small = np.abs(z) < DERIV_TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, lam)
    k = np.exp(dt * safe)
    direct = (dt * k - complex_expm1(dt * safe) / safe) / safe
    # dt^2 * sum_n z^n / (n! (n + 2))
    series = dt * dt * (0.5 + z / 3.0 + z**2 / 8.0 + z**3 / 30.0 + z**4 / 144.0 + z**5 / 840.0)
    return np.where(small, series, direct)


@dataclass
class DiscretizedOperator:
    k_bar: np.ndarray
    l_scale: np.ndarray
    l_matrix: np.ndarray
    # retained for the backward pass
    lam: np.ndarray = field(default=None, repr=False)
    dt: float = None
    l_raw: np.ndarray = field(default=None, repr=False)

    @property
    def m_c(self) -> int:
        return self.k_bar.shape[0]


def discretize(spec: ComplexSpectrum, l_matrix: np.ndarray) -> DiscretizedOperator:
    l_matrix = np.asarray(l_matrix)
    if l_matrix.ndim != 2 or l_matrix.shape[1] != spec.m_c:
        raise ShapeError(f"l_matrix must have {spec.m_c} columns, got shape {l_matrix.shape}")
    lam = spec.eigenvalues()
    dt = spec.dt
    k_bar = np.exp(dt * lam)
    l_scale = zoh_scale(lam, dt)
    return DiscretizedOperator(
        k_bar=k_bar,
        l_scale=l_scale,
        l_matrix=l_matrix * l_scale[None, :],
        lam=lam,
        dt=dt,
        l_raw=l_matrix,
    )


def discretize_backward(spec: ComplexSpectrum, op: DiscretizedOperator, grad_k_bar, grad_l_matrix):
    """Map gradients w.r.t. (k_bar, scaled l_matrix) onto (mu, omega, log_dt, raw L).

    Complex gradients follow the packed-real convention g = dL/dRe + i dL/dIm.
    Returns a dict with keys ``mu`` (None for constant mode), ``omega``,
    ``log_dt`` and ``l_matrix`` (complex).
    """
    lam, dt, k = op.lam, op.dt, op.k_bar
    n_f = spec.n_freq
    grad_l_raw = grad_l_matrix * np.conj(op.l_scale)[None, :]
    grad_l_scale = np.sum(np.conj(op.l_raw) * grad_l_matrix, axis=0)

    dscale = zoh_scale_dlam(lam, dt)
    # d/dmu and d/domega of each complex mode (before conjugate-pair folding)
    dk_dmu = dt * k
    dl_dmu = dscale
    dk_dlogdt = dt * lam * k
    dl_dlogdt = dt * k

    def real_inner(g, d):
        return np.real(g * np.conj(d))

    per_mode_mu = real_inner(grad_k_bar, dk_dmu) + real_inner(grad_l_scale, dl_dmu)
    per_mode_om = real_inner(grad_k_bar, 1j * dk_dmu) + real_inner(grad_l_scale, 1j * dl_dmu)
    g_logdt = float(np.sum(real_inner(grad_k_bar, dk_dlogdt) + real_inner(grad_l_scale, dl_dlogdt)))

    g_mu = per_mode_mu[:n_f] + per_mode_mu[n_f:]
    # the conjugate half carries -omega
    g_omega = per_mode_om[:n_f] - per_mode_om[n_f:]
    return {
        "mu": g_mu if spec.learnable_mu else None,
        "omega": g_omega,
        "log_dt": g_logdt,
        "l_matrix": grad_l_raw,
    }


@dataclass
class VandermondeKernel:
    lam_pows: np.ndarray

    @property
    def horizon(self) -> int:
        return self.lam_pows.shape[1] - 1


def vandermonde(op: DiscretizedOperator | np.ndarray, tau: int) -> VandermondeKernel:
    k_bar = op.k_bar if isinstance(op, DiscretizedOperator) else np.asarray(op)
    if tau < 1:
        raise InvalidHorizonError(f"horizon must be >= 1, got {tau}")
    cols = np.empty((k_bar.shape[0], tau + 1), dtype=np.result_type(k_bar, np.complex64))
    cols[:, 0] = 1.0
    for j in range(tau):
        cols[:, j + 1] = k_bar * cols[:, j]
    return VandermondeKernel(cols)
