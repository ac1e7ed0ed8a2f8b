"""Multi-step latent rollout: sequential recurrence and the FFT convolution form.

Complex latents are arrays with the mode axis last. The packed-real view
stores real parts in the first half and imaginary parts in the second half.
Gradients of a real loss with respect to a complex quantity z are carried as
``dL/dRe(z) + 1j * dL/dIm(z)``, i.e. the packed-real gradient folded back into
a complex number.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import InvalidHorizonError, ShapeError
from .spectral import DiscretizedOperator, VandermondeKernel

FFT_WORKERS = None  # scipy.fft default; set by the CLI --workers flag


def pack(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=-1)


def unpack(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] % 2:
        raise ShapeError(f"packed dimension must be even, got {x.shape[-1]}")
    m = x.shape[-1] // 2
    return x[..., :m] + 1j * x[..., m:]


def step(op: DiscretizedOperator, x: np.ndarray, u_emb: np.ndarray) -> np.ndarray:
    """One discrete step ``k_bar * x + u_emb @ L_bar``."""
    x = np.asarray(x)
    u_emb = np.asarray(u_emb)
    if x.shape[-1] != op.m_c:
        raise ShapeError(f"latent has {x.shape[-1]} modes, operator has {op.m_c}")
    if u_emb.shape[-1] != op.l_matrix.shape[0]:
        raise ShapeError(
            f"action embedding has {u_emb.shape[-1]} entries, L expects {op.l_matrix.shape[0]}"
        )
    return op.k_bar * x + u_emb @ op.l_matrix


def rollout_sequential(op: DiscretizedOperator | np.ndarray, x0, c_seq) -> np.ndarray:
    """Reference recurrence ``x_{k} = k_bar * x_{k-1} + c_{k-1}`` for k = 1..tau.

    ``c_seq`` has shape (..., tau, m_c); the result has the same shape.
    """
    k_bar = op.k_bar if isinstance(op, DiscretizedOperator) else np.asarray(op)
    c_seq = np.asarray(c_seq)
    x = np.asarray(x0)
    if c_seq.ndim < 2 or c_seq.shape[-2] < 1:
        raise InvalidHorizonError("control sequence must have at least one step")
    if c_seq.shape[-1] != k_bar.shape[0] or x.shape[-1] != k_bar.shape[0]:
        raise ShapeError("mode dimension mismatch")
    out = np.empty(np.broadcast_shapes(c_seq.shape, x.shape[:-1] + (1, x.shape[-1])), dtype=np.result_type(x, c_seq, k_bar))
    for k in range(c_seq.shape[-2]):
        x = k_bar * x + c_seq[..., k, :]
        out[..., k, :] = x
    return out


def fft_size(n: int) -> int:
    return sfft.next_fast_len(2 * n)


def circular_convolution(u, ker, axis: int = -1) -> np.ndarray:
    """Causal convolution ``y_t = sum_{l <= t} ker_{t-l} u_l`` via zero-padded FFT.

    Both operands are padded to at least twice their length so the circular
    wrap-around never reaches the first ``T`` outputs, which are returned.
    """
    u = np.asarray(u)
    ker = np.asarray(ker)
    n = u.shape[axis]
    if ker.shape[axis] != n:
        raise ShapeError(f"length mismatch: {n} vs {ker.shape[axis]}")
    size = fft_size(n)
    uf = sfft.fft(u, n=size, axis=axis, workers=FFT_WORKERS)
    kf = sfft.fft(ker, n=size, axis=axis, workers=FFT_WORKERS)
    y = sfft.ifft(uf * kf, axis=axis, workers=FFT_WORKERS)
    return np.take(y, np.arange(n), axis=axis)


def _kernel_spectrum(lam_pows: np.ndarray, tau: int, size: int, conj: bool = False):
    ker = lam_pows[:, :tau]
    if conj:
        ker = np.conj(ker)
    return sfft.fft(ker, n=size, axis=-1, workers=FFT_WORKERS)


def _check_kernel(kernel: VandermondeKernel, c_seq):
    if c_seq.ndim < 2:
        raise ShapeError("control sequence must be (..., tau, m_c)")
    tau, m_c = c_seq.shape[-2:]
    if kernel.horizon < tau:
        raise ShapeError(f"kernel horizon {kernel.horizon} shorter than sequence length {tau}")
    if kernel.lam_pows.shape[0] != m_c:
        raise ShapeError(f"kernel has {kernel.lam_pows.shape[0]} modes, sequence has {m_c}")
    return tau, m_c


def rollout_parallel(kernel: VandermondeKernel, x0, c_seq) -> np.ndarray:
    """All tau predicted latents at once, one causal convolution per mode.

    ``x0`` is (..., m_c), ``c_seq`` is (..., tau, m_c). The kernel spectrum is
    computed once and broadcast over the batch.
    """
    x0 = np.asarray(x0)
    c_seq = np.asarray(c_seq)
    tau, m_c = _check_kernel(kernel, c_seq)
    if x0.shape[-1] != m_c:
        raise ShapeError("x0 mode dimension mismatch")
    size = fft_size(tau)
    kf = _kernel_spectrum(kernel.lam_pows, tau, size)
    cf = sfft.fft(np.swapaxes(c_seq, -1, -2), n=size, axis=-1, workers=FFT_WORKERS)
    conv = sfft.ifft(cf * kf, axis=-1, workers=FFT_WORKERS)[..., :tau]
    out = conv + kernel.lam_pows[:, 1 : tau + 1] * x0[..., :, None]
    return np.swapaxes(out, -1, -2)


@dataclass
class RolloutGrads:
    grad_x0: np.ndarray
    grad_c: np.ndarray
    grad_k_bar: np.ndarray | None


def rollout_backward(kernel: VandermondeKernel, grads_out, x0=None, preds=None) -> RolloutGrads:
    """Reverse pass of :func:`rollout_parallel`.

    ``grads_out[..., k-1, :]`` is the gradient w.r.t. the k-th prediction.
    The control gradient is the anti-causal correlation
    ``g_c[j] = sum_{m >= j} conj(k_bar)^(m-j) g[m]``, computed as a causal
    convolution of the time-reversed gradients with the conjugated kernel.
    When ``x0`` and ``preds`` are given the gradient w.r.t. ``k_bar`` is
    accumulated as ``sum_j conj(x_j) g_c[j]`` (summed over any batch axes).
    """
    g = np.asarray(grads_out)
    tau, m_c = _check_kernel(kernel, g)
    size = fft_size(tau)
    kf = _kernel_spectrum(kernel.lam_pows, tau, size, conj=True)
    g_rev = np.swapaxes(g[..., ::-1, :], -1, -2)
    gf = sfft.fft(g_rev, n=size, axis=-1, workers=FFT_WORKERS)
    corr = sfft.ifft(gf * kf, axis=-1, workers=FFT_WORKERS)[..., :tau]
    grad_c = np.swapaxes(corr, -1, -2)[..., ::-1, :]
    k_conj = np.conj(kernel.lam_pows[:, 1])
    grad_x0 = k_conj * grad_c[..., 0, :]

    grad_k = None
    if x0 is not None and preds is not None:
        x0 = np.asarray(x0)
        preds = np.asarray(preds)
        prev = np.concatenate([x0[..., None, :], preds[..., : tau - 1, :]], axis=-2)
        grad_k = np.conj(prev) * grad_c
        grad_k = grad_k.reshape(-1, m_c).sum(axis=0)
    return RolloutGrads(grad_x0=grad_x0, grad_c=grad_c, grad_k_bar=grad_k)
