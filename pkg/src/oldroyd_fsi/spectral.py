"""Periodic spectral helpers for fields sampled on uniform grids of [0, 2pi)^m."""

from __future__ import annotations

import numpy as np


def wavenumbers(n: int) -> np.ndarray:
    """Integer wavenumbers matching ``np.fft.rfft`` output for a 2pi-periodic grid."""
    return np.arange(n // 2 + 1, dtype=float)


def full_wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


def grid(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n) / n


def _nyquist_weights(n: int) -> np.ndarray:
    # weight of each rfft coefficient in the real trigonometric interpolant
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def derivative(f: np.ndarray, order: int = 1) -> np.ndarray:
    """Spectral derivative of a real periodic 1D sample vector.

    For odd orders the Nyquist coefficient is dropped so the result stays real
    and consistent with the real interpolant.
    """
    n = f.shape[-1]
    k = wavenumbers(n)
    c = np.fft.rfft(f) * (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        c[..., -1] = 0.0
    return np.fft.irfft(c, n=n)


def laplacian(f: np.ndarray) -> np.ndarray:
    return derivative(f, 2)


def eval_matrix(n: int, x: np.ndarray, order: int = 0) -> np.ndarray:
    """Dense matrix ``E`` with ``E @ f`` = (d/dx)^order of the real trigonometric
    interpolant of the samples ``f`` (length ``n``), evaluated at points ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    k = wavenumbers(n)
    w = _nyquist_weights(n)
    if order % 2 == 1 and n % 2 == 0:
        w = w.copy()
        w[-1] = 0.0
    # real part of sum_k w_k c_k (ik)^order e^{ikx} / n, with c_k = sum_m f_m e^{-ik y_m}
    y = grid(n)
    phase = np.outer(x, k)[:, :, None] - (k[:, None] * y[None, :])[None, :, :]
    fac = (1j * k) ** order * w / n
    return np.real(np.einsum("k,pkm->pm", fac, np.exp(1j * phase)))


def evaluate(f: np.ndarray, x: np.ndarray, order: int = 0) -> np.ndarray:
    """Evaluate the real trig interpolant of 1D samples ``f`` (or its derivative) at ``x``."""
    n = f.shape[-1]
    c = np.fft.rfft(f)
    k = wavenumbers(n)
    w = _nyquist_weights(n)
    if order % 2 == 1 and n % 2 == 0:
        w = w.copy()
        w[-1] = 0.0
    x = np.asarray(x, dtype=float)
    c = c * w * (1j * k) ** order / n
    out = np.real(np.exp(1j * x[..., None] * k) @ c)
    return out


def cell_average_matrix(n: int, centres: np.ndarray, width: float) -> np.ndarray:
    """Matrix mapping samples to averages of the interpolant over
    ``[c - width/2, c + width/2]`` for each centre ``c``; the mean mode is kept."""
    centres = np.asarray(centres, dtype=float).ravel()
    k = wavenumbers(n)
    w = _nyquist_weights(n)
    a = 0.5 * width * k
    sinc = np.ones_like(k)
    sinc[1:] = np.sin(a[1:]) / a[1:]
    y = grid(n)
    phase = np.outer(centres, k)[:, :, None] - (k[:, None] * y[None, :])[None, :, :]
    return np.real(np.einsum("k,pkm->pm", w * sinc / n, np.exp(1j * phase)))


def l2_norm_periodic(f: np.ndarray) -> float:
    """L2 norm of a periodic field on [0,2pi)^m via the trapezoid (exact for trig polys)."""
    cell = (2.0 * np.pi) ** f.ndim / f.size
    return float(np.sqrt(np.sum(f * f) * cell))


def sobolev_norm(f: np.ndarray, order: int, seminorm: bool = False) -> float:
    """Spectral W^{order,2} norm of samples of a periodic field on [0,2pi)^m.

    ``seminorm=True`` keeps only the top-order term sum_|alpha|=order."""
    c = np.fft.fftn(f)
    ks = np.meshgrid(*[full_wavenumbers(s) for s in f.shape], indexing="ij")
    k2 = sum(kk * kk for kk in ks)
    if seminorm:
        w = k2**order
    else:
        w = sum(k2**j for j in range(order + 1))
    cell = (2.0 * np.pi) ** f.ndim / f.size
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2) * cell / f.size))


def gradient_nd(f: np.ndarray) -> list[np.ndarray]:
    """Spectral gradient of a real periodic field of any dimension."""
    c = np.fft.fftn(f)
    out = []
    for ax, s in enumerate(f.shape):
        k = full_wavenumbers(s)
        if s % 2 == 0:
            k = k.copy()
            k[s // 2] = 0.0
        shp = [1] * f.ndim
        shp[ax] = s
        out.append(np.real(np.fft.ifftn(1j * k.reshape(shp) * c)))
    return out


def laplacian_nd(f: np.ndarray) -> np.ndarray:
    c = np.fft.fftn(f)
    ks = np.meshgrid(*[full_wavenumbers(s) for s in f.shape], indexing="ij")
    return np.real(np.fft.ifftn(-sum(kk * kk for kk in ks) * c))


def evaluate_nd(f: np.ndarray, pts: np.ndarray, deriv: tuple[int, ...] | None = None) -> np.ndarray:
    """Evaluate the trig interpolant of an m-dimensional periodic field at points
    ``pts`` of shape (..., m). ``deriv`` is an optional derivative multi-index."""
    m = f.ndim
    pts = np.asarray(pts, dtype=float)
    c = np.fft.fftn(f) / f.size
    kk = np.meshgrid(*[full_wavenumbers(s) for s in f.shape], indexing="ij")
    fac = np.ones(f.shape, dtype=complex)
    if deriv is not None:
        for ax, o in enumerate(deriv):
            kd = kk[ax].copy()
            if o % 2 == 1 and f.shape[ax] % 2 == 0:
                kd[np.abs(kd) == f.shape[ax] // 2] = 0.0
            fac = fac * (1j * kd) ** o
    cf = (c * fac).ravel()
    kflat = np.stack([k.ravel() for k in kk], axis=1)
    # split each Nyquist coefficient evenly between -n/2 and +n/2 so the result is real
    for ax, s in enumerate(f.shape):
        if s % 2 == 0:
            nyq = np.flatnonzero(kflat[:, ax] == -(s // 2))
            extra = kflat[nyq].copy()
            extra[:, ax] = s // 2
            cf[nyq] *= 0.5
            kflat = np.concatenate([kflat, extra])
            cf = np.concatenate([cf, cf[nyq]])
    flat = pts.reshape(-1, m)
    out = np.empty(flat.shape[0])
    for lo in range(0, flat.shape[0], 2048):
        p = flat[lo : lo + 2048]
        out[lo : lo + 2048] = np.real(np.exp(1j * (p @ kflat.T)) @ cf)
    return out.reshape(pts.shape[:-1])
