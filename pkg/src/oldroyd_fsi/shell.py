"""Damped plate on a periodic 1D shell grid, advanced spectrally by Crank-Nicolson.

Per Fourier mode k the model is  a'' + k^2 a' + k^4 a = q(t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral


@dataclass
class ShellState:
    eta: np.ndarray
    v: np.ndarray

    def copy(self) -> "ShellState":
        return ShellState(self.eta.copy(), self.v.copy())


class PlateSolver:
    def __init__(self, M: int, dt: float):
        self.M, self.dt = M, dt
        k = spectral.wavenumbers(M)
        self.k2, self.k4 = k**2, k**4
        self.den = 1.0 + 0.5 * dt * self.k2 + 0.25 * dt * dt * self.k4
        self.num = 1.0 - 0.5 * dt * self.k2 - 0.25 * dt * dt * self.k4
        self.cell = 2.0 * np.pi / M

    def step(self, eta: np.ndarray, v: np.ndarray, q: np.ndarray):
        """One CN step with the load ``q`` (nodal, evaluated at the half step)."""
        dt = self.dt
        eh, vh, qh = np.fft.rfft(eta), np.fft.rfft(v), np.fft.rfft(q)
        v1 = (self.num * vh - dt * self.k4 * eh + dt * qh) / self.den
        e1 = eh + 0.5 * dt * (vh + v1)
        return np.fft.irfft(e1, n=self.M), np.fft.irfft(v1, n=self.M)

    def load_gain(self, q: np.ndarray) -> np.ndarray:
        """Linear part of v^{n+1} with respect to the load."""
        return np.fft.irfft(self.dt * np.fft.rfft(q) / self.den, n=self.M)

    # energies (integrals over the 2pi shell)
    def kinetic(self, v) -> float:
        return 0.5 * float(np.sum(v * v)) * self.cell

    def elastic(self, eta) -> float:
        lap = spectral.laplacian(eta)
        return 0.5 * float(np.sum(lap * lap)) * self.cell

    def dissipation(self, v) -> float:
        dv = spectral.derivative(v)
        return float(np.sum(dv * dv)) * self.cell

    def work(self, g, v) -> float:
        return float(np.sum(g * v)) * self.cell


def mode_solution(k: float, a0: float, v0: float, q: float, t):
    """Exact solution of a'' + k^2 a' + k^4 a = q with constant q (underdamped for k > 0)."""
    t = np.asarray(t, dtype=float)
    if k == 0:
        return a0 + v0 * t + 0.5 * q * t * t, v0 + q * t
    ap = q / k**4
    sig, om = 0.5 * k * k, 0.5 * np.sqrt(3.0) * k * k
    c1 = a0 - ap
    c2 = (v0 + sig * c1) / om
    e = np.exp(-sig * t)
    a = ap + e * (c1 * np.cos(om * t) + c2 * np.sin(om * t))
    adot = e * ((-sig * c1 + om * c2) * np.cos(om * t) + (-sig * c2 - om * c1) * np.sin(om * t))
    return a, adot


def static_solution(load: np.ndarray) -> np.ndarray:
    """Mean-free periodic solution of Lap^2 eta = load (mean mode of the load ignored)."""
    M = load.size
    k4 = spectral.wavenumbers(M) ** 4
    c = np.fft.rfft(load)
    out = np.zeros_like(c)
    out[1:] = c[1:] / k4[1:]
    return np.fft.irfft(out, n=M)
