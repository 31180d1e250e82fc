"""Quick invariant suite behind ``oldroyd-fsi verify`` (desk-scale versions of the test oracles)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import algebra
from .extension import solenoidal_extension
from .fluid import MACGrid, SlabGeometry
from .geometry import FlatSlab, HanzawaMap
from .shell import PlateSolver, mode_solution
from .solute import CallableVelocity, closed_form_constant_coeff, trace_characteristics, \
    advance_stress_along_path
from .solvent_structure import SolventStructureSolver, initial_pressure_robin


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (tol {self.tol:.1e}, {self.seconds:.2f}s)"


def _vectorization(rng):
    err = 0.0
    for d in (2, 3):
        L = rng.standard_normal((200, d, d))
        T = rng.standard_normal((200, d, d))
        T = T + np.swapaxes(T, -1, -2)
        lhs = np.einsum("nij,nj->ni", algebra.assemble_W(L), algebra.vec(T))
        rhs = algebra.vec(L @ T + T @ np.swapaxes(L, -1, -2))
        err = max(err, np.max(np.abs(lhs - rhs)) / max(1.0, np.max(np.abs(rhs))))
    return err, 1e-13


def _relaxation(rng):
    zero = CallableVelocity(lambda t, x: np.zeros_like(x), lambda t, x: np.zeros(x.shape + (2,)))
    x = rng.uniform(0, 1, (10, 2))
    T0 = rng.standard_normal((10, 2, 2))
    T0 = T0 + np.swapaxes(T0, -1, -2)
    b = trace_characteristics(zero, x, 0.0, 1.0, 1e-3)
    T1 = advance_stress_along_path(algebra.vec(T0), b)
    return float(np.max(np.abs(T1 - np.exp(-2.0) * algebra.vec(T0)))), 1e-8


def _closed_form(rng):
    err = 0.0
    for _ in range(10):
        L = 0.5 * rng.standard_normal((2, 2))
        flow = CallableVelocity(lambda t, x, L=L: x @ L.T, lambda t, x, L=L: np.broadcast_to(L, x.shape + (2,)))
        T0 = np.zeros(4)
        b = trace_characteristics(flow, np.zeros((1, 2)), 0.0, 1.0, 1e-2)
        T1 = advance_stress_along_path(T0[None], b)
        ref = closed_form_constant_coeff(T0, algebra.assemble_W(L), algebra.assemble_Wvec(L), 1.0)
        err = max(err, float(np.max(np.abs(T1[0] - ref))))
    return err, 1e-8


def _hanzawa(rng):
    geom = FlatSlab(M=32)
    y = geom.shell_grid()[..., 0]
    eta = 0.1 * np.cos(y) + 0.02 * np.sin(3 * y)
    h = HanzawaMap(geom, eta)
    x = np.stack([rng.uniform(0, 2 * np.pi, 500), rng.uniform(0, 1, 500)], axis=-1)
    return float(np.max(np.abs(h.inverse(h.forward(x)) - x))), 1e-10


def _extension_divergence(rng):
    geom = FlatSlab(M=64)
    g = MACGrid(32, 32)
    y = geom.shell_grid()[..., 0]
    geo = SlabGeometry(g, geom, 0.05 * np.cos(y))
    u = solenoidal_extension(g, geo, np.sin(2 * y) + 0.3 * np.cos(y))
    return float(np.max(np.abs(geo.divergence(u)))), 1e-12


def _shell_mode(rng):
    M, dt, k, q = 16, 1e-3, 2, 0.3
    plate = PlateSolver(M, dt)
    y = np.arange(M) * 2 * np.pi / M
    eta, v = 0.1 * np.cos(k * y), np.zeros(M)
    for _ in range(1000):
        eta, v = plate.step(eta, v, q * np.cos(k * y))
    a, _ = mode_solution(k, 0.1, 0.0, q, 1.0)
    return float(np.max(np.abs(eta - a * np.cos(k * y)))), 1e-6


def _robin_zero(rng):
    geom = FlatSlab(M=32)
    g = MACGrid(16, 16)
    res = initial_pressure_robin(SlabGeometry(g, geom, np.zeros(32)))
    return float(np.max(np.abs(res.p))), 1e-12


def _coupled_zero(rng):
    s = SolventStructureSolver(FlatSlab(M=32), 16, 16, 0.05)
    st = s.initial_state()
    for _ in range(3):
        st, _ = s.step(st)
    return float(max(np.max(np.abs(st.u)), np.max(np.abs(st.eta)), np.max(np.abs(st.p)))), 1e-14


CHECKS: dict[str, Callable] = {
    "vectorization identity": _vectorization,
    "pure relaxation": _relaxation,
    "constant-coefficient closed form": _closed_form,
    "Hanzawa roundtrip": _hanzawa,
    "extension divergence": _extension_divergence,
    "shell mode vs damped oscillator": _shell_mode,
    "Robin zero data": _robin_zero,
    "coupled zero data": _coupled_zero,
}


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        rng = np.random.default_rng(seed)
        t = time.perf_counter()
        val, tol = fn(rng)
        out.append(CheckResult(name, float(val), tol, bool(val <= tol), time.perf_counter() - t))
    return out
