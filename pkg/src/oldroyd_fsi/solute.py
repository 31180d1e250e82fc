"""Characteristic transport of the vectorized extra stress.

Along a particle path X(t) with dX/dt = v(t, X) the stress vector solves the
linear system dT/dt = (W(L) - 2 I) T + w(L), with L the velocity gradient at
the path point. Paths and stress are advanced together by RK4, so the
gradient samples are taken at the RK4 stage points of the path.

For backward semi-Lagrangian evaluation the affine map from the foot-point
stress to the arrival stress, T(t_out) = P T(t_foot) + q, is propagated
backward alongside the path:

    dP/dtau = -P A(tau),   dq/dtau = -P b(tau),   P(t_out) = I, q(t_out) = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .algebra import RELAXATION_RATE, assemble_W, assemble_Wvec, symmetry_defect, unvec, vec
from .fluid import MACGrid, SlabGeometry


class DomainExitError(RuntimeError):
    def __init__(self, message: str, index: int | None = None, violation: float | None = None):
        super().__init__(message)
        self.index = index
        self.violation = violation


class CoverageError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# velocity sources


class CallableVelocity:
    """Analytic velocity with gradient; optional ``domain(x) -> (violation, projected)``."""

    def __init__(self, velocity: Callable, gradient: Callable, dim: int = 2, domain: Callable | None = None,
                 t_range: tuple[float, float] = (-np.inf, np.inf), eps_dom: float = 1e-8):
        self.velocity, self.gradient, self.dim = velocity, gradient, dim
        self.domain, self.t_range, self.eps_dom = domain, t_range, eps_dom

    def sample(self, t: float, x: np.ndarray):
        return np.asarray(self.velocity(t, x), dtype=float), np.asarray(self.gradient(t, x), dtype=float)

    def check(self, x: np.ndarray) -> np.ndarray:
        if self.domain is None:
            return x
        viol, proj = self.domain(x)
        return _project(x, viol, proj, self.eps_dom)

    def covers(self, t0: float, t1: float) -> bool:
        lo, hi = min(t0, t1), max(t0, t1)
        return self.t_range[0] - 1e-12 <= lo and hi <= self.t_range[1] + 1e-12


def _project(x, viol, proj, eps):
    viol = np.asarray(viol)
    bad = viol > eps
    if np.any(bad):
        i = int(np.argmax(viol))
        raise DomainExitError(f"characteristic left the domain by {viol[i]:.3e}", index=i, violation=float(viol[i]))
    out = np.where((viol > 0)[:, None], proj, x)
    return out


def _cubic_weights(s):
    """Lagrange weights on the stencil (-1, 0, 1, 2) for local coordinate s in [0, 1]."""
    return np.stack([-s * (s - 1) * (s - 2) / 6.0, (s + 1) * (s - 1) * (s - 2) / 2.0,
                     -(s + 1) * s * (s - 2) / 2.0, (s + 1) * s * (s - 1) / 6.0], axis=-1)


def interpolate_nodes(F: np.ndarray, hx: float, hz: float, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Cubic interpolation of a nodal array F (Nx, Nz+1, ...) at reference points.

    Periodic in X; in Z the 4-point stencil is shifted inward at the walls."""
    Nx, Nzp = F.shape[:2]
    xi = X / hx
    i0 = np.floor(xi).astype(int)
    wx = _cubic_weights(xi - i0)
    zj = Z / hz
    j0 = np.clip(np.floor(zj).astype(int), 1, Nzp - 3)
    wz = _cubic_weights(zj - j0)
    out = np.zeros((X.size,) + F.shape[2:])
    tail = (slice(None),) + (None,) * (F.ndim - 2)
    for a in range(4):
        ii = (i0 - 1 + a) % Nx
        for b_ in range(4):
            jj = j0 - 1 + b_
            out += (wx[:, a] * wz[:, b_])[tail] * F[ii, jj]
    return out


class VelocityHistory:
    """Time-stamped reference-frame velocities and physical gradients on the slab nodes.

    The reference velocity is the material velocity seen in the fixed slab
    coordinates (relative to the moving mesh); its normal component vanishes on
    both walls, so characteristics stay in [0, 2pi) x [0, 1].
    """

    def __init__(self, grid: MACGrid, eps_dom: float | None = None):
        self.grid = grid
        self.dim = 2
        self.times: list[float] = []
        self.V: list[np.ndarray] = []
        self.L: list[np.ndarray] = []
        self.eps_dom = 1e-6 * min(grid.hx, grid.hz) if eps_dom is None else eps_dom

    def add(self, t: float, V: np.ndarray, L: np.ndarray):
        if self.times and t <= self.times[-1]:
            raise ValueError("timestamps must increase")
        self.times.append(float(t))
        self.V.append(np.asarray(V, dtype=float))
        self.L.append(np.asarray(L, dtype=float))

    def add_state(self, t: float, geo: SlabGeometry, u: np.ndarray, v_face: np.ndarray):
        """Stamp from a fluid state; the mesh moves with the node-averaged wall velocity."""
        v_node = 0.5 * (v_face + np.roll(v_face, 1))
        self.add(t, geo.reference_velocity(u, v_node), geo.node_gradient(u))

    @classmethod
    def steady(cls, grid: MACGrid, V: np.ndarray, L: np.ndarray, t0: float, t1: float):
        h = cls(grid)
        h.add(t0, V, L)
        h.add(t1, V, L)
        return h

    def covers(self, t0: float, t1: float) -> bool:
        lo, hi = min(t0, t1), max(t0, t1)
        return bool(self.times) and self.times[0] - 1e-12 <= lo and hi <= self.times[-1] + 1e-12

    def _bracket(self, t: float):
        ts = self.times
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 2)
        th = (t - ts[k]) / (ts[k + 1] - ts[k])
        return k, min(max(th, 0.0), 1.0)

    def sample(self, t: float, x: np.ndarray):
        g = self.grid
        k, th = self._bracket(t)
        X, Z = x[:, 0] % (2.0 * np.pi), x[:, 1]
        out = []
        for F in (self.V, self.L):
            a = interpolate_nodes(F[k], g.hx, g.hz, X, Z)
            if th > 0.0:
                a = (1.0 - th) * a + th * interpolate_nodes(F[k + 1], g.hx, g.hz, X, Z)
            out.append(a)
        return out[0], out[1]

    def check(self, x: np.ndarray) -> np.ndarray:
        z = x[:, 1]
        viol = np.maximum(-z, z - 1.0)
        proj = x.copy()
        proj[:, 1] = np.clip(z, 0.0, 1.0)
        out = _project(x, viol, proj, self.eps_dom)
        out[:, 0] %= 2.0 * np.pi
        return out


# ---------------------------------------------------------------------------
# characteristics and stress along them


@dataclass
class CharacteristicBundle:
    times: np.ndarray          # (nsteps + 1,)
    positions: np.ndarray      # (nsteps + 1, n, d)
    stage_L: np.ndarray        # (nsteps, 4, n, d, d) gradients at RK4 stage points
    max_violation: float = 0.0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def _steps(t0: float, t1: float, dt: float) -> int:
    n = int(np.ceil(abs(t1 - t0) / abs(dt) - 1e-9))
    return max(n, 1 if t1 != t0 else 0)


def trace_characteristics(hist, seeds: np.ndarray, t0: float, t1: float, dt: float) -> CharacteristicBundle:
    """RK4 paths from ``seeds`` at t0 to t1 (t1 < t0 traces backward).

    The step is ``|dt|`` shortened so that it divides the interval."""
    if not hist.covers(t0, t1):
        raise CoverageError(f"velocity history does not cover [{min(t0, t1)}, {max(t0, t1)}]")
    x = np.array(seeds, dtype=float)
    n = _steps(t0, t1, dt)
    times = np.linspace(t0, t1, n + 1)
    h = (t1 - t0) / n if n else 0.0
    d = x.shape[1]
    pos = np.empty((n + 1,) + x.shape)
    pos[0] = x
    stages = np.empty((n, 4, x.shape[0], d, d))
    for k in range(n):
        t = times[k]
        k1, L1 = hist.sample(t, x)
        x2 = hist.check(x + 0.5 * h * k1)
        k2, L2 = hist.sample(t + 0.5 * h, x2)
        x3 = hist.check(x + 0.5 * h * k2)
        k3, L3 = hist.sample(t + 0.5 * h, x3)
        x4 = hist.check(x + h * k3)
        k4, L4 = hist.sample(t + h, x4)
        x = hist.check(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        pos[k + 1] = x
        stages[k] = (L1, L2, L3, L4)
    return CharacteristicBundle(times, pos, stages)


def _coeffs(L):
    d = L.shape[-1]
    return assemble_W(L) - RELAXATION_RATE * np.eye(d * d), assemble_Wvec(L)


def advance_stress_along_path(T0: np.ndarray, bundle: CharacteristicBundle) -> np.ndarray:
    """RK4 for dT/dt = (W - 2I) T + w along a bundle traced forward in time.

    ``T0`` has shape (n, d*d) (or (d*d,) for a single path)."""
    single = T0.ndim == 1
    T = np.array(T0, dtype=float)[None] if single else np.array(T0, dtype=float)
    h = bundle.dt
    if h < 0:
        raise ValueError("bundle runs backward; use path_propagator")
    for k in range(bundle.stage_L.shape[0]):
        A1, b1 = _coeffs(bundle.stage_L[k, 0])
        A2, b2 = _coeffs(bundle.stage_L[k, 1])
        A3, b3 = _coeffs(bundle.stage_L[k, 2])
        A4, b4 = _coeffs(bundle.stage_L[k, 3])
        f = lambda A, b, y: np.einsum("nij,nj->ni", A, y) + b
        k1 = f(A1, b1, T)
        k2 = f(A2, b2, T + 0.5 * h * k1)
        k3 = f(A3, b3, T + 0.5 * h * k2)
        k4 = f(A4, b4, T + h * k3)
        T = T + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return T[0] if single else T


def path_propagator(bundle: CharacteristicBundle):
    """(P, q) with T(t_start) = P T(t_end) + q for a bundle traced backward from t_start."""
    h = bundle.dt                   # negative
    n = bundle.positions.shape[1]
    d = bundle.positions.shape[2]
    P = np.broadcast_to(np.eye(d * d), (n, d * d, d * d)).copy()
    q = np.zeros((n, d * d))
    for k in range(bundle.stage_L.shape[0]):
        A1, b1 = _coeffs(bundle.stage_L[k, 0])
        A2, b2 = _coeffs(bundle.stage_L[k, 1])
        A3, b3 = _coeffs(bundle.stage_L[k, 2])
        A4, b4 = _coeffs(bundle.stage_L[k, 3])
        fP = lambda A, Y: -Y @ A
        fq = lambda A, b, Y: -np.einsum("nij,nj->ni", Y, b)
        P1, q1 = fP(A1, P), fq(A1, b1, P)
        Pa = P + 0.5 * h * P1
        P2, q2 = fP(A2, Pa), fq(A2, b2, Pa)
        Pb = P + 0.5 * h * P2
        P3, q3 = fP(A3, Pb), fq(A3, b3, Pb)
        Pc = P + h * P3
        P4, q4 = fP(A4, Pc), fq(A4, b4, Pc)
        P = P + h / 6.0 * (P1 + 2.0 * P2 + 2.0 * P3 + P4)
        q = q + h / 6.0 * (q1 + 2.0 * q2 + 2.0 * q3 + q4)
    return P, q


def closed_form_constant_coeff(T0: np.ndarray, Wm: np.ndarray, Wv: np.ndarray, t: float) -> np.ndarray:
    """exp((W - 2I) t) T0 + int_0^t exp((W - 2I)(t - s)) w ds via one augmented exponential."""
    m = Wm.shape[0]
    aug = np.zeros((m + 1, m + 1))
    aug[:m, :m] = Wm - RELAXATION_RATE * np.eye(m)
    aug[:m, m] = Wv
    E = sla.expm(aug * t)
    return E[:m, :m] @ np.asarray(T0, dtype=float) + E[:m, m]


# ---------------------------------------------------------------------------
# field solves on the slab nodes


@dataclass
class SoluteResult:
    times: np.ndarray
    T: list[np.ndarray]             # nodal tensors (Nx, Nz+1, 2, 2) per output time
    symmetry_defect: float
    min_eigenvalue: float


def node_seeds(grid: MACGrid) -> np.ndarray:
    X, Z = grid.node_positions()
    return np.stack([X.ravel(), Z.ravel()], axis=-1)


def solve_solute_field(hist: VelocityHistory, T0: np.ndarray, times, t_start: float | None = None,
                       dt: float | None = None, mode: str = "backtrace") -> SoluteResult:
    """Nodal stress at each output time from the nodal stress ``T0`` at ``t_start``.

    ``mode="backtrace"`` traces every node from each output time back to
    ``t_start`` and evaluates the initial stress at the foot point (cubic
    interpolation). ``mode="incremental"`` does the same between consecutive
    output times, interpolating the previous output instead; the cost is
    linear rather than quadratic in the number of output times.
    """
    from .diagnostics import min_conformation_eigenvalue

    g = hist.grid
    times = np.asarray(times, dtype=float)
    t_start = hist.times[0] if t_start is None else t_start
    if dt is None:
        dt = float(np.min(np.diff(hist.times))) if len(hist.times) > 1 else 1.0
    if mode not in ("backtrace", "incremental"):
        raise ValueError("mode must be backtrace or incremental")
    seeds = node_seeds(g)
    shape = (g.Nx, g.Nz + 1)
    base = vec(np.asarray(T0, dtype=float)).reshape(shape + (4,))
    out = []
    prev_t, prev = t_start, base
    for t in times:
        src_t, src = (t_start, base) if mode == "backtrace" else (prev_t, prev)
        if t == src_t:
            cur = src.copy()
        else:
            bundle = trace_characteristics(hist, seeds, t, src_t, dt)
            P, q = path_propagator(bundle)
            foot = bundle.positions[-1]
            Tf = interpolate_nodes(src, g.hx, g.hz, foot[:, 0], foot[:, 1])
            cur = (np.einsum("nij,nj->ni", P, Tf) + q).reshape(shape + (4,))
        out.append(cur)
        prev_t, prev = t, cur
    tensors = [unvec(c) for c in out]
    # symmetrize the rounding-level skew part (reported before removal)
    defect = max((symmetry_defect(T) for T in tensors), default=0.0)
    tensors = [0.5 * (T + np.swapaxes(T, -1, -2)) for T in tensors]
    mins = [min_conformation_eigenvalue(T)[0] for T in tensors]
    return SoluteResult(times, tensors, defect, min(mins) if mins else 1.0)
