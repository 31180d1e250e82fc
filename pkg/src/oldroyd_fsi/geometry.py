"""Reference configurations, boundary parametrizations and the Hanzawa transform.

The flexible part of the boundary is a periodic shell parametrized over a
uniform grid ``omega``. A point ``x`` near it is described by its foot point
``y(x)`` on the shell and its signed normal coordinate ``s(x)`` (negative
inside the domain). The transform pushes such points along the reference
normal by ``eta(y) * cutoff(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spectral


class DegeneracyError(RuntimeError):
    """Displacement or area element left the admissible range."""

    def __init__(self, message: str, node: int | tuple | None = None, value: float | None = None):
        super().__init__(message)
        self.node = node
        self.value = value


class NoConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cutoff:
    """C^2 quintic transition: 0 for s <= -width + margin, 1 for s >= -width/4."""

    width: float
    margin: float = 0.0

    @property
    def lower(self) -> float:
        return -self.width + self.margin

    @property
    def upper(self) -> float:
        return -0.25 * self.width

    @property
    def max_slope(self) -> float:
        return 1.875 / (self.upper - self.lower)

    def _t(self, s):
        return np.clip((np.asarray(s, dtype=float) - self.lower) / (self.upper - self.lower), 0.0, 1.0)

    def __call__(self, s):
        t = self._t(s)
        return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)

    def d1(self, s):
        t = self._t(s)
        return 30.0 * t * t * (1.0 - t) ** 2 / (self.upper - self.lower)

    def d2(self, s):
        t = self._t(s)
        w = self.upper - self.lower
        return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w)


class ReferenceGeometry:
    """Common interface of the reference domains.

    Subclasses provide the chart, the normal and the foot-point projection.
    """

    dim: int
    shell_shape: tuple[int, ...]

    def __init__(self, L: float, ell: float, kappa0: float, margin: float | None = None):
        if not 0.0 < ell < L:
            raise ValueError("need 0 < ell < L")
        if kappa0 <= 0.0:
            raise ValueError("kappa0 must be positive")
        self.L = float(L)
        self.ell = float(ell)
        self.kappa0 = float(kappa0)
        self.cutoff = Cutoff(self.L, 0.1 * self.L if margin is None else margin)

    # shell grid
    def shell_grid(self) -> np.ndarray:
        """Shell-node coordinates, shape ``shell_shape + (m,)`` with m = dim - 1."""
        axes = [spectral.grid(n) for n in self.shell_shape]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def shell_cell(self) -> float:
        return float(np.prod([2.0 * np.pi / n for n in self.shell_shape]))

    def chart(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def normal(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def foot(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Foot point and signed normal coordinate of each point."""
        raise NotImplementedError

    def from_foot(self, y: np.ndarray, s: np.ndarray) -> np.ndarray:
        return self.chart(y) + self.normal(y) * np.asarray(s)[..., None]

    def in_tube(self, x: np.ndarray, width: float | None = None) -> np.ndarray:
        _, s = self.foot(x)
        return np.abs(s) < (self.L if width is None else width)

    def max_admissible_displacement(self) -> float:
        """Largest |eta| for which s -> s + eta*cutoff(s) stays monotone."""
        return 1.0 / self.cutoff.max_slope


class FlatSlab(ReferenceGeometry):
    """Tangentially periodic slab [0,2pi)^{d-1} x (0,1); top flexible, bottom rigid."""

    def __init__(self, dim: int = 2, M: int = 64, L: float = 0.5, ell: float = 0.15,
                 kappa0: float = 0.5, margin: float | None = None):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if L >= 1.0:
            raise ValueError("tube must not reach the rigid bottom wall (L < 1)")
        super().__init__(L, ell, kappa0, margin)
        self.dim = dim
        self.shell_shape = (M,) * (dim - 1)

    def chart(self, y):
        y = np.asarray(y, dtype=float)
        one = np.ones(y.shape[:-1] + (1,))
        return np.concatenate([y, one], axis=-1)

    def normal(self, y):
        y = np.asarray(y, dtype=float)
        n = np.zeros(y.shape[:-1] + (self.dim,))
        n[..., -1] = 1.0
        return n

    def foot(self, x):
        x = np.asarray(x, dtype=float)
        return np.mod(x[..., :-1], 2.0 * np.pi), x[..., -1] - 1.0

    def from_foot(self, y, s):
        y = np.asarray(y, dtype=float)
        return np.concatenate([y, 1.0 + np.asarray(s, dtype=float)[..., None]], axis=-1)


class Annulus2D(ReferenceGeometry):
    """Annulus r_in < |x| < 1 with a flexible outer circle and rigid inner circle."""

    dim = 2

    def __init__(self, M: int = 64, L: float = 0.3, ell: float = 0.1, kappa0: float = 0.5,
                 r_in: float = 0.5, margin: float | None = None):
        if L >= 1.0 - r_in:
            raise ValueError("tube must not reach the inner wall (L < 1 - r_in)")
        super().__init__(L, ell, kappa0, margin)
        self.r_in = float(r_in)
        self.shell_shape = (M,)

    def chart(self, y):
        th = np.asarray(y, dtype=float)[..., 0]
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def normal(self, y):
        return self.chart(y)

    def foot(self, x):
        x = np.asarray(x, dtype=float)
        th = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * np.pi)
        return th[..., None], np.hypot(x[..., 0], x[..., 1]) - 1.0


@dataclass
class ShellField:
    """Periodic samples on the shell grid with spectral evaluation."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def __call__(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.ndim == 1:
            return spectral.evaluate(self.values, y[..., 0])
        return spectral.evaluate_nd(self.values, y)

    def grad(self, y: np.ndarray) -> np.ndarray:
        """Tangential gradient at points y, shape (..., m)."""
        y = np.asarray(y, dtype=float)
        if self.ndim == 1:
            return spectral.evaluate(self.values, y[..., 0], order=1)[..., None]
        comps = []
        for ax in range(self.ndim):
            d = [0] * self.ndim
            d[ax] = 1
            comps.append(spectral.evaluate_nd(self.values, y, tuple(d)))
        return np.stack(comps, axis=-1)

    def nodal_grad(self) -> np.ndarray:
        if self.ndim == 1:
            return spectral.derivative(self.values)[..., None]
        return np.stack(spectral.gradient_nd(self.values), axis=-1)


def _as_field(eta) -> ShellField:
    return eta if isinstance(eta, ShellField) else ShellField(np.asarray(eta, dtype=float))


def boundary_point(geom: ReferenceGeometry, eta, y) -> np.ndarray:
    """Displaced boundary point phi(y) + n(y) eta(y)."""
    f = _as_field(eta)
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or (geom.dim == 2 and y.shape[-1:] != (1,)):
        y = y[..., None]
    return geom.chart(y) + geom.normal(y) * f(y)[..., None]


def moving_normal_and_area(geom: ReferenceGeometry, eta, check: bool = True):
    """Outward unit normal and area element of the displaced shell at the shell nodes.

    Returns arrays of shape ``shell_shape + (d,)`` and ``shell_shape``.
    """
    f = _as_field(eta)
    e = f.values
    g = f.nodal_grad()
    if isinstance(geom, FlatSlab):
        # phi_eta(y) = (y, 1 + eta): normal direction (-grad eta, 1)
        nrm = np.concatenate([-g, np.ones(e.shape + (1,))], axis=-1)
        area = np.sqrt(1.0 + np.sum(g * g, axis=-1))
        n_eta = nrm / area[..., None]
    elif isinstance(geom, Annulus2D):
        th = geom.shell_grid()[..., 0]
        er = np.stack([np.cos(th), np.sin(th)], axis=-1)
        et = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        tang = g[..., 0, None] * er + (1.0 + e)[..., None] * et
        area = np.hypot(tang[..., 0], tang[..., 1])
        n_eta = np.stack([tang[..., 1], -tang[..., 0]], axis=-1) / area[..., None]
    else:
        raise TypeError("unsupported geometry")
    if check and np.min(area) < geom.kappa0:
        i = np.unravel_index(int(np.argmin(area)), area.shape)
        raise DegeneracyError("area element below kappa0", node=i, value=float(area[i]))
    return n_eta, area


@dataclass
class NondegeneracyReport:
    ok: bool
    min_area: float
    max_disp: float
    reasons: list[str] = field(default_factory=list)


def check_nondegeneracy(geom: ReferenceGeometry, eta) -> NondegeneracyReport:
    f = _as_field(eta)
    _, area = moving_normal_and_area(geom, f, check=False)
    max_disp = float(np.max(np.abs(f.values))) if f.values.size else 0.0
    min_area = float(np.min(area))
    reasons = []
    if max_disp > geom.ell:
        reasons.append("displacement exceeds ell")
    if min_area < geom.kappa0:
        reasons.append("area element below kappa0")
    return NondegeneracyReport(not reasons, min_area, max_disp, reasons)


class HanzawaMap:
    """Hanzawa transform for a fixed shell displacement.

    Immutable once built; evaluation methods are pure.
    """

    def __init__(self, geom: ReferenceGeometry, eta, newton_maxit: int = 50, newton_tol: float = 1e-14):
        self.geom = geom
        self.eta = _as_field(eta)
        self.eta.values.setflags(write=False)
        max_disp = float(np.max(np.abs(self.eta.values)))
        if max_disp > geom.ell:
            i = np.unravel_index(int(np.argmax(np.abs(self.eta.values))), self.eta.values.shape)
            raise DegeneracyError("|eta| exceeds ell; map not built", node=i, value=max_disp)
        self.newton_maxit = newton_maxit
        self.newton_tol = newton_tol

    @property
    def cutoff(self) -> Cutoff:
        return self.geom.cutoff

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y, s = self.geom.foot(x)
        out = x.copy()
        act = s > self.cutoff.lower
        if np.any(act):
            ya = y[act]
            shift = self.eta(ya) * self.cutoff(s[act])
            out[act] = x[act] + self.geom.normal(ya) * shift[..., None]
        return out

    def solve_normal(self, e: np.ndarray, sh: np.ndarray) -> np.ndarray:
        """Newton solve of s + e*cutoff(s) = sh, elementwise."""
        c = self.cutoff
        s = sh - e * c(sh)
        for _ in range(self.newton_maxit):
            r = s + e * c(s) - sh
            step = r / (1.0 + e * c.d1(s))
            s = s - step
            if np.all(np.abs(step) <= self.newton_tol * (1.0 + np.abs(s))):
                return s
        raise NoConvergenceError("normal-coordinate root solve exceeded its iteration budget")

    def inverse(self, xh: np.ndarray) -> np.ndarray:
        xh = np.asarray(xh, dtype=float)
        y, sh = self.geom.foot(xh)
        out = xh.copy()
        act = sh > self.cutoff.lower
        if np.any(act):
            ya = y[act]
            s = self.solve_normal(self.eta(ya), sh[act])
            out[act] = self.geom.from_foot(ya, s)
        return out

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Analytic gradient of the transform, shape (..., d, d) with [i, j] = d_j Psi_i."""
        x = np.asarray(x, dtype=float)
        d = self.geom.dim
        y, s = self.geom.foot(x)
        jac = np.broadcast_to(np.eye(d), x.shape[:-1] + (d, d)).copy()
        act = s > self.cutoff.lower
        if not np.any(act):
            return jac
        xa, ya, sa = x[act], y[act], s[act]
        e, ge = self.eta(ya), self.eta.grad(ya)
        c, c1 = self.cutoff(sa), self.cutoff.d1(sa)
        if isinstance(self.geom, FlatSlab):
            ja = jac[act]
            ja[..., -1, :-1] = ge * c[..., None]
            ja[..., -1, -1] = 1.0 + e * c1
            jac[act] = ja
        else:
            r = sa + 1.0
            gvec = e * c / r
            grad_th = np.stack([-xa[..., 1], xa[..., 0]], axis=-1) / (r * r)[..., None]
            grad_r = xa / r[..., None]
            grad_g = (ge[..., 0] * c / r)[..., None] * grad_th + (e * (c1 / r - c / (r * r)))[..., None] * grad_r
            jac[act] = (1.0 + gvec)[..., None, None] * np.eye(2) + xa[..., :, None] * grad_g[..., None, :]
        return jac

    def inverse_discrepancy(self, x: np.ndarray) -> float:
        """max |Psi_{-eta}(Psi_eta(x)) - x|: how far the reflected map is from the exact inverse."""
        neg = HanzawaMap(self.geom, ShellField(-self.eta.values))
        return float(np.max(np.abs(neg.forward(self.forward(x)) - x)))

    # flat-slab metric factors used by the mapped fluid operators
    def slab_metrics(self, X: np.ndarray, Z: np.ndarray):
        """For FlatSlab d=2: (zeta, d_x zeta, d_Z zeta) at reference points (X, Z).

        ``X`` and ``Z`` broadcast; eta is evaluated only at the distinct X values.
        """
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        xs, inv = np.unique(X, return_inverse=True)
        e = spectral.evaluate(self.eta.values, xs)[inv].reshape(X.shape)
        ex = spectral.evaluate(self.eta.values, xs, order=1)[inv].reshape(X.shape)
        s = Z - 1.0
        c = self.cutoff(s)
        return Z + e * c, ex * c, 1.0 + e * self.cutoff.d1(s)
