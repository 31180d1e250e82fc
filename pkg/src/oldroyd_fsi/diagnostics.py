"""Runtime verification: energy ledger, discrete Sobolev norms, conformation positivity, volume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spectral

ENERGY_COLUMNS = ("t", "E_shell_kin", "E_shell_el", "E_fluid", "D_shell", "D_fluid",
                  "W_f", "W_g", "W_T", "residual")


# ---------------------------------------------------------------------------
# conformation positivity


def sym_eigenvalues(T: np.ndarray) -> np.ndarray:
    """Closed-form ascending eigenvalues of symmetric 2x2 or 3x3 stacks."""
    T = np.asarray(T, dtype=float)
    d = T.shape[-1]
    if d == 2:
        a, b, c = T[..., 0, 0], 0.5 * (T[..., 0, 1] + T[..., 1, 0]), T[..., 1, 1]
        m = 0.5 * (a + c)
        r = np.hypot(0.5 * (a - c), b)
        return np.stack([m - r, m + r], axis=-1)
    if d == 3:
        S = 0.5 * (T + np.swapaxes(T, -1, -2))
        q = np.trace(S, axis1=-2, axis2=-1) / 3.0
        off = S[..., 0, 1] ** 2 + S[..., 0, 2] ** 2 + S[..., 1, 2] ** 2
        dev = (S[..., 0, 0] - q) ** 2 + (S[..., 1, 1] - q) ** 2 + (S[..., 2, 2] - q) ** 2 + 2.0 * off
        p = np.sqrt(dev / 6.0)
        safe = np.where(p > 0, p, 1.0)
        B = (S - q[..., None, None] * np.eye(3)) / safe[..., None, None]
        r = np.clip(np.linalg.det(B) / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        e1 = q + 2.0 * p * np.cos(phi)
        e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
        e2 = 3.0 * q - e1 - e3
        return np.sort(np.stack([e3, e2, e1], axis=-1), axis=-1)
    raise ValueError("closed-form eigenvalues need d in {2, 3}")


def min_conformation_eigenvalue(T: np.ndarray):
    """(min eigenvalue of T + I, flat index of the node attaining it)."""
    T = np.asarray(T, dtype=float)
    d = T.shape[-1]
    if T.size == 0:
        return 1.0, None
    ev = sym_eigenvalues(T + np.eye(d))[..., 0]
    i = int(np.argmin(ev))            # first occurrence: deterministic
    return float(ev.ravel()[i]), np.unravel_index(i, ev.shape)


@dataclass
class SPDReport:
    min_eigenvalue: float
    location: tuple | None
    ok: bool


def spd_monitor(T: np.ndarray, floor: float = -1e-8) -> SPDReport:
    val, loc = min_conformation_eigenvalue(T)
    return SPDReport(val, None if loc is None else tuple(int(i) for i in loc), val >= floor)


# ---------------------------------------------------------------------------
# energy ledger


def energy_report(records) -> list[dict]:
    """One row per step from the step records of the coupled solver.

    Level quantities are those of the step's end level; ``residual`` closes
    Delta E + dt * mean(dissipation) - dt * mean(work) over the step."""
    rows = []
    for r in records:
        row = {"t": r.t1}
        row.update({k: r.level1[k] for k in ENERGY_COLUMNS[1:-1]})
        row["residual"] = r.residual
        rows.append(row)
    return rows


def residual_scaling(res_coarse, res_fine) -> float:
    """Ratio of the mean per-step |residual| on dt and dt/2 (about 8 for O(dt^3))."""
    a = np.mean(np.abs(np.asarray(res_coarse, dtype=float)))
    b = np.mean(np.abs(np.asarray(res_fine, dtype=float)))
    return float(a / b) if b > 0 else np.inf


def damped_oscillator_energy(k: float, a0: float, v0: float, q: float, t):
    """Shell kinetic and elastic energy of the single mode a(t) cos(k y) (integrated over 2pi)."""
    from .shell import mode_solution

    a, adot = mode_solution(k, a0, v0, q, t)
    return 0.5 * np.pi * adot**2, 0.5 * np.pi * k**4 * a**2


# ---------------------------------------------------------------------------
# discrete Sobolev norms


def _node_derivatives(F, hx, hz, J=None, zx=None):
    FX = (np.roll(F, -1, axis=0) - np.roll(F, 1, axis=0)) / (2.0 * hx)
    FZ = np.empty_like(F)
    FZ[:, 1:-1] = (F[:, 2:] - F[:, :-2]) / (2.0 * hz)
    FZ[:, 0] = (-3.0 * F[:, 0] + 4.0 * F[:, 1] - F[:, 2]) / (2.0 * hz)
    FZ[:, -1] = (3.0 * F[:, -1] - 4.0 * F[:, -2] + F[:, -3]) / (2.0 * hz)
    if J is None:
        return FX, FZ
    extra = (slice(None), slice(None)) + (None,) * (F.ndim - 2)
    J, zx = J[extra], zx[extra]
    return FX - zx / J * FZ, FZ / J


def fluid_sobolev_norm(F: np.ndarray, k: int, hx: float, hz: float, J=None, zx=None,
                       seminorm: bool = False) -> float:
    """Mapped W^{k,2} norm of a nodal field F (Nx, Nz+1, ...), Jacobian-weighted trapezoid in Z.

    All derivative multi-indices up to order k are included (or only order k
    with ``seminorm``), the derivatives being iterated nodal differences."""
    Nx, Nzp = F.shape[:2]
    w = np.full(Nzp, hz)
    w[[0, -1]] *= 0.5
    W = hx * np.broadcast_to(w, (Nx, Nzp))
    if J is not None:
        W = W * J
    tail = (slice(None), slice(None)) + (None,) * (F.ndim - 2)
    total = 0.0
    level = [np.asarray(F, dtype=float)]
    for order in range(k + 1):
        if order > 0:
            nxt = []
            for G in level:
                GX, GZ = _node_derivatives(G, hx, hz, J, zx)
                nxt.extend([GX, GZ])
            level = nxt
        if seminorm and order < k:
            continue
        for G in level:
            total += float(np.sum(W[tail] * G * G))
    return float(np.sqrt(total))


def shell_norm(f: np.ndarray, k: int, seminorm: bool = False) -> float:
    return spectral.sobolev_norm(np.asarray(f, dtype=float), k, seminorm=seminorm)


def time_derivative(snapshots, times) -> list[np.ndarray]:
    """Second-order differences of stored snapshots (one-sided at the ends)."""
    s = [np.asarray(a, dtype=float) for a in snapshots]
    t = np.asarray(times, dtype=float)
    n = len(s)
    if n < 2:
        return [np.zeros_like(a) for a in s]
    out = []
    for i in range(n):
        if 0 < i < n - 1:
            out.append((s[i + 1] - s[i - 1]) / (t[i + 1] - t[i - 1]))
        elif i == 0:
            out.append((s[1] - s[0]) / (t[1] - t[0]))
        else:
            out.append((s[-1] - s[-2]) / (t[-1] - t[-2]))
    return out


def norm_suite(t: float, eta, v, u_nodes=None, p_cells=None, T_nodes=None, geo=None,
               dT_nodes=None, k_fluid: int = 3, k_shell: int = 6) -> dict:
    """Labeled norm table for one output time.

    Shell: W^{k,2} of eta and its velocity. Fluid: mapped W^{k,2} of the nodal
    velocity, pressure and stress, plus the stress time derivative if given."""
    row = {"t": float(t)}
    for k in range(k_shell + 1):
        row[f"eta_W{k}"] = shell_norm(eta, k)
    for k in range(min(k_shell, 4) + 1):
        row[f"eta_t_W{k}"] = shell_norm(v, k)
    if geo is not None:
        g = geo.grid
        J, zx = geo.J_n, geo.zx_n
        if u_nodes is not None:
            for k in range(min(k_fluid, 2) + 1):
                row[f"u_W{k}"] = fluid_sobolev_norm(u_nodes, k, g.hx, g.hz, J, zx)
        if p_cells is not None:
            row["p_L2"] = float(np.sqrt(np.sum(geo.cell_volumes().ravel() * p_cells**2)))
        if T_nodes is not None:
            for k in range(k_fluid + 1):
                row[f"T_W{k}"] = fluid_sobolev_norm(T_nodes, k, g.hx, g.hz, J, zx)
        if dT_nodes is not None:
            for k in range(min(k_fluid, 2) + 1):
                row[f"T_t_W{k}"] = fluid_sobolev_norm(dT_nodes, k, g.hx, g.hz, J, zx)
    return row


# ---------------------------------------------------------------------------
# volume ledger


def volume_ledger(records) -> list[dict]:
    """Cumulative change of |Omega_eta| (Jacobian quadrature) against the shell flux integral."""
    rows, dv, fl = [], 0.0, 0.0
    for r in records:
        dv += r.volume
        fl += r.shell_flux
        rows.append({"t": r.t1, "volume_change": dv, "flux_integral": fl, "mismatch": dv - fl})
    return rows
