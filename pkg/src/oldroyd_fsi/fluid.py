"""Mapped staggered (MAC) discretization of the slab fluid in reference coordinates.

Layout on the reference slab [0,2pi) x [0,1] with Nx x Nz cells:

* ``ux[i, j]`` at x-faces (i hx, (j+1/2) hz), j < Nz, physical x-velocity;
* ``uz[i, j]`` at z-faces ((i+1/2) hx, j hz), j <= Nz, physical z-velocity;
  rows j = 0 and j = Nz are the bottom wall and the shell;
* pressure at cell centres, stress at nodes (i hx, j hz).

The reference-to-physical map is (X, Z) -> (X, zeta(X, Z)) with
zeta = Z + eta(X) * cutoff(Z - 1). Contravariant fluxes are
``U = J ux`` and ``W = uz - d_x zeta * avg(ux)`` with ``J = d_Z zeta``, so the
volume-weighted divergence is the plain flux difference of (U, W).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import spectral
from .geometry import FlatSlab, HanzawaMap


class _Builder:
    """Accumulates (row, col, value) triplets of a sparse matrix."""

    def __init__(self, shape):
        self.shape = shape
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows)
        self.r.append(rows.ravel())
        self.c.append(np.broadcast_to(cols, rows.shape).ravel())
        self.v.append(np.broadcast_to(np.asarray(vals, dtype=float), rows.shape).ravel())

    def tocsr(self):
        if not self.r:
            return sp.csr_matrix(self.shape)
        return sp.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
                             shape=self.shape)


class MACGrid:
    """Index bookkeeping and geometry-independent difference operators."""

    def __init__(self, Nx: int, Nz: int, wall: str = "no_slip", width: float = 2.0 * np.pi):
        if wall not in ("no_slip", "free_slip"):
            raise ValueError("wall must be 'no_slip' or 'free_slip'")
        self.Nx, self.Nz, self.wall = Nx, Nz, wall
        self.hx, self.hz = width / Nx, 1.0 / Nz
        self.nux = Nx * Nz
        self.nuz = Nx * (Nz + 1)
        self.nu = self.nux + self.nuz
        self.nc = Nx * Nz
        self.nn = Nx * (Nz + 1)
        i = np.arange(Nx)
        self.x_full = i * self.hx
        self.x_half = (i + 0.5) * self.hx
        self.z_full = np.arange(Nz + 1) * self.hz
        self.z_half = (np.arange(Nz) + 0.5) * self.hz
        uz_ids = self.uz_id(*np.meshgrid(i, np.arange(Nz + 1), indexing="ij"))
        self.bottom = uz_ids[:, 0].copy()
        self.top = uz_ids[:, Nz].copy()
        free = np.ones(self.nu, dtype=bool)
        free[self.bottom] = False
        free[self.top] = False
        self.free = np.flatnonzero(free)
        self.fixed_mask = ~free
        self._build()

    # index maps (periodic in i)
    def ux_id(self, i, j):
        return (np.asarray(i) % self.Nx) * self.Nz + np.asarray(j)

    def uz_id(self, i, j):
        return self.nux + (np.asarray(i) % self.Nx) * (self.Nz + 1) + np.asarray(j)

    def cell_id(self, i, j):
        return (np.asarray(i) % self.Nx) * self.Nz + np.asarray(j)

    def node_id(self, i, j):
        return (np.asarray(i) % self.Nx) * (self.Nz + 1) + np.asarray(j)

    def split(self, u):
        return u[: self.nux].reshape(self.Nx, self.Nz), u[self.nux :].reshape(self.Nx, self.Nz + 1)

    def join(self, ux, uz):
        return np.concatenate([np.ravel(ux), np.ravel(uz)])

    def _build(self):
        Nx, Nz, hx, hz = self.Nx, self.Nz, self.hx, self.hz
        nu, nc, nn = self.nu, self.nc, self.nn
        I, J = np.meshgrid(np.arange(Nx), np.arange(Nz), indexing="ij")
        In, Jn = np.meshgrid(np.arange(Nx), np.arange(Nz + 1), indexing="ij")
        cid = self.cell_id(I, J)
        nid = self.node_id(In, Jn)
        noslip = self.wall == "no_slip"

        # d_X ux at cells
        b = _Builder((nc, nu))
        b.add(cid, self.ux_id(I + 1, J), 1.0 / hx)
        b.add(cid, self.ux_id(I, J), -1.0 / hx)
        self.DXc_ux = b.tocsr()

        # d_Z ux at x-faces: central, wall ghost from a quadratic through the wall value
        b = _Builder((self.nux, nu))
        fid = self.ux_id(I, J)
        up = J < Nz - 1
        dn = J > 0
        b.add(fid[up], self.ux_id(I[up], J[up] + 1), 0.5 / hz)
        b.add(fid[dn], self.ux_id(I[dn], J[dn] - 1), -0.5 / hz)
        if Nz >= 2:
            # wall ghost: -2a + b/3 (quadratic through the no-slip value) or a (mirror)
            ar = np.arange(Nx)
            bot, top = fid[:, 0], fid[:, Nz - 1]
            if noslip:
                b.add(bot, self.ux_id(ar, 0), 1.0 / hz)
                b.add(bot, self.ux_id(ar, 1), -1.0 / (6.0 * hz))
                b.add(top, self.ux_id(ar, Nz - 1), -1.0 / hz)
                b.add(top, self.ux_id(ar, Nz - 2), 1.0 / (6.0 * hz))
            else:
                b.add(bot, self.ux_id(ar, 0), -0.5 / hz)
                b.add(top, self.ux_id(ar, Nz - 1), 0.5 / hz)
        faceDZ = b.tocsr()
        avg_xf_to_c = _Builder((nc, self.nux))
        avg_xf_to_c.add(cid, self.ux_id(I, J), 0.5)
        avg_xf_to_c.add(cid, self.ux_id(I + 1, J), 0.5)
        self.DZc_ux = avg_xf_to_c.tocsr() @ faceDZ

        # d_Z uz at cells
        b = _Builder((nc, nu))
        b.add(cid, self.uz_id(I, J + 1), 1.0 / hz)
        b.add(cid, self.uz_id(I, J), -1.0 / hz)
        self.DZc_uz = b.tocsr()

        # d_Z ux at nodes; wall rows use the slope of the half cell to the wall value
        b = _Builder((nn, nu))
        inner = (Jn > 0) & (Jn < Nz)
        b.add(nid[inner], self.ux_id(In[inner], Jn[inner]), 1.0 / hz)
        b.add(nid[inner], self.ux_id(In[inner], Jn[inner] - 1), -1.0 / hz)
        if noslip:
            b.add(nid[:, 0], self.ux_id(np.arange(Nx), 0), 2.0 / hz)
            b.add(nid[:, Nz], self.ux_id(np.arange(Nx), Nz - 1), -2.0 / hz)
        self.DZn_ux = b.tocsr()

        # d_X uz at nodes
        b = _Builder((nn, nu))
        b.add(nid, self.uz_id(In, Jn), 1.0 / hx)
        b.add(nid, self.uz_id(In - 1, Jn), -1.0 / hx)
        self.DXn_uz = b.tocsr()

        # d_Z uz at z-faces (central inside, one-sided second order at the walls), then to nodes
        b = _Builder((self.nuz, nu))
        zid = self.uz_id(In, Jn) - self.nux
        inner = (Jn > 0) & (Jn < Nz)
        b.add(zid[inner], self.uz_id(In[inner], Jn[inner] + 1), 0.5 / hz)
        b.add(zid[inner], self.uz_id(In[inner], Jn[inner] - 1), -0.5 / hz)
        ar = np.arange(Nx)
        for jw, s in ((0, 1), (Nz, -1)):
            b.add(zid[:, jw], self.uz_id(ar, jw), -1.5 * s / hz)
            b.add(zid[:, jw], self.uz_id(ar, jw + s), 2.0 * s / hz)
            b.add(zid[:, jw], self.uz_id(ar, jw + 2 * s), -0.5 * s / hz)
        zfDZ = b.tocsr()
        b = _Builder((nn, self.nuz))
        b.add(nid, self.uz_id(In, Jn) - self.nux, 0.5)
        b.add(nid, self.uz_id(In - 1, Jn) - self.nux, 0.5)
        self.DZn_uz = b.tocsr() @ zfDZ

        # ux averaged to z-face positions (zero on the wall rows)
        b = _Builder((self.nuz, nu))
        inner = (Jn > 0) & (Jn < Nz)
        for di in (0, 1):
            for dj in (-1, 0):
                b.add(zid[inner], self.ux_id(In[inner] + di, Jn[inner] + dj), 0.25)
        self.Avg_ux_zf = b.tocsr()

        # volume-weighted divergence of fluxes (U at x-faces, W at z-faces)
        b = _Builder((nc, nu))
        b.add(cid, self.ux_id(I + 1, J), hz)
        b.add(cid, self.ux_id(I, J), -hz)
        b.add(cid, self.uz_id(I, J + 1), hx)
        b.add(cid, self.uz_id(I, J), -hx)
        self.Dflux = b.tocsr()

        # node -> cell averaging (stress at nodes, components needed at cells)
        b = _Builder((nc, nn))
        for di in (0, 1):
            for dj in (0, 1):
                b.add(cid, self.node_id(I + di, J + dj), 0.25)
        self.node_to_cell = b.tocsr()

        self.node_row_weight = np.ones(Nz + 1)
        self.node_row_weight[[0, Nz]] = 0.5 if noslip else 0.0
        self.zf_row_weight = np.ones(Nz + 1)
        self.zf_row_weight[[0, Nz]] = 0.5

    # positions
    def ux_positions(self):
        return np.meshgrid(self.x_full, self.z_half, indexing="ij")

    def uz_positions(self):
        return np.meshgrid(self.x_half, self.z_full, indexing="ij")

    def cell_positions(self):
        return np.meshgrid(self.x_half, self.z_half, indexing="ij")

    def node_positions(self):
        return np.meshgrid(self.x_full, self.z_full, indexing="ij")


class SlabGeometry:
    """Metric factors of the mapped slab for one shell displacement."""

    def __init__(self, grid: MACGrid, geom: FlatSlab, eta: np.ndarray):
        self.grid, self.geom = grid, geom
        self.eta = np.asarray(eta, dtype=float)
        self.hmap = HanzawaMap(geom, self.eta)
        c = geom.cutoff
        ef, efx = spectral.evaluate(self.eta, grid.x_full), spectral.evaluate(self.eta, grid.x_full, 1)
        eh, ehx = spectral.evaluate(self.eta, grid.x_half), spectral.evaluate(self.eta, grid.x_half, 1)
        sf, sh = grid.z_full - 1.0, grid.z_half - 1.0
        cf, ch, c1f, c1h = c(sf), c(sh), c.d1(sf), c.d1(sh)
        self.eta_full, self.eta_half = ef, eh
        self.cut_full, self.cut_half = cf, ch
        # x-faces: (full x, half z); z-faces: (half x, full z); cells: (half, half); nodes: (full, full)
        self.J_xf = 1.0 + np.outer(ef, c1h)
        self.zx_xf = np.outer(efx, ch)
        self.J_zf = 1.0 + np.outer(eh, c1f)
        self.zx_zf = np.outer(ehx, cf)
        self.J_c = 1.0 + np.outer(eh, c1h)
        self.zx_c = np.outer(ehx, ch)
        self.J_n = 1.0 + np.outer(ef, c1f)
        self.zx_n = np.outer(efx, cf)
        self.zeta_n = grid.z_full[None, :] + np.outer(ef, cf)
        if min(self.J_xf.min(), self.J_zf.min(), self.J_c.min(), self.J_n.min()) <= 0.0:
            raise ValueError("mapped Jacobian is not positive")
        self._ops = None

    # physical coordinates of the dof locations
    def ux_points(self):
        X, Z = self.grid.ux_positions()
        return X, Z + np.outer(self.eta_full, self.cut_half)

    def uz_points(self):
        X, Z = self.grid.uz_positions()
        return X, Z + np.outer(self.eta_half, self.cut_full)

    def node_points(self):
        X, _ = self.grid.node_positions()
        return X, self.zeta_n

    def cell_points(self):
        X, Z = self.grid.cell_positions()
        return X, Z + np.outer(self.eta_half, self.cut_half)

    def cell_volumes(self):
        g = self.grid
        return self.J_c * g.hx * g.hz

    def mass_diag(self) -> np.ndarray:
        g = self.grid
        mx = self.J_xf * g.hx * g.hz
        mz = self.J_zf * g.hx * g.hz * g.zf_row_weight[None, :]
        return g.join(mx, mz)

    @property
    def ops(self):
        if self._ops is None:
            self._ops = self._assemble()
        return self._ops

    def _assemble(self):
        g = self.grid
        dg = sp.diags
        Jxf, Jcn, Jnn = self.J_xf.ravel(), self.J_c.ravel(), self.J_n.ravel()
        # flux reconstruction
        R = sp.bmat([[dg(Jxf), None], [None, sp.identity(g.nuz)]], format="csr")
        R = R - sp.vstack([sp.csr_matrix((g.nux, g.nu)), dg(self.zx_zf.ravel()) @ g.Avg_ux_zf], format="csr")
        B = (g.Dflux @ R).tocsr()
        exx = g.DXc_ux - dg(self.zx_c.ravel() / Jcn) @ g.DZc_ux
        ezz = dg(1.0 / Jcn) @ g.DZc_uz
        exz = 0.5 * (dg(1.0 / Jnn) @ g.DZn_ux + g.DXn_uz - dg(self.zx_n.ravel() / Jnn) @ g.DZn_uz)
        D = sp.vstack([exx, ezz, exz], format="csr")
        vol_c = (self.J_c * g.hx * g.hz).ravel()
        vol_n = (self.J_n * g.hx * g.hz * g.node_row_weight[None, :]).ravel()
        w_diss = np.concatenate([2.0 * vol_c, 2.0 * vol_c, 4.0 * vol_n])
        w_stress = np.concatenate([vol_c, vol_c, 2.0 * vol_n])
        A = (D.T @ dg(w_diss) @ D).tocsr()
        return _Ops(R=R, B=B, D=D, A=A, w_diss=w_diss, w_stress=w_stress)

    # fluxes and derived quantities
    def fluxes(self, u):
        U = self.ops.R @ u
        return self.grid.split(U)

    def divergence(self, u):
        """Cell divergence (volume weighted) in mapped coordinates."""
        return self.ops.B @ u

    def strain(self, u):
        return self.ops.D @ u

    def dissipation(self, u) -> float:
        e = self.ops.D @ u
        return float(np.dot(self.ops.w_diss, e * e))

    def stress_quadrature(self, T_nodes: np.ndarray) -> np.ndarray:
        """Components (Txx, Tzz at cells; Txz at nodes) matching the strain rows."""
        g = self.grid
        T = T_nodes.reshape(g.nn, 2, 2)
        txx = g.node_to_cell @ T[:, 0, 0]
        tzz = g.node_to_cell @ T[:, 1, 1]
        txz = 0.5 * (T[:, 0, 1] + T[:, 1, 0])
        return np.concatenate([txx, tzz, txz])

    def stress_force(self, T_nodes: np.ndarray) -> np.ndarray:
        """-(grad phi, T) in the weak form, i.e. the discrete div T load vector."""
        return -(self.ops.D.T @ (self.ops.w_stress * self.stress_quadrature(T_nodes)))

    def body_force(self, f, t: float) -> np.ndarray:
        """Mass-weighted load vector of a body force callable f(t, x, z) -> (fx, fz)."""
        X, Z = self.ux_points()
        fx = np.asarray(f(t, X, Z)[0], dtype=float) * np.ones_like(X)
        X, Z = self.uz_points()
        fz = np.asarray(f(t, X, Z)[1], dtype=float) * np.ones_like(X)
        return self.mass_diag() * self.grid.join(fx, fz)

    def mesh_flux(self, v_face: np.ndarray) -> np.ndarray:
        """Mesh flux d_t zeta at z-faces for shell face velocities ``v_face`` (length Nx)."""
        return np.outer(v_face, self.cut_full)

    def convection(self, u: np.ndarray, v_face: np.ndarray) -> np.ndarray:
        """Skew-symmetric convection K(C) u with C the flux relative to the moving mesh."""
        g = self.grid
        ux, uz = g.split(u)
        U, W = self.fluxes(u)
        C = W - self.mesh_flux(v_face)
        C[:, 0] = 0.0
        C[:, -1] = 0.0
        return g.join(*_skew_convection(ux, uz, U, C, g.hx, g.hz))

    # velocity and its gradient at nodes
    def node_velocity(self, u):
        """Physical velocity at nodes, shape (Nx, Nz+1, 2)."""
        g = self.grid
        ux, uz = g.split(u)
        vx = np.zeros((g.Nx, g.Nz + 1))
        vx[:, 1:-1] = 0.5 * (ux[:, :-1] + ux[:, 1:])
        if g.wall == "free_slip":
            vx[:, 0] = 1.5 * ux[:, 0] - 0.5 * ux[:, 1]
            vx[:, -1] = 1.5 * ux[:, -1] - 0.5 * ux[:, -2]
        vz = 0.5 * (uz + np.roll(uz, 1, axis=0))
        return np.stack([vx, vz], axis=-1)

    def node_gradient(self, u):
        """Physical velocity gradient L[i, j] = d_j v_i at nodes, shape (Nx, Nz+1, 2, 2)."""
        g = self.grid
        ux, uz = g.split(u)
        hx, hz, Nz = g.hx, g.hz, g.Nz
        v = self.node_velocity(u)
        vx = v[..., 0]
        dXx = (np.roll(vx, -1, axis=0) - np.roll(vx, 1, axis=0)) / (2.0 * hx)
        dZx = np.empty_like(vx)
        dZx[:, 1:-1] = (ux[:, 1:] - ux[:, :-1]) / hz
        if Nz >= 2:
            dZx[:, 0] = (-8.0 * vx[:, 0] + 9.0 * ux[:, 0] - ux[:, 1]) / (3.0 * hz)
            dZx[:, -1] = (8.0 * vx[:, -1] - 9.0 * ux[:, -1] + ux[:, -2]) / (3.0 * hz)
        dXz = (uz - np.roll(uz, 1, axis=0)) / hx
        zfd = np.empty_like(uz)
        zfd[:, 1:-1] = (uz[:, 2:] - uz[:, :-2]) / (2.0 * hz)
        zfd[:, 0] = (-3.0 * uz[:, 0] + 4.0 * uz[:, 1] - uz[:, 2]) / (2.0 * hz)
        zfd[:, -1] = (3.0 * uz[:, -1] - 4.0 * uz[:, -2] + uz[:, -3]) / (2.0 * hz)
        dZz = 0.5 * (zfd + np.roll(zfd, 1, axis=0))
        J, zx = self.J_n, self.zx_n
        L = np.empty(vx.shape + (2, 2))
        L[..., 0, 0] = dXx - zx / J * dZx
        L[..., 0, 1] = dZx / J
        L[..., 1, 0] = dXz - zx / J * dZz
        L[..., 1, 1] = dZz / J
        return L

    def node_derivatives(self, F: np.ndarray):
        """Physical (d_x F, d_z F) of a nodal array F with shape (Nx, Nz+1, ...).

        Central differences inside, one-sided second order on the wall rows."""
        g = self.grid
        FX = (np.roll(F, -1, axis=0) - np.roll(F, 1, axis=0)) / (2.0 * g.hx)
        FZ = np.empty_like(F)
        FZ[:, 1:-1] = (F[:, 2:] - F[:, :-2]) / (2.0 * g.hz)
        FZ[:, 0] = (-3.0 * F[:, 0] + 4.0 * F[:, 1] - F[:, 2]) / (2.0 * g.hz)
        FZ[:, -1] = (3.0 * F[:, -1] - 4.0 * F[:, -2] + F[:, -3]) / (2.0 * g.hz)
        extra = (slice(None), slice(None)) + (None,) * (F.ndim - 2)
        J, zx = self.J_n[extra], self.zx_n[extra]
        return FX - zx / J * FZ, FZ / J

    def reference_velocity(self, u, v_node: np.ndarray) -> np.ndarray:
        """Velocity of material points in reference coordinates relative to the mesh.

        ``v_node`` is the shell velocity carried by the mesh at node columns."""
        vel = self.node_velocity(u)
        wz = np.outer(v_node, self.cut_full)
        out = np.empty_like(vel)
        out[..., 0] = vel[..., 0]
        out[..., 1] = (vel[..., 1] - self.zx_n * vel[..., 0] - wz) / self.J_n
        out[:, -1, 1] = 0.0
        out[:, 0, 1] = 0.0
        return out


@dataclass
class _Ops:
    R: sp.csr_matrix
    B: sp.csr_matrix
    D: sp.csr_matrix
    A: sp.csr_matrix
    w_diss: np.ndarray
    w_stress: np.ndarray


def _skew_convection(ux, uz, U, C, hx, hz):
    """Dual-cell flux form 1/2 sum_b F_ab u_b; antisymmetric in (a, b) by construction."""
    # x-velocity dual cells
    Fe = 0.5 * hz * (U + np.roll(U, -1, axis=0))            # (i,j) -> (i+1,j)
    Fn = 0.5 * hx * (np.roll(C, 1, axis=0) + C)[:, 1:-1]     # (i,j) -> (i,j+1), j < Nz-1
    kx = 0.5 * (Fe * np.roll(ux, -1, axis=0) - np.roll(Fe, 1, axis=0) * np.roll(ux, 1, axis=0))
    kx[:, :-1] += 0.5 * Fn * ux[:, 1:]
    kx[:, 1:] -= 0.5 * Fn * ux[:, :-1]
    # z-velocity dual cells (half height on the wall rows)
    Up = np.roll(U, -1, axis=0)                               # x-face i+1 rows j
    Ge = np.empty_like(uz)
    Ge[:, 1:-1] = 0.5 * hz * (Up[:, :-1] + Up[:, 1:])
    Ge[:, 0] = 0.25 * hz * Up[:, 0]
    Ge[:, -1] = 0.25 * hz * Up[:, -1]
    Gn = 0.5 * hx * (C[:, :-1] + C[:, 1:])                    # (i,j) -> (i,j+1), j < Nz
    kz = 0.5 * (Ge * np.roll(uz, -1, axis=0) - np.roll(Ge, 1, axis=0) * np.roll(uz, 1, axis=0))
    kz[:, :-1] += 0.5 * Gn * uz[:, 1:]
    kz[:, 1:] -= 0.5 * Gn * uz[:, :-1]
    return kx, kz


@lru_cache(maxsize=16)
def top_face_operator(Nx: int, M: int, width: float = 2.0 * np.pi) -> np.ndarray:
    """Dense map from shell samples (length M) to averages over the Nx top faces (read-only)."""
    hx = width / Nx
    E = spectral.cell_average_matrix(M, (np.arange(Nx) + 0.5) * hx, hx)
    E.setflags(write=False)
    return E
