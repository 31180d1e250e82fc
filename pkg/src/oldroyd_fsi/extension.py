"""Divergence-free lift of normal boundary data and its flux correction.

In the slab the lift is the discrete curl of a stream function
``psi = A(x) * chi(Z - 1)``, where ``A`` is the running integral of the
corrected datum along the shell and ``chi`` a cutoff supported in the
degeneracy margin. Fluxes are differences of nodal ``psi``, so the mapped
divergence vanishes to rounding.
"""

from __future__ import annotations

import numpy as np

from . import spectral
from .fluid import MACGrid, SlabGeometry, top_face_operator
from .geometry import Cutoff, FlatSlab, ReferenceGeometry, moving_normal_and_area


class DegenerateWeightError(RuntimeError):
    pass


def flux_weight(geom: ReferenceGeometry, eta) -> np.ndarray:
    """(n . n_eta) * a_eta at the shell nodes: the normal flux density per unit datum."""
    n_eta, area = moving_normal_and_area(geom, eta, check=False)
    n = geom.normal(geom.shell_grid())
    return np.sum(n * n_eta, axis=-1) * area


def correction(geom: ReferenceGeometry, eta, xi) -> float:
    """Weighted mean of ``xi`` that makes ``xi - K`` carry zero net flux."""
    xi = np.asarray(xi, dtype=float)
    w = flux_weight(geom, eta)
    den = float(np.sum(w)) * geom.shell_cell
    measure = (2.0 * np.pi) ** (geom.dim - 1)
    if den <= 0.5 * geom.kappa0 * measure:
        raise DegenerateWeightError("flux-weight integral below kappa0 |omega| / 2")
    return float(np.sum(xi * w)) * geom.shell_cell / den


def extension_cutoff(geom: ReferenceGeometry) -> Cutoff:
    # transition on [-3 ell/4, -ell/4]: zero well inside the margin so staggered
    # unknowns outside the ell-tube stay exactly zero on grids with h < ell/4
    return Cutoff(geom.ell, 0.25 * geom.ell)


def stream_function(grid: MACGrid, sgeom: SlabGeometry, xi: np.ndarray, corrected: bool = True):
    """Nodal stream function (Nx, Nz+1) and the corrected face data (Nx,)."""
    geom = sgeom.geom
    xi = np.asarray(xi, dtype=float)
    K = correction(geom, sgeom.eta, xi) if corrected else 0.0
    E = top_face_operator(grid.Nx, xi.size)
    face = E @ (xi - K)
    # remove the rounding-level residual mean so the running integral is periodic
    face = face - face.mean()
    A = grid.hx * np.concatenate([[0.0], np.cumsum(face)[:-1]])
    chi = extension_cutoff(geom)(grid.z_full - 1.0)
    return np.outer(A, chi), face, K


def velocity_from_stream(grid: MACGrid, sgeom: SlabGeometry, psi: np.ndarray, return_fluxes: bool = False):
    """MAC velocity whose mapped fluxes are the discrete curl of the nodal ``psi``; divergence-free by construction."""
    U = -(psi[:, 1:] - psi[:, :-1]) / grid.hz
    W = (np.roll(psi, -1, axis=0) - psi) / grid.hx
    ux = U / sgeom.J_xf
    ubar = (grid.Avg_ux_zf @ grid.join(ux, np.zeros_like(W))).reshape(W.shape)
    uz = W + sgeom.zx_zf * ubar
    u = grid.join(ux, uz)
    return (u, U, W) if return_fluxes else u


def solenoidal_extension(grid: MACGrid, sgeom: SlabGeometry, xi: np.ndarray, return_parts: bool = False):
    """MAC velocity (physical components) lifting the corrected datum ``xi - K(xi)``.

    The top z-face values equal the face averages of ``xi - K``; the field
    vanishes identically where the reference normal coordinate is below -ell.
    """
    if not isinstance(sgeom.geom, FlatSlab) or sgeom.geom.dim != 2:
        raise NotImplementedError("staggered extension is implemented for the 2D slab")
    psi, face, K = stream_function(grid, sgeom, xi)
    phi, U, W = velocity_from_stream(grid, sgeom, psi, return_fluxes=True)
    if return_parts:
        return phi, {"psi": psi, "face": face, "K": K, "U": U, "W": W}
    return phi


def trace_error(grid: MACGrid, sgeom: SlabGeometry, phi: np.ndarray, xi: np.ndarray) -> float:
    """max |Phi o phi_eta - (xi - K) n| at the top face centres."""
    K = correction(sgeom.geom, sgeom.eta, xi)
    ux, uz = grid.split(phi)
    exact = spectral.evaluate(np.asarray(xi, dtype=float) - K, grid.x_half)
    # tangential part vanishes by construction (no-slip velocity at the wall)
    return float(np.max(np.abs(uz[:, -1] - exact)))


def w12_norm(grid: MACGrid, sgeom: SlabGeometry, u: np.ndarray) -> float:
    """Discrete W^{1,2} norm of a MAC field on the mapped slab (nodal quadrature)."""
    v = sgeom.node_velocity(u)
    L = sgeom.node_gradient(u)
    w = sgeom.J_n * grid.hx * grid.hz * grid.zf_row_weight[None, :]
    return float(np.sqrt(np.sum(w * (np.sum(v * v, axis=-1) + np.sum(L * L, axis=(-2, -1))))))


def extension_bound_ratio(grid: MACGrid, sgeom: SlabGeometry, xi: np.ndarray) -> float:
    """||Phi||_{W^{1,2}} / (||xi||_{W^{1,2}} + ||xi grad eta||_{L^2})."""
    phi = solenoidal_extension(grid, sgeom, xi)
    xi = np.asarray(xi, dtype=float)
    gx = spectral.derivative(sgeom.eta)
    cell = 2.0 * np.pi / xi.size
    nxi = np.sqrt(np.sum(xi**2 + spectral.derivative(xi) ** 2) * cell)
    nxe = np.sqrt(np.sum((xi * gx) ** 2) * cell)
    return w12_norm(grid, sgeom, phi) / (nxi + nxe)


def extension_3d_fluxes(geom: FlatSlab, xi: np.ndarray, Nz: int):
    """Smoke-test lift for the 3D slab in contravariant (reference) fluxes.

    Tangential fluxes are -d_Z chi * grad_y q and the normal flux chi * xi~, with
    the discrete periodic Poisson problem Lap_h q = xi~ solved by FFT. The cell
    divergence is returned alongside.
    """
    if geom.dim != 3:
        raise ValueError("3D slab required")
    xi = np.asarray(xi, dtype=float)
    Mx, My = xi.shape
    hx, hy, hz = 2 * np.pi / Mx, 2 * np.pi / My, 1.0 / Nz
    data = xi - xi.mean()
    kx = np.fft.fftfreq(Mx, d=1.0 / Mx)
    ky = np.fft.fftfreq(My, d=1.0 / My)
    sym = (2 * np.cos(kx * hx)[:, None] - 2) / hx**2 + (2 * np.cos(ky * hy)[None, :] - 2) / hy**2
    sym[0, 0] = 1.0
    qh = np.fft.fft2(data) / sym
    qh[0, 0] = 0.0
    q = np.real(np.fft.ifft2(qh))
    chi = extension_cutoff(geom)(np.arange(Nz + 1) * hz - 1.0)
    dchi = np.diff(chi) / hz
    gqx = (q - np.roll(q, 1, axis=0)) / hx       # at x-faces between cells i-1 and i
    gqy = (q - np.roll(q, 1, axis=1)) / hy
    Ux = -gqx[:, :, None] * dchi[None, None, :]
    Uy = -gqy[:, :, None] * dchi[None, None, :]
    Wz = data[:, :, None] * chi[None, None, :]
    div = ((np.roll(Ux, -1, axis=0) - Ux) / hx + (np.roll(Uy, -1, axis=1) - Uy) / hy
           + (Wz[:, :, 1:] - Wz[:, :, :-1]) / hz)
    return {"Ux": Ux, "Uy": Uy, "W": Wz, "div": div, "q": q}
