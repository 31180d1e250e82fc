"""Coupled solvent-structure time stepping on the mapped slab.

The fluid step is Crank-Nicolson for the mapped Stokes operator, with the
convection extrapolated by Adams-Bashforth. The boundary data are lifted by
the solenoidal extension, so the linear solve only sees a homogeneous
velocity ``w = u - Phi``. Interface coupling is Dirichlet-Neumann: the fluid
takes the shell velocity, and the shell takes the consistent wall reaction
of the fluid step as its load. The two are sub-iterated to a tolerance.

Energy bookkeeping uses mass-matrix weights. The mass term
``((3 M1 + M0) u1 - (3 M0 + M1) u0) / (4 dt)`` carries the geometric
conservation part of the moving mesh. The pressure gradient is taken at the
midpoint geometry. With these choices each step closes the discrete energy
balance up to O(dt^3).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import spectral
from .extension import correction, solenoidal_extension
from .fluid import MACGrid, SlabGeometry, _Builder, top_face_operator
from .geometry import DegeneracyError, FlatSlab, check_nondegeneracy, moving_normal_and_area
from .shell import PlateSolver


class SubIterationError(RuntimeError):
    """Interface sub-iterations did not reach the tolerance (added-mass regime)."""


class LinearSolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# saddle-point systems


class SaddleSystem:
    """[[S, -G^T], [B, 0]] restricted to free velocity dofs, one pressure pinned.

    ``G`` is the pressure-gradient operator (cells x dofs) and ``B`` the
    constraint; both annihilate constants on the free dofs, so dropping the
    first pressure unknown and the first constraint row leaves a regular system.

    Without ``precond`` the system is factorized. With it, solves run GMRES
    preconditioned by the factors of a nearby system (a lagged factorization).
    """

    def __init__(self, grid: MACGrid, S, G, B, precond: "SaddleSystem | None" = None,
                 rtol: float = 1e-13, maxiter: int = 60):
        self.grid = grid
        fr = grid.free
        self.S, self.G, self.B = S, G, B
        Sff = S[fr][:, fr]
        Gf = G[1:][:, fr]
        Bf = B[1:][:, fr]
        self.K = sp.bmat([[Sff, -Gf.T], [Bf, None]], format="csc")
        self.nf = fr.size
        self.rtol, self.maxiter = rtol, maxiter
        self.krylov_its = 0
        self.lu = None
        self.precond = precond
        if precond is None:
            try:
                self.lu = spla.splu(self.K)
            except RuntimeError as exc:  # singular factor
                raise LinearSolverError(str(exc)) from exc

    def _solve_reduced(self, b):
        if self.lu is not None:
            return self.lu.solve(b)
        pre = self.precond.lu
        x0 = pre.solve(b)
        its = [0]

        def count(_):
            its[0] += 1

        P = spla.LinearOperator(self.K.shape, pre.solve)
        x, info = spla.gmres(self.K, b, x0=x0, rtol=self.rtol, atol=0.0, M=P, restart=self.maxiter,
                             maxiter=1, callback=count, callback_type="pr_norm")
        self.krylov_its = max(self.krylov_its, its[0])
        if info != 0:
            # fall back to a fresh factorization of this system
            self.lu = spla.splu(self.K)
            self.krylov_its = self.maxiter + 1
            return self.lu.solve(b)
        return x

    def solve(self, rhs_u: np.ndarray, rhs_p: np.ndarray):
        """Velocity (full vector, zero on fixed dofs) and pressure (pinned to 0 in cell 0)."""
        g = self.grid
        b = np.concatenate([rhs_u[g.free], rhs_p[1:]])
        x = self._solve_reduced(b)
        if not np.all(np.isfinite(x)):
            raise LinearSolverError("non-finite saddle solution")
        w = np.zeros(g.nu)
        w[g.free] = x[: self.nf]
        p = np.concatenate([[0.0], x[self.nf :]])
        return w, p


def stokes_step_homogeneous(sgeom: SlabGeometry, w: np.ndarray, rhs: np.ndarray, dt: float,
                            system: SaddleSystem | None = None):
    """One Crank-Nicolson step of the mapped Stokes problem with zero wall data.

    ``rhs`` is the load vector (already mass weighted) at the half step. Returns
    the new velocity and the half-step pressure with zero mean.
    """
    g = sgeom.grid
    ops = sgeom.ops
    Md = sgeom.mass_diag()
    if system is None:
        S = (sp.diags(Md / dt) + 0.5 * ops.A).tocsr()
        system = SaddleSystem(g, S, ops.B, ops.B)
    r = Md / dt * w - 0.5 * (ops.A @ w) + rhs
    w1, q = system.solve(r, np.zeros(g.nc))
    vol = sgeom.cell_volumes().ravel()
    q = q - np.dot(vol, q) / vol.sum()
    return w1, q


def steady_stokes(sgeom: SlabGeometry, rhs: np.ndarray):
    """Steady mapped Stokes solve A u - B^T p = rhs, B u = 0 with zero wall data."""
    g = sgeom.grid
    ops = sgeom.ops
    system = SaddleSystem(g, ops.A, ops.B, ops.B)
    u, p = system.solve(rhs, np.zeros(g.nc))
    vol = sgeom.cell_volumes().ravel()
    return u, p - np.dot(vol, p) / vol.sum()


# ---------------------------------------------------------------------------
# pointwise traction load


def wall_pressure(grid: MACGrid, p: np.ndarray) -> np.ndarray:
    """Pressure extrapolated to the top wall nodes (quadratic in Z, averaged in X)."""
    P = p.reshape(grid.Nx, grid.Nz)
    top = (15.0 * P[:, -1] - 10.0 * P[:, -2] + 3.0 * P[:, -3]) / 8.0
    return 0.5 * (top + np.roll(top, 1))


def assemble_shell_load(sgeom: SlabGeometry, u: np.ndarray, p: np.ndarray,
                        T_nodes: np.ndarray | None = None) -> np.ndarray:
    """-(S n_eta) . n a_eta at the shell nodes, with S = 2 D(u) - p I + T at the wall."""
    g, geom = sgeom.grid, sgeom.geom
    L = sgeom.node_gradient(u)[:, -1]
    S = L + np.swapaxes(L, -1, -2)
    pw = wall_pressure(g, p)
    S[..., 0, 0] -= pw
    S[..., 1, 1] -= pw
    if T_nodes is not None:
        S = S + T_nodes[:, -1]
    y = geom.shell_grid()[..., 0] if geom.dim == 2 else None
    comp = np.stack([spectral.evaluate(S[:, i, j], y) for i in range(2) for j in range(2)], axis=-1)
    comp = comp.reshape(y.shape + (2, 2))
    n_eta, area = moving_normal_and_area(geom, sgeom.eta)
    n = geom.normal(geom.shell_grid())
    Sn = np.einsum("...ij,...j->...i", comp, n_eta)
    return -np.sum(Sn * n, axis=-1) * area


# ---------------------------------------------------------------------------
# initial pressure from the Robin problem


@dataclass
class RobinResult:
    p: np.ndarray
    p_wall: np.ndarray
    residual: float
    iterations: int
    compatibility: float


def _face_avg_x(F):
    """Nodal (Nx, Nz+1, ...) -> x-faces (i, j+1/2)."""
    return 0.5 * (F[:, :-1] + F[:, 1:])


def _face_avg_z(F):
    """Nodal (Nx, Nz+1, ...) -> z-faces (i+1/2, j)."""
    return 0.5 * (F + np.roll(F, -1, axis=0))


def initial_pressure_robin(sgeom: SlabGeometry, u0: np.ndarray | None = None, f0=None,
                           T0: np.ndarray | None = None, g0: np.ndarray | None = None,
                           eta_star: np.ndarray | None = None, rtol: float = 1e-10,
                           maxiter: int = 2000) -> RobinResult:
    """Recover p(0) on the mapped slab from the pressure Poisson problem.

    Interior: Lap p = div(f + div T - (u . grad) u). On the shell the Robin
    condition comes from the normal momentum balance at the wall. The rigid
    bottom carries the Neumann condition of the same balance. ``f0(x, z)``
    returns the body force components. Cell-centred finite volumes with wall
    pressure unknowns; GMRES with an incomplete-LU preconditioner.
    """
    g, geom = sgeom.grid, sgeom.geom
    Nx, Nz, hx, hz = g.Nx, g.Nz, g.hx, g.hz
    M = geom.shell_shape[0]
    u0 = np.zeros(g.nu) if u0 is None else u0
    X, Zp = sgeom.node_points()
    fn = np.zeros((Nx, Nz + 1, 2))
    if f0 is not None:
        fx, fz = f0(X, Zp)
        fn[..., 0] += fx
        fn[..., 1] += fz
    v = sgeom.node_velocity(u0)
    L = sgeom.node_gradient(u0)
    divT = np.zeros_like(fn)
    if T0 is not None:
        dTx, dTz = sgeom.node_derivatives(T0)
        divT = dTx[..., :, 0] + dTz[..., :, 1]
    dLx, dLz = sgeom.node_derivatives(L)
    lap_u = dLx[..., :, 0] + dLz[..., :, 1]
    h = fn + divT - np.einsum("...ij,...j->...i", L, v)
    bnd = lap_u + fn + divT     # wall rows enter the boundary conditions

    # right-hand side: outward fluxes of h through every cell face
    hxf, hzf = _face_avg_x(h), _face_avg_z(h)
    Uh = sgeom.J_xf * hxf[..., 0]
    Wh = hzf[..., 1] - sgeom.zx_zf * hzf[..., 0]
    rhs_c = (hz * (np.roll(Uh, -1, axis=0) - Uh) + hx * (Wh[:, 1:] - Wh[:, :-1])).ravel()

    # boundary data at the top face centres
    ex = spectral.evaluate(sgeom.eta, g.x_half, 1)
    area = np.sqrt(1.0 + ex * ex)
    nz = 1.0 / area                  # n_eta . e_z
    n_eta = np.stack([-ex / area, nz], axis=-1)
    G = np.zeros(M)
    if eta_star is not None:
        G += spectral.laplacian(eta_star)
    G -= spectral.laplacian(spectral.laplacian(sgeom.eta))
    if g0 is not None:
        G += g0
    Gh = spectral.evaluate(G, g.x_half)
    Lt = _face_avg_z(L[:, -1:])[:, 0]
    Dn = np.einsum("...ij,...j->...i", Lt + np.swapaxes(Lt, -1, -2), n_eta)[..., 1]
    beta = Dn * nz * area + np.sum(_face_avg_z(bnd[:, -1:])[:, 0] * n_eta, axis=-1) - Gh * nz
    if T0 is not None:
        Tt = _face_avg_z(T0[:, -1:])[:, 0]
        beta += np.einsum("...ij,...j->...i", Tt, n_eta)[..., 1] * nz * area
    alpha = nz * nz * area
    gb = -_face_avg_z(bnd[:, :1])[:, 0, 1]   # d_n p on the bottom, n = -e_z

    nc = g.nc
    b = _Builder((nc + Nx, nc + Nx))
    I, J = np.meshgrid(np.arange(Nx), np.arange(Nz), indexing="ij")
    cid = g.cell_id
    wid = lambda i: nc + (np.asarray(i) % Nx)

    # x-face fluxes F_x(i, j) between cells i-1 and i
    K11, K12 = sgeom.J_xf, -sgeom.zx_xf
    def add_pz_cell(rows, i, j, coef):
        # coef * d_Z p at cell (i, j)
        inner = (j > 0) & (j < Nz - 1)
        b.add(rows[inner], cid(i[inner], j[inner] + 1), coef[inner] / (2 * hz))
        b.add(rows[inner], cid(i[inner], j[inner] - 1), -coef[inner] / (2 * hz))
        bt = j == 0
        for k, c in ((0, -1.5), (1, 2.0), (2, -0.5)):
            b.add(rows[bt], cid(i[bt], j[bt] + k), c * coef[bt] / hz)
        tp = j == Nz - 1
        b.add(rows[tp], cid(i[tp], j[tp] - 1), -coef[tp] / (3 * hz))
        b.add(rows[tp], cid(i[tp], j[tp]), -coef[tp] / hz)
        b.add(rows[tp], wid(i[tp]), 4.0 * coef[tp] / (3 * hz))

    for face_shift, s in ((1, 1.0), (0, -1.0)):
        fi = (I + face_shift) % Nx
        rows = cid(I, J)
        k11, k12 = K11[fi, J], K12[fi, J]
        b.add(rows, cid(fi, J), s * hz * k11 / hx)
        b.add(rows, cid(fi - 1, J), -s * hz * k11 / hx)
        for ci in (fi - 1, fi):
            add_pz_cell(rows, ci % Nx, J, 0.5 * s * hz * k12)

    # z-face fluxes F_z(i, j) between cells j-1 and j (interior faces)
    K21, K22 = -sgeom.zx_zf, (1.0 + sgeom.zx_zf**2) / sgeom.J_zf
    for face_shift, s in ((1, 1.0), (0, -1.0)):
        fj = J + face_shift
        m = (fj > 0) & (fj < Nz)
        rows = cid(I, J)[m]
        ii, jj = I[m], fj[m]
        k21, k22 = K21[ii, jj], K22[ii, jj]
        b.add(rows, cid(ii, jj), s * hx * k22 / hz)
        b.add(rows, cid(ii, jj - 1), -s * hx * k22 / hz)
        for cj in (jj - 1, jj):
            b.add(rows, cid(ii + 1, cj), 0.25 * s * hx * k21 / hx)
            b.add(rows, cid(ii - 1, cj), -0.25 * s * hx * k21 / hx)
    ar = np.arange(Nx)
    rhs = rhs_c.copy()
    # top faces: outward flux hx * a (beta - alpha p_w)
    top_rows = cid(ar, Nz - 1)
    b.add(top_rows, wid(ar), -hx * area * alpha)
    rhs[top_rows] -= hx * area * beta
    # bottom faces: outward flux hx * gb
    rhs[cid(ar, 0)] -= hx * gb
    # wall rows: K22 p_Z + K21 p_X + a alpha p_w = a beta
    wr = wid(ar)
    k21, k22 = K21[:, Nz], K22[:, Nz]
    b.add(wr, wid(ar), 8.0 * k22 / (3 * hz) + area * alpha)
    b.add(wr, cid(ar, Nz - 1), -9.0 * k22 / (3 * hz))
    b.add(wr, cid(ar, Nz - 2), 1.0 * k22 / (3 * hz))
    b.add(wr, wid(ar + 1), k21 / (2 * hx))
    b.add(wr, wid(ar - 1), -k21 / (2 * hx))
    rhs = np.concatenate([rhs, area * beta])

    A = b.tocsr().tocsc()
    _, uz = g.split(u0)
    E = top_face_operator(Nx, M)
    star = np.zeros(M) if eta_star is None else eta_star
    compat = float(np.max(np.abs(uz[:, -1] - E @ star)))
    bn = float(np.linalg.norm(rhs))
    if bn == 0.0:
        return RobinResult(np.zeros(nc), np.zeros(Nx), 0.0, 0, compat)
    ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
    prec = spla.LinearOperator(A.shape, ilu.solve)
    its = [0]
    def cb(_):
        its[0] += 1
    x, info = spla.gmres(A, rhs, rtol=rtol, atol=0.0, M=prec, restart=100, maxiter=maxiter,
                         callback=cb, callback_type="pr_norm")
    res = float(np.linalg.norm(A @ x - rhs) / bn)
    if info != 0 or res > 10 * rtol:
        raise LinearSolverError(f"Robin solve did not converge (info={info}, residual={res:.3e})")
    return RobinResult(x[:nc], x[nc:], res, its[0], compat)


# ---------------------------------------------------------------------------
# coupled stepping


@dataclass
class CoupledState:
    t: float
    u: np.ndarray
    p: np.ndarray
    eta: np.ndarray
    v: np.ndarray
    eta_f: np.ndarray                     # displacement that defines the fluid mesh
    v_prev: np.ndarray | None = None
    conv_prev: np.ndarray | None = None
    step: int = 0
    geo: SlabGeometry | None = field(default=None, repr=False, compare=False)

    def copy(self) -> "CoupledState":
        c = lambda a: None if a is None else a.copy()
        return CoupledState(self.t, self.u.copy(), self.p.copy(), self.eta.copy(), self.v.copy(),
                            self.eta_f.copy(), c(self.v_prev), c(self.conv_prev), self.step, self.geo)


@dataclass
class StepRecord:
    t0: float
    t1: float
    level0: dict
    level1: dict
    residual: float
    iterations: int
    interface_residual: float
    divergence: float
    kinematic: float
    volume: float
    shell_flux: float


ENERGY_KEYS = ("E_shell_kin", "E_shell_el", "E_fluid", "D_shell", "D_fluid", "W_f", "W_g", "W_T")


def _zero_levels():
    return {k: 0.0 for k in ENERGY_KEYS}


class SolventStructureSolver:
    """Partitioned fluid-shell stepper on the flat slab for a given extra stress history.

    ``relaxation`` is ``"fixed"`` (constant ``omega``), ``"aitken"`` (dynamic) or
    ``"newton"``. The last uses the exact interface Jacobian of the flat
    configuration as a preconditioner for the interface residual.
    """

    def __init__(self, geom: FlatSlab, Nx: int, Nz: int, dt: float, fluid: bool = True,
                 wall: str = "no_slip", tol_fsi: float = 1e-10, maxit_fsi: int = 100,
                 relaxation: str = "newton", omega: float = 0.5, lagged_factorization: bool = True,
                 refactor_its: int = 12):
        if geom.dim != 2:
            raise NotImplementedError("the coupled fluid solver is two-dimensional")
        if relaxation not in ("fixed", "aitken", "newton"):
            raise ValueError("relaxation must be fixed, aitken or newton")
        self.geom, self.dt, self.fluid = geom, dt, fluid
        self.grid = MACGrid(Nx, Nz, wall=wall)
        self.M = geom.shell_shape[0]
        self.plate = PlateSolver(self.M, dt)
        self.E = top_face_operator(Nx, self.M)
        self.w_s = 2.0 * np.pi / self.M
        self.tol_fsi, self.maxit_fsi = tol_fsi, maxit_fsi
        self.relaxation, self.omega = relaxation, omega
        self._iface_inv = None
        self.lagged = lagged_factorization
        self.refactor_its = refactor_its
        self._pre: SaddleSystem | None = None
        self._last: SaddleSystem | None = None
        self.factorizations = 0

    # geometry helpers
    def geometry(self, eta_f: np.ndarray) -> SlabGeometry:
        if np.max(np.abs(eta_f)) > self.geom.ell:
            i = int(np.argmax(np.abs(eta_f)))
            raise DegeneracyError("displacement exceeds ell", node=i, value=float(eta_f[i]))
        return SlabGeometry(self.grid, self.geom, eta_f)

    def initial_state(self, eta0=None, v0=None, u0=None, t0: float = 0.0) -> CoupledState:
        g, M = self.grid, self.M
        eta0 = np.zeros(M) if eta0 is None else np.asarray(eta0, dtype=float)
        v0 = np.zeros(M) if v0 is None else np.asarray(v0, dtype=float)
        rep = check_nondegeneracy(self.geom, eta0)
        if not rep.ok:
            raise DegeneracyError("initial displacement is degenerate", value=rep.max_disp)
        st = CoupledState(t0, np.zeros(g.nu), np.zeros(g.nc), eta0.copy(), v0.copy(), eta0.copy())
        if self.fluid:
            st.geo = self.geometry(eta0)
            if u0 is None:
                st.u = solenoidal_extension(g, st.geo, v0)
            else:
                st.u = np.asarray(u0, dtype=float).copy()
        return st

    # level quantities for the energy ledger
    def level_terms(self, geo: SlabGeometry | None, u, eta, v, t, T_nodes, f, g) -> dict:
        pl = self.plate
        out = _zero_levels()
        out["E_shell_kin"] = pl.kinetic(v)
        out["E_shell_el"] = pl.elastic(eta)
        out["D_shell"] = pl.dissipation(v)
        if g is not None:
            out["W_g"] = pl.work(np.asarray(g(t, self.geom.shell_grid()[..., 0]), dtype=float), v)
        if self.fluid and geo is not None:
            Md = geo.mass_diag()
            out["E_fluid"] = 0.5 * float(np.dot(u, Md * u))
            out["D_fluid"] = geo.dissipation(u)
            if f is not None:
                out["W_f"] = float(np.dot(u, geo.body_force(f, t)))
            if T_nodes is not None:
                out["W_T"] = float(np.dot(u, geo.stress_force(T_nodes)))
        return out

    @staticmethod
    def energy_residual(l0: dict, l1: dict, dt: float) -> float:
        E0 = l0["E_shell_kin"] + l0["E_shell_el"] + l0["E_fluid"]
        E1 = l1["E_shell_kin"] + l1["E_shell_el"] + l1["E_fluid"]
        D = 0.5 * dt * (l0["D_shell"] + l0["D_fluid"] + l1["D_shell"] + l1["D_fluid"])
        W = 0.5 * dt * sum(l0[k] + l1[k] for k in ("W_f", "W_g", "W_T"))
        return E1 - E0 + D - W

    # interface Jacobian of the flat configuration (for the newton mode)
    def _flat_interface_inverse(self):
        if self._iface_inv is None:
            geo = self.geometry(np.zeros(self.M))
            Md = geo.mass_diag()
            S = (sp.diags(Md / self.dt) + 0.5 * geo.ops.A).tocsr()
            system = SaddleSystem(self.grid, S, geo.ops.B, geo.ops.B)
            Jm = np.empty((self.M, self.M))
            zero = np.zeros(self.grid.nu)
            for m in range(self.M):
                e = np.zeros(self.M)
                e[m] = 1.0
                Jm[:, m] = self._shell_response(geo, system, S, zero, e, np.zeros(self.M), zero_load=True)
            self._iface_inv = np.linalg.inv(np.eye(self.M) - Jm)
        return self._iface_inv

    def _shell_response(self, geo1, system, S, r, vg, base_load, zero_load=False):
        """Linear part of the shell velocity produced by the fluid reaction to ``vg``."""
        g = self.grid
        phi = solenoidal_extension(g, geo1, vg)
        w, p = system.solve(r - S @ phi, -(system.B @ phi))
        u = phi + w
        lam = (S @ u - system.G.T @ p - r)[g.top]
        load = -(self.E.T @ lam) / self.w_s
        load -= load.mean()
        return self.plate.load_gain(load)

    def _fluid_solve(self, geo1, system, S, r, vg):
        g = self.grid
        phi = solenoidal_extension(g, geo1, vg)
        w, p = system.solve(r - S @ phi, -(system.B @ phi))
        u = phi + w
        lam = (S @ u - system.G.T @ p - r)[g.top]
        return u, p, lam

    def step(self, st: CoupledState, T0=None, T1=None, f=None, g=None) -> tuple[CoupledState, StepRecord]:
        """Advance one step; ``T0`` and ``T1`` are nodal stresses at t and t + dt."""
        dt, grid, M = self.dt, self.grid, self.M
        t0, t1, th = st.t, st.t + dt, st.t + 0.5 * dt
        y = self.geom.shell_grid()[..., 0]
        gh = np.zeros(M) if g is None else np.asarray(g(th, y), dtype=float) * np.ones(M)
        if not self.fluid:
            eta1, v1 = self.plate.step(st.eta, st.v, gh)
            new = CoupledState(t1, st.u, st.p, eta1, v1, eta1.copy(), st.v.copy(), None, st.step + 1)
            l0 = self.level_terms(None, None, st.eta, st.v, t0, None, None, g)
            l1 = self.level_terms(None, None, eta1, v1, t1, None, None, g)
            rec = StepRecord(t0, t1, l0, l1, self.energy_residual(l0, l1, dt), 0, 0.0, 0.0, 0.0, 0.0, 0.0)
            return new, rec

        geo0 = st.geo if st.geo is not None else self.geometry(st.eta_f)
        Ev0 = self.E @ st.v
        conv0 = geo0.convection(st.u, Ev0)
        first = st.conv_prev is None
        if first:
            passes = 2
            eta_f1 = st.eta + dt * st.v
            nonlin = conv0
        else:
            passes = 1
            eta_f1 = st.eta + 0.5 * dt * (3.0 * st.v - st.v_prev)
            nonlin = 1.5 * conv0 - 0.5 * st.conv_prev
        M0 = geo0.mass_diag()
        F0 = np.zeros(grid.nu)
        if f is not None:
            F0 += geo0.body_force(f, t0)
        if T0 is not None:
            F0 += geo0.stress_force(T0)
        vg = st.v if first else 2.0 * st.v - st.v_prev
        for ps in range(passes):
            geo1 = self.geometry(eta_f1)
            geoh = self.geometry(0.5 * (st.eta_f + eta_f1))
            M1 = geo1.mass_diag()
            F1 = np.zeros(grid.nu)
            if f is not None:
                F1 += geo1.body_force(f, t1)
            if T1 is not None:
                F1 += geo1.stress_force(T1)
            A = geoh.ops.A
            S = (sp.diags((3.0 * M1 + M0) / (4.0 * dt)) + 0.5 * A).tocsr()
            r = (3.0 * M0 + M1) / (4.0 * dt) * st.u - 0.5 * (A @ st.u) + 0.5 * (F0 + F1) - nonlin
            system = self._system(S, geoh.ops.B, geo1.ops.B)
            u1, p1, eta1, v1, its, ires = self._interface_loop(st, geo1, system, S, r, gh, vg)
            if first and ps == 0:
                eta_f1 = st.eta + 0.5 * dt * (st.v + v1)
                conv1 = geo1.convection(u1, self.E @ v1)
                nonlin = 0.5 * (conv0 + conv1)
                vg = v1
        new = CoupledState(t1, u1, p1, eta1, v1, eta_f1, st.v.copy(), conv0, st.step + 1, geo1)
        l0 = self.level_terms(geo0, st.u, st.eta, st.v, t0, T0, f, g)
        l1 = self.level_terms(geo1, u1, eta1, v1, t1, T1, f, g)
        _, uz = grid.split(u1)
        kin = float(np.max(np.abs(uz[:, -1] - self.E @ (v1 - correction(self.geom, eta_f1, v1)))))
        vol0 = float(geo0.cell_volumes().sum())
        vol1 = float(geo1.cell_volumes().sum())
        flux = 0.5 * dt * float(np.sum(self.E @ (st.v + v1))) * grid.hx
        rec = StepRecord(t0, t1, l0, l1, self.energy_residual(l0, l1, dt), its, ires,
                         float(np.max(np.abs(geo1.divergence(u1)))), kin, vol1 - vol0, flux)
        return new, rec

    def _system(self, S, G, B) -> SaddleSystem:
        if not self.lagged:
            self.factorizations += 1
            return SaddleSystem(self.grid, S, G, B)
        last = self._last
        if self._pre is None or (last is not None and last.krylov_its > self.refactor_its):
            self._pre = SaddleSystem(self.grid, S, G, B)
            self._last = None
            self.factorizations += 1
            return self._pre
        self._last = SaddleSystem(self.grid, S, G, B, precond=self._pre)
        return self._last

    def _interface_loop(self, st, geo1, system, S, r, gh, vg):
        dt = self.dt
        inv = self._flat_interface_inverse() if self.relaxation == "newton" else None
        omega = self.omega
        R_old = None
        res = np.inf
        for it in range(1, self.maxit_fsi + 1):
            u, p, lam = self._fluid_solve(geo1, system, S, r, vg)
            load = -(self.E.T @ lam) / self.w_s
            c = -np.mean(load + gh)
            eta1, v1 = self.plate.step(st.eta, st.v, load + gh + c)
            R = v1 - vg
            res = float(np.max(np.abs(R)))
            scale = max(1.0, float(np.max(np.abs(v1))))
            if res <= self.tol_fsi * scale:
                # pressure gauge: the constant that keeps the shell mean velocity fixed
                return u, p + c, eta1, v1, it, res
            if self.relaxation == "newton":
                vg = vg + inv @ R
            elif self.relaxation == "aitken":
                if R_old is not None:
                    dR = R - R_old
                    omega = -omega * float(np.dot(R_old, dR)) / float(np.dot(dR, dR))
                R_old = R
                vg = vg + omega * R
            else:
                vg = vg + omega * R
        raise SubIterationError(f"interface residual {res:.3e} after {self.maxit_fsi} sub-iterations")
