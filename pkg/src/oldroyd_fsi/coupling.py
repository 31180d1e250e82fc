"""Fixed-point coupling of the solvent-structure and solute solves over time windows.

One sweep maps a stress trajectory to the fluid-shell motion it drives, then
to the stress transported by that motion. Sweeps repeat until the
trajectory difference in the time-sup L2 norm (Y) drops below a tolerance.
Windows are chained, and their length adapts to the observed contraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .diagnostics import fluid_sobolev_norm, min_conformation_eigenvalue, time_derivative
from .extension import solenoidal_extension
from .fluid import MACGrid, SlabGeometry
from .geometry import DegeneracyError, FlatSlab, check_nondegeneracy
from .solute import CoverageError, DomainExitError, VelocityHistory, solve_solute_field
from .solvent_structure import (CoupledState, LinearSolverError, SolventStructureSolver, StepRecord,
                                SubIterationError)
from . import spectral

STOP_REASONS = ("completed", "degeneracy", "non_contraction", "subsolver_failure", "io_error")


class NonContractionError(RuntimeError):
    def __init__(self, message: str, ratios=None):
        super().__init__(message)
        self.ratios = ratios or []


@dataclass
class ProblemData:
    """Initial data and forcing on the slab; callables take (t, x, z) and (t, y)."""

    eta0: np.ndarray
    eta_star: np.ndarray
    T0: np.ndarray                       # nodal stress (Nx, Nz+1, 2, 2)
    u0: np.ndarray | None = None         # MAC velocity; None lifts eta_star
    f: Callable | None = None
    g: Callable | None = None


@dataclass
class CouplingOptions:
    dt: float
    T_final: float
    T_star: float
    tol_fp: float = 1e-8
    maxit_fp: int = 10
    solute_mode: str = "incremental"
    min_window_steps: int = 16
    grow_after: int = 3
    R_factor: float = 10.0
    snapshot_every: int = 0


@dataclass
class WindowReport:
    window: int
    t0: float
    t1: float
    steps: int
    iterations: int
    converged: bool
    differences: list[float]
    ratios: list[float]
    rho: float
    x_norms: list[float]
    R: float
    ball_ok: bool
    min_eigenvalue: float


@dataclass
class WindowSolution:
    states: list[CoupledState]
    records: list[StepRecord]
    T: list[np.ndarray]
    report: WindowReport


@dataclass
class Trajectory:
    times: list[float] = field(default_factory=list)
    states: list[CoupledState] = field(default_factory=list)
    T: list[np.ndarray] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    windows: list[WindowReport] = field(default_factory=list)
    fp_rows: list[dict] = field(default_factory=list)
    stop_reason: str = "completed"
    stop_info: dict = field(default_factory=dict)
    snapshots: list[int] = field(default_factory=list)


# ---------------------------------------------------------------------------
# norms over a window


def _weights(geo: SlabGeometry) -> np.ndarray:
    g = geo.grid
    return geo.J_n * g.hx * g.hz * g.zf_row_weight[None, :]


def y_norm(T_traj, states) -> float:
    """sup_t ||T(t)||_{L2(Omega_eta(t))} with nodal Jacobian quadrature."""
    vals = [np.sqrt(np.sum(_weights(s.geo)[..., None, None] * T * T)) for T, s in zip(T_traj, states)]
    return float(max(vals)) if vals else 0.0


def x_norm(T_traj, states, times) -> float:
    """sup_t (||T||_{W^{3,2}} + ||d_t T||_{W^{2,2}}) with mapped nodal differences."""
    dT = time_derivative(T_traj, times)
    best = 0.0
    for T, D, s in zip(T_traj, dT, states):
        g = s.geo.grid
        a = fluid_sobolev_norm(T, 3, g.hx, g.hz, s.geo.J_n, s.geo.zx_n)
        b = fluid_sobolev_norm(D, 2, g.hx, g.hz, s.geo.J_n, s.geo.zx_n)
        best = max(best, a + b)
    return float(best)


# ---------------------------------------------------------------------------
# the two half maps


def solvent_structure_map(solver: SolventStructureSolver, state0: CoupledState, T_traj, f, g,
                          ell: float | None = None):
    """(eta, u, p) trajectory driven by the stress trajectory (one entry per level)."""
    states, records = [state0], []
    st = state0
    for k in range(len(T_traj) - 1):
        st, rec = solver.step(st, T_traj[k], T_traj[k + 1], f, g)
        if ell is not None and np.max(np.abs(st.eta)) > ell:
            i = int(np.argmax(np.abs(st.eta)))
            raise DegeneracyError("shell displacement reached ell", node=i, value=float(st.eta[i]))
        states.append(st)
        records.append(rec)
    return states, records


def solute_map(solver: SolventStructureSolver, states, T_start: np.ndarray, mode: str):
    """Stress trajectory transported by the fluid motion of ``states``."""
    hist = VelocityHistory(solver.grid)
    for s in states:
        hist.add_state(s.t, s.geo, s.u, solver.E @ s.v)
    times = [s.t for s in states[1:]]
    res = solve_solute_field(hist, T_start, times, t_start=states[0].t, dt=solver.dt, mode=mode)
    return [T_start] + res.T, res


def fixed_point_window(solver: SolventStructureSolver, state0: CoupledState, T_start: np.ndarray,
                       steps: int, f=None, g=None, tol: float = 1e-8, maxit: int = 10,
                       R: float | None = None, R_factor: float = 10.0, mode: str = "incremental",
                       guess=None, window: int = 0, ell: float | None = None) -> WindowSolution:
    """Iterate the stress trajectory over ``steps`` fluid steps from ``state0``.

    The initial guess is ``T_start`` held constant (or ``guess``, a trajectory).
    Failing to contract (two consecutive difference ratios >= 1) raises
    NonContractionError; reaching ``maxit`` returns an unconverged report."""
    T_prev = list(guess) if guess is not None else [T_start] * (steps + 1)
    diffs, ratios, xs = [], [], []
    states = records = None
    converged = False
    min_eig = 1.0
    for k in range(1, maxit + 1):
        states, records = solvent_structure_map(solver, state0, T_prev, f, g, ell)
        T_new, res = solute_map(solver, states, T_start, mode)
        min_eig = min(min_eig, res.min_eigenvalue)
        d = y_norm([a - b for a, b in zip(T_new, T_prev)], states)
        diffs.append(d)
        xs.append(x_norm(T_new, states, [s.t for s in states]))
        if R is None:
            R = R_factor * xs[0]
        if len(diffs) > 1 and diffs[-2] > 0:
            ratios.append(diffs[-1] / diffs[-2])
            if len(ratios) >= 2 and ratios[-1] >= 1.0 and ratios[-2] >= 1.0:
                raise NonContractionError("fixed-point differences stopped contracting", ratios)
        T_prev = T_new
        scale = max(1.0, y_norm(T_new, states))
        if d <= tol * scale:
            converged = True
            break
    rho = float(max(ratios)) if ratios else float("nan")
    ball_ok = all(x <= R * (1.0 + 1e-12) for x in xs)
    rep = WindowReport(window, state0.t, states[-1].t, steps, len(diffs), converged, diffs, ratios, rho,
                       xs, float(R), ball_ok, float(min_eig))
    return WindowSolution(states, records, T_prev, rep)


# ---------------------------------------------------------------------------
# smallness of the data


@dataclass
class SmallnessReport:
    value: float
    ok: bool
    initial: float
    forcing: float


def check_smallness(data: ProblemData, geom: FlatSlab, grid: MACGrid, T_final: float, dt: float,
                    c: float = 1.0, eps: float = 0.1) -> SmallnessReport:
    """c (|eta*|_{W1,2}^2 + |eta0|_{W3,2}^2 + |u0|_{W1,2}^2) + int (|f|^2 + |T|_{W1,2}^2 + |g|^2) dt.

    The stress enters through its initial value held over [0, T_final];
    the check is advisory."""
    geo = SlabGeometry(grid, geom, data.eta0)
    u0 = data.u0 if data.u0 is not None else solenoidal_extension(grid, geo, data.eta_star)
    un = geo.node_velocity(u0)
    init = (spectral.sobolev_norm(data.eta_star, 1) ** 2 + spectral.sobolev_norm(data.eta0, 3) ** 2
            + fluid_sobolev_norm(un, 1, grid.hx, grid.hz, geo.J_n, geo.zx_n) ** 2)
    n = max(int(round(T_final / dt)), 1)
    ts = np.linspace(0.0, T_final, n + 1)
    w = np.full(n + 1, T_final / n)
    w[[0, -1]] *= 0.5
    Tn = fluid_sobolev_norm(data.T0, 1, grid.hx, grid.hz, geo.J_n, geo.zx_n) ** 2
    wq = geo.mass_diag()
    y = geom.shell_grid()[..., 0]
    total = 0.0
    for t, wt in zip(ts, w):
        val = Tn
        if data.f is not None:
            F = geo.body_force(data.f, t) / wq
            val += float(np.dot(wq, F * F))
        if data.g is not None:
            gv = np.asarray(data.g(t, y), dtype=float) * np.ones_like(y)
            val += spectral.l2_norm_periodic(gv) ** 2
        total += wt * val
    value = c * init + total
    return SmallnessReport(float(value), bool(value <= eps), float(c * init), float(total))


# ---------------------------------------------------------------------------
# full simulation


def run_simulation(solver: SolventStructureSolver, data: ProblemData, opts: CouplingOptions,
                   on_window: Callable | None = None) -> Trajectory:
    """Chain fixed-point windows to ``T_final`` with adaptive window length."""
    traj = Trajectory()
    geom = solver.geom
    dt = opts.dt
    n_total = int(round(opts.T_final / dt))
    n_win = max(int(round(opts.T_star / dt)), 1)
    try:
        rep = check_nondegeneracy(geom, data.eta0)
        if not rep.ok:
            raise DegeneracyError("initial displacement is degenerate", value=rep.max_disp)
        state = solver.initial_state(data.eta0, data.eta_star, data.u0)
    except DegeneracyError as exc:
        traj.stop_reason = "degeneracy"
        traj.stop_info = {"step": 0, "node": exc.node, "value": exc.value, "message": str(exc)}
        return traj
    T_cur = np.asarray(data.T0, dtype=float)
    traj.times.append(state.t)
    traj.states.append(state)
    traj.T.append(T_cur)
    done, window, easy = 0, 0, 0
    while done < n_total:
        steps = min(n_win, n_total - done)
        try:
            sol = fixed_point_window(solver, state, T_cur, steps, data.f, data.g, opts.tol_fp, opts.maxit_fp,
                                     R_factor=opts.R_factor, mode=opts.solute_mode, window=window,
                                     ell=geom.ell)
        except NonContractionError as exc:
            if n_win // 2 >= opts.min_window_steps:
                n_win //= 2
                easy = 0
                continue
            traj.stop_reason = "non_contraction"
            traj.stop_info = {"step": done, "window_steps": n_win, "ratios": exc.ratios}
            break
        except DegeneracyError as exc:
            traj.stop_reason = "degeneracy"
            traj.stop_info = {"step": done, "node": exc.node, "value": exc.value, "message": str(exc)}
            break
        except (SubIterationError, LinearSolverError, CoverageError, DomainExitError) as exc:
            traj.stop_reason = "subsolver_failure"
            traj.stop_info = {"step": done, "message": str(exc), "kind": type(exc).__name__}
            break
        rep = sol.report
        traj.windows.append(rep)
        for k, d in enumerate(rep.differences, start=1):
            traj.fp_rows.append({"window": window, "k": k, "dY": d,
                                 "rho": rep.ratios[k - 2] if k >= 2 else float("nan"),
                                 "X": rep.x_norms[k - 1], "R": rep.R})
        if not rep.converged:
            # the window is kept but flagged; shorter windows contract faster
            if n_win // 2 >= opts.min_window_steps:
                n_win //= 2
        traj.records.extend(sol.records)
        traj.states.extend(sol.states[1:])
        traj.T.extend(sol.T[1:])
        traj.times.extend(s.t for s in sol.states[1:])
        state, T_cur = sol.states[-1], sol.T[-1]
        done += steps
        window += 1
        if on_window is not None:
            on_window(sol)
        easy = easy + 1 if rep.converged and rep.iterations < 10 else 0
        if easy >= opts.grow_after:
            n_win *= 2
            easy = 0
    if opts.snapshot_every:
        traj.snapshots = list(range(0, len(traj.states), opts.snapshot_every))
        if traj.snapshots[-1] != len(traj.states) - 1:
            traj.snapshots.append(len(traj.states) - 1)
    return traj


def conformation_floor(traj: Trajectory) -> float:
    return min(min_conformation_eigenvalue(T)[0] for T in traj.T) if traj.T else 1.0


def window_consistency(solver: SolventStructureSolver, sol: WindowSolution, f=None, g=None,
                       mode: str = "incremental") -> float:
    """Y-change of a converged window when its own stress is fed back once more."""
    states, _ = solvent_structure_map(solver, sol.states[0], sol.T, f, g)
    T_new, _ = solute_map(solver, states, sol.T[0], mode)
    return y_norm([a - b for a, b in zip(T_new, sol.T)], states)
