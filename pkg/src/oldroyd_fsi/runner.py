"""Config -> simulation -> output files. Outputs depend only on the config text and seed."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .config import (RunConfig, force_callable, shell_callable, shell_profile, stream_preset, stress_preset)
from .coupling import CouplingOptions, ProblemData, Trajectory, check_smallness, run_simulation
from .diagnostics import ENERGY_COLUMNS, energy_report, norm_suite, time_derivative, volume_ledger
from .extension import solenoidal_extension, velocity_from_stream
from .fluid import SlabGeometry
from .geometry import FlatSlab
from .io import OutputError, snapshot_fields, write_csv, write_shell_csv, write_snapshot
from .solvent_structure import SolventStructureSolver, initial_pressure_robin

FP_COLUMNS = ("window", "k", "dY", "rho", "X", "R")
WINDOW_COLUMNS = ("window", "t0", "t1", "steps", "iterations", "converged", "rho", "R", "ball_ok",
                  "min_eigenvalue")
VOLUME_COLUMNS = ("t", "volume_change", "flux_integral", "mismatch")
STOP_COLUMNS = ("stop_reason", "step", "t", "node", "value", "message")
SMALL_COLUMNS = ("value", "ok", "initial", "forcing", "c", "eps")

EXIT_OK, EXIT_STOP, EXIT_ERROR = 0, 1, 2


class UnsupportedConfig(ValueError):
    pass


@dataclass
class Problem:
    geom: FlatSlab
    solver: SolventStructureSolver
    data: ProblemData
    opts: CouplingOptions


def build_problem(cfg: RunConfig) -> Problem:
    if cfg["geometry.dim"] != 2:
        raise UnsupportedConfig("coupled runs need dim = 2 (the 3D slab has extension and solute "
                                "kernels only)")
    M, N = cfg["grid.M"], cfg["grid.N"]
    geom = FlatSlab(dim=2, M=M, L=cfg["geometry.L"], ell=cfg["geometry.ell"], kappa0=cfg["geometry.kappa0"])
    solver = SolventStructureSolver(geom, N, N, cfg["time.dt"], wall=cfg["grid.wall"],
                                    tol_fsi=cfg["solver.tol_fsi"], maxit_fsi=cfg["solver.maxit_fsi"],
                                    relaxation=cfg["solver.relaxation"])
    y = geom.shell_grid()[..., 0]
    eta0 = shell_profile(cfg.data["eta0"], y)
    eta_star = shell_profile(cfg.data["eta_star"], y)
    g = solver.grid
    X, Z = g.node_positions()
    u0 = None
    if not cfg.data["u0"].is_zero:
        geo = SlabGeometry(g, geom, eta0)
        u0 = velocity_from_stream(g, geo, stream_preset(cfg.data["u0"], X, Z))
        u0 = u0 + solenoidal_extension(g, geo, eta_star)
    T0 = stress_preset(cfg.data["T0"], X, Z)
    data = ProblemData(eta0, eta_star, T0, u0, force_callable(cfg.data["f"]), shell_callable(cfg.data["g"]))
    opts = CouplingOptions(dt=cfg["time.dt"], T_final=cfg["time.T"], T_star=cfg["time.T_star"],
                           tol_fp=cfg["solver.tol_fp"], maxit_fp=cfg["solver.maxit_fp"],
                           solute_mode=cfg["solver.solute_mode"])
    return Problem(geom, solver, data, opts)


def _snapshot_indices(n_states: int, every: int) -> list[int]:
    if n_states == 0:
        return []
    idx = list(range(0, n_states, every)) if every > 0 else [0]
    if idx[-1] != n_states - 1:
        idx.append(n_states - 1)
    return idx


def ledgers(problem: Problem, traj: Trajectory, cfg: RunConfig, small) -> dict:
    erows = energy_report(traj.records)
    wrows = [{"window": w.window, "t0": w.t0, "t1": w.t1, "steps": w.steps, "iterations": w.iterations,
              "converged": w.converged, "rho": w.rho, "R": w.R, "ball_ok": w.ball_ok,
              "min_eigenvalue": w.min_eigenvalue} for w in traj.windows]
    info = traj.stop_info
    last_t = traj.times[-1] if traj.times else 0.0
    node = info.get("node")
    srow = {"stop_reason": traj.stop_reason, "step": info.get("step", len(traj.records)), "t": last_t,
            "node": "" if node is None else str(node).replace(" ", ""), "value": info.get("value"),
            "message": info.get("message", "")}
    nrows = []
    idx = _snapshot_indices(len(traj.states), cfg["output.snapshot_every"])
    if traj.states and traj.states[0].geo is not None:
        dT = time_derivative(traj.T, traj.times)
        for i in idx:
            s = traj.states[i]
            nrows.append(norm_suite(s.t, s.eta, s.v, s.geo.node_velocity(s.u), s.p, traj.T[i], s.geo, dT[i]))
    ncols = tuple(nrows[0]) if nrows else ("t",)
    small_row = {"value": small.value, "ok": small.ok, "initial": small.initial, "forcing": small.forcing,
                 "c": cfg["smallness.c"], "eps": cfg["smallness.eps"]}
    return {
        "energy": (ENERGY_COLUMNS, erows),
        "fixed_point": (FP_COLUMNS, traj.fp_rows),
        "windows": (WINDOW_COLUMNS, wrows),
        "norms": (ncols, nrows),
        "volume": (VOLUME_COLUMNS, volume_ledger(traj.records)),
        "stop": (STOP_COLUMNS, [srow]),
        "smallness": (SMALL_COLUMNS, [small_row]),
    }


def write_outputs(out_dir: str, problem: Problem, traj: Trajectory, cfg: RunConfig, small) -> list[str]:
    paths = []
    for name, (cols, rows) in ledgers(problem, traj, cfg, small).items():
        p = os.path.join(out_dir, f"{name}.csv")
        write_csv(p, cols, rows)
        paths.append(p)
    if cfg["output.vtk"] and traj.states and traj.states[0].geo is not None:
        y = problem.geom.shell_grid()[..., 0]
        for i in _snapshot_indices(len(traj.states), cfg["output.snapshot_every"]):
            s = traj.states[i]
            base = os.path.join(out_dir, "snapshots", f"step_{s.step:06d}")
            write_snapshot(base + ".vtk", s.geo, snapshot_fields(s.geo, s.u, s.p, traj.T[i]), s.t)
            write_shell_csv(base + "_shell.csv", y, s.eta, s.v)
            paths += [base + ".vtk", base + "_shell.csv"]
    return paths


def initial_pressure(problem: Problem, traj: Trajectory) -> str:
    """Fill p(0) of the first stored state from the Robin problem (the stepping never needs it)."""
    st, d = traj.states[0], problem.data
    f0 = None if d.f is None else (lambda x, z: d.f(0.0, x, z))
    y = problem.geom.shell_grid()[..., 0]
    g0 = None if d.g is None else np.asarray(d.g(0.0, y), dtype=float) * np.ones_like(y)
    res = initial_pressure_robin(st.geo, st.u, f0, traj.T[0], g0, d.eta_star)
    st = st.copy()
    st.p = res.p
    traj.states[0] = st
    return f"initial pressure: Robin residual {res.residual:.3e} after {res.iterations} iterations"


def execute(cfg: RunConfig, out_dir: str, log=print):
    """Run and write every output; returns (exit code, trajectory)."""
    problem = build_problem(cfg)
    lines = [f"seed = {cfg['run.seed']}"] + [f"warning: {w}" for w in cfg.warnings]
    small = check_smallness(problem.data, problem.geom, problem.solver.grid, cfg["time.T"], cfg["time.dt"],
                            c=cfg["smallness.c"], eps=cfg["smallness.eps"])
    if not small.ok:
        lines.append(f"warning: smallness check failed (value {small.value:.6g} > eps {cfg['smallness.eps']:g}); "
                     "continuing")
    traj = run_simulation(problem.solver, problem.data, problem.opts)
    if traj.states and traj.states[0].geo is not None:
        lines.append(initial_pressure(problem, traj))
    lines.append(f"stop_reason = {traj.stop_reason}")
    try:
        write_outputs(out_dir, problem, traj, cfg, small)
        with open(os.path.join(out_dir, "run.log"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cfg.echo() + "\n" + "\n".join(lines) + "\n")
    except OutputError as exc:
        traj.stop_reason = "io_error"
        traj.stop_info = {"message": str(exc)}
        log(f"error: {exc}")
        return EXIT_ERROR, traj
    for ln in lines:
        log(ln)
    return (EXIT_OK if traj.stop_reason == "completed" else EXIT_STOP), traj
