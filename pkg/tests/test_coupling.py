import numpy as np
import pytest

from oldroyd_fsi import coupling
from oldroyd_fsi.coupling import (
    CouplingOptions, NonContractionError, ProblemData, STOP_REASONS, check_smallness, conformation_floor,
    fixed_point_window, run_simulation, window_consistency, x_norm, y_norm,
)
from oldroyd_fsi.geometry import FlatSlab
from oldroyd_fsi.solvent_structure import SolventStructureSolver


def shell_load(A=0.05):
    return lambda t, y: A * (np.cos(y) * np.sin(np.pi * t) + 0.6 * np.sin(2 * y) * np.cos(3 * t))


def small_solver(N=16, dt=1 / 32, ell=0.15):
    return SolventStructureSolver(FlatSlab(M=2 * N, ell=ell), N, N, dt)


def zero_data(solver, **kw):
    M = solver.geom.shell_grid().shape[0]
    N = solver.grid.Nx
    return ProblemData(np.zeros(M), np.zeros(M), np.zeros((N, solver.grid.Nz + 1, 2, 2)), **kw)


def test_zero_window_converges_in_one_iteration():
    s = small_solver()
    sol = fixed_point_window(s, s.initial_state(), np.zeros((16, 17, 2, 2)), 4)
    rep = sol.report
    assert rep.converged and rep.iterations == 1 and np.isnan(rep.rho)
    assert rep.differences == [0.0] and all(np.all(T == 0) for T in sol.T)


def test_norms_of_zero_and_constant():
    s = small_solver(8)
    st = s.initial_state()
    T = np.zeros((8, 9, 2, 2))
    assert y_norm([T], [st]) == 0.0
    T[..., 0, 0] = 1.0
    # the slab has area 2 pi; J = 1 in the flat state
    assert y_norm([T], [st]) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-14)
    assert x_norm([T, T], [st, st], [0.0, 1.0]) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-12)


def test_forced_window_contracts():
    s = small_solver()
    sol = fixed_point_window(s, s.initial_state(), np.zeros((16, 17, 2, 2)), 8, g=shell_load())
    rep = sol.report
    assert rep.converged and rep.iterations <= 10
    assert rep.rho < 1.0 and rep.ball_ok
    d = rep.differences
    assert all(b < a for a, b in zip(d[1:], d[2:]))
    assert rep.min_eigenvalue >= -1e-8
    assert window_consistency(s, sol, g=shell_load()) <= 10 * 1e-8 * max(1.0, y_norm(sol.T, sol.states))


def test_window_reports_unconverged_at_maxit():
    s = small_solver()
    sol = fixed_point_window(s, s.initial_state(), np.zeros((16, 17, 2, 2)), 8, g=shell_load(), maxit=2,
                             tol=1e-14)
    assert not sol.report.converged and sol.report.iterations == 2


def test_smallness_zero_data():
    s = small_solver(8)
    rep = check_smallness(zero_data(s), s.geom, s.grid, 0.5, 1 / 32)
    assert rep.value == 0.0 and rep.ok


def test_smallness_scales_quadratically():
    s = small_solver(8)
    y = s.geom.shell_grid()[..., 0]
    vals = []
    for A in (0.01, 0.02):
        d = zero_data(s)
        d.eta0 = A * np.cos(y)
        vals.append(check_smallness(d, s.geom, s.grid, 0.5, 1 / 32).value)
    assert abs(vals[1] / vals[0] - 4.0) <= 1e-6


def test_smallness_flags_large_data():
    s = small_solver(8)
    d = zero_data(s, g=lambda t, y: 2.0 * np.cos(y))
    rep = check_smallness(d, s.geom, s.grid, 0.5, 1 / 32)
    assert not rep.ok and rep.forcing == pytest.approx(0.5 * 4.0 * np.pi, rel=1e-12)


def test_run_completes_and_chains_windows():
    s = small_solver()
    opts = CouplingOptions(dt=1 / 32, T_final=0.25, T_star=0.125, min_window_steps=2)
    traj = run_simulation(s, zero_data(s, g=shell_load()), opts)
    assert traj.stop_reason == "completed"
    assert len(traj.states) == 9 and len(traj.records) == 8
    assert np.allclose(traj.times, np.arange(9) / 32, atol=1e-15)
    keys = [(r["window"], r["k"]) for r in traj.fp_rows]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert conformation_floor(traj) >= -1e-8
    assert traj.windows[0].t1 == traj.windows[1].t0


def test_degeneracy_stop_is_clean():
    s = small_solver(ell=1e-3)
    opts = CouplingOptions(dt=1 / 32, T_final=0.5, T_star=0.125)
    traj = run_simulation(s, zero_data(s, g=lambda t, y: 5.0 * np.cos(y)), opts)
    assert traj.stop_reason == "degeneracy"
    assert traj.stop_info["node"] is not None and abs(traj.stop_info["value"]) > 1e-3
    assert len(traj.states) == len(traj.T) == len(traj.times)


def test_degenerate_initial_displacement():
    s = small_solver()
    d = zero_data(s)
    d.eta0 = 0.5 * np.cos(s.geom.shell_grid()[..., 0])
    traj = run_simulation(s, d, CouplingOptions(dt=1 / 32, T_final=0.25, T_star=0.125))
    assert traj.stop_reason == "degeneracy" and traj.states == []


def test_non_contraction_halves_then_stops(monkeypatch):
    seen = []

    def failing(solver, state0, T_start, steps, *a, **kw):
        seen.append(steps)
        raise NonContractionError("no", [1.2, 1.3])

    monkeypatch.setattr(coupling, "fixed_point_window", failing)
    s = small_solver(8)
    opts = CouplingOptions(dt=1 / 64, T_final=0.5, T_star=0.5, min_window_steps=8)
    traj = run_simulation(s, zero_data(s), opts)
    assert traj.stop_reason == "non_contraction" and traj.stop_reason in STOP_REASONS
    assert seen == [32, 16, 8]
    assert traj.stop_info["ratios"] == [1.2, 1.3]


def test_window_grows_after_easy_windows():
    s = small_solver(8)
    opts = CouplingOptions(dt=1 / 32, T_final=0.5, T_star=1 / 16, grow_after=2)
    traj = run_simulation(s, zero_data(s), opts)
    assert [w.steps for w in traj.windows] == [2, 2, 4, 4, 4]


def test_halving_window_roughly_halves_rho():
    # the contraction estimate is linear in the window length
    s = small_solver()
    rho = [fixed_point_window(s, s.initial_state(), np.zeros((16, 17, 2, 2)), n, g=shell_load()).report.rho
           for n in (16, 8, 4)]
    for a, b in zip(rho, rho[1:]):
        assert 0.3 <= b / a <= 0.7
