"""One fixed-point window of the coupled problem, then a short chained run with its energy ledger."""

import numpy as np

from oldroyd_fsi.coupling import CouplingOptions, ProblemData, fixed_point_window, run_simulation
from oldroyd_fsi.diagnostics import energy_report, residual_scaling
from oldroyd_fsi.geometry import FlatSlab
from oldroyd_fsi.solvent_structure import SolventStructureSolver

N, dt = 16, 1 / 32
g = lambda t, y: 0.05 * np.cos(y) * np.sin(np.pi * t)
solver = SolventStructureSolver(FlatSlab(M=2 * N), N, N, dt)
T0 = np.zeros((N, N + 1, 2, 2))

sol = fixed_point_window(solver, solver.initial_state(), T0, 8, g=g)
rep = sol.report
print("iteration  Y-difference   ratio")
for k, d in enumerate(rep.differences):
    r = rep.ratios[k - 1] if k >= 1 else float("nan")
    print(f"{k + 1:9d}  {d:12.3e}  {r:6.3f}")
print(f"converged {rep.converged}, rho {rep.rho:.3f}, X-norms inside the ball: {rep.ball_ok}")

data = ProblemData(np.zeros(2 * N), np.zeros(2 * N), T0, g=g)
res = []
for step in (dt, dt / 2):
    s = SolventStructureSolver(FlatSlab(M=2 * N), N, N, step)
    traj = run_simulation(s, data, CouplingOptions(dt=step, T_final=0.5, T_star=0.25))
    rows = energy_report(traj.records)
    res.append([r["residual"] for r in rows])
    last = rows[-1]
    print(f"dt = {step:.5f}: {traj.stop_reason}, E_fluid {last['E_fluid']:.3e}, "
          f"E_shell_el {last['E_shell_el']:.3e}, W_T {last['W_T']:+.2e}")
print("energy residual ratio under dt-halving:", round(residual_scaling(*res), 3))
