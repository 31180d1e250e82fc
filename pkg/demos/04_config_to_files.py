"""Config text in, CSV ledgers and VTK snapshots out; the same input gives the same bytes."""

import filecmp
import os
import tempfile

from oldroyd_fsi.config import parse_config
from oldroyd_fsi.io import read_csv, read_snapshot
from oldroyd_fsi.runner import execute

TEXT = """
[grid]
N = 16
M = 32
[time]
T = 0.25
dt = 0.03125
T_star = 0.125
[data]
g = fourier_mode(1, 0.05, 3.141592653589793) + fourier_mode(2, 0.02, 3)
[output]
snapshot_every = 4
"""

cfg = parse_config(TEXT)
with tempfile.TemporaryDirectory() as tmp:
    a, b = os.path.join(tmp, "a"), os.path.join(tmp, "b")
    code, traj = execute(cfg, a)
    execute(cfg, b, log=lambda s: None)
    print("exit code", code, "files:", sorted(os.listdir(a)))
    cols, rows = read_csv(os.path.join(a, "energy.csv"))
    print(cols)
    print("last residual", rows[-1]["residual"])
    snap = read_snapshot(os.path.join(a, "snapshots", "step_000008.vtk"))
    print("snapshot t =", snap["t"], "fields", [k for k in snap if k not in ("t", "points")])
    cmp = filecmp.dircmp(a, b)
    print("identical reruns:", not cmp.diff_files and not cmp.subdirs["snapshots"].diff_files)
