"""Byte-stable text outputs: VTK legacy structured-grid snapshots, shell CSV and ledger CSVs.

Floats are written with ``%.17g`` (exact float64 roundtrip), lines end in LF.
"""

from __future__ import annotations

import os

import numpy as np

from .diagnostics import sym_eigenvalues
from .fluid import SlabGeometry
from .solvent_structure import wall_pressure


class OutputError(OSError):
    pass


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def _write(path: str, text: str):
    try:
        d = os.path.dirname(path)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# CSV ledgers


def write_csv(path: str, columns, rows):
    """Header row then one line per row dict (missing entries left empty)."""
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(fmt(r.get(c)) for c in columns))
    _write(path, "\n".join(lines) + "\n")


def read_csv(path: str):
    """(columns, rows) with numeric cells parsed to float, others kept as text."""
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        table = list(csv.reader(fh))
    cols, rows = table[0], []
    for line in table[1:]:
        row = {}
        for c, v in zip(cols, line):
            try:
                row[c] = float(v)
            except ValueError:
                row[c] = v
        rows.append(row)
    return cols, rows


def write_timeseries(ledgers: dict, out_dir: str) -> list[str]:
    """One CSV per ledger; ``ledgers`` maps name -> (columns, rows)."""
    paths = []
    for name, (cols, rows) in ledgers.items():
        p = os.path.join(out_dir, f"{name}.csv")
        write_csv(p, cols, rows)
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# snapshots


def node_pressure(grid, p: np.ndarray) -> np.ndarray:
    """Cell pressure averaged to nodes; wall rows use the extrapolated wall values."""
    P = np.asarray(p, dtype=float).reshape(grid.Nx, grid.Nz)
    out = np.empty((grid.Nx, grid.Nz + 1))
    avg = 0.5 * (P + np.roll(P, 1, axis=0))
    out[:, 1:-1] = 0.5 * (avg[:, :-1] + avg[:, 1:])
    out[:, -1] = wall_pressure(grid, p)
    Pb = P[:, ::-1]
    out[:, 0] = wall_pressure(grid, Pb.ravel())
    return out


def snapshot_fields(geo: SlabGeometry, u, p, T) -> dict:
    g = geo.grid
    fields = {"u": geo.node_velocity(u), "p": node_pressure(g, p)}
    T = np.asarray(T, dtype=float)
    fields["Txx"], fields["Txz"], fields["Tzz"] = T[..., 0, 0], T[..., 0, 1], T[..., 1, 1]
    fields["min_eig"] = sym_eigenvalues(T + np.eye(2))[..., 0]
    return fields


def write_snapshot(path: str, geo: SlabGeometry, fields: dict, t: float):
    """VTK legacy ASCII STRUCTURED_GRID on the mapped nodes (x fastest, then z)."""
    g = geo.grid
    nx, nz = g.Nx, g.Nz + 1
    X = np.broadcast_to(g.x_full[:, None], (nx, nz))
    pts = np.stack([X, geo.zeta_n, np.zeros((nx, nz))], axis=-1).transpose(1, 0, 2).reshape(-1, 3)
    out = ["# vtk DataFile Version 3.0", f"t={fmt(t)}", "ASCII", "DATASET STRUCTURED_GRID",
           f"DIMENSIONS {nx} {nz} 1", f"POINTS {nx * nz} double"]
    out.extend(" ".join(fmt(c) for c in row) for row in pts)
    out.append(f"POINT_DATA {nx * nz}")
    for name, F in fields.items():
        F = np.asarray(F, dtype=float)
        if F.ndim == 3:
            vec = np.concatenate([F, np.zeros(F.shape[:2] + (1,))], axis=-1)
            out.append(f"VECTORS {name} double")
            out.extend(" ".join(fmt(c) for c in row) for row in vec.transpose(1, 0, 2).reshape(-1, 3))
        else:
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(fmt(c) for c in F.T.ravel())
    _write(path, "\n".join(out) + "\n")


def read_snapshot(path: str) -> dict:
    """Inverse of ``write_snapshot``: t, points (nx, nz, 3) and nodal fields (nx, nz[, 2])."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    t = float(lines[1].split("=", 1)[1])
    nx, nz, _ = (int(v) for v in lines[4].split()[1:])
    n = nx * nz
    i = 6
    pts = np.array([[float(c) for c in lines[i + k].split()] for k in range(n)])
    i += n + 1
    res = {"t": t, "points": pts.reshape(nz, nx, 3).transpose(1, 0, 2)}
    while i < len(lines) and lines[i]:
        head = lines[i].split()
        if head[0] == "VECTORS":
            vals = np.array([[float(c) for c in lines[i + 1 + k].split()] for k in range(n)])
            res[head[1]] = vals.reshape(nz, nx, 3).transpose(1, 0, 2)[..., :2]
            i += 1 + n
        else:
            vals = np.array([float(lines[i + 2 + k]) for k in range(n)])
            res[head[1]] = vals.reshape(nz, nx).T
            i += 2 + n
    return res


def write_shell_csv(path: str, y, eta, v):
    rows = [{"y": a, "eta": b, "eta_t": c} for a, b, c in zip(y, eta, v)]
    write_csv(path, ("y", "eta", "eta_t"), rows)


def read_shell_csv(path: str):
    _, rows = read_csv(path)
    return tuple(np.array([r[c] for r in rows]) for c in ("y", "eta", "eta_t"))
