import filecmp
import os

import numpy as np
import pytest

from oldroyd_fsi.cli import main
from oldroyd_fsi.config import (DEFAULTS, ConfigError, parse_config, shell_profile, stream_preset,
                                stress_preset)
from oldroyd_fsi.diagnostics import ENERGY_COLUMNS
from oldroyd_fsi.fluid import MACGrid, SlabGeometry
from oldroyd_fsi.geometry import FlatSlab
from oldroyd_fsi.io import (OutputError, read_csv, read_shell_csv, read_snapshot, snapshot_fields, write_csv,
                            write_shell_csv, write_snapshot, write_timeseries)

SMALL = """\
[grid]
N = 16
M = 32
[time]
T = 0.25
dt = 0.03125
T_star = 0.125
[output]
snapshot_every = 4
"""


def write_cfg(tmp_path, text=SMALL, name="run.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


# ---------------------------------------------------------------------------
# configuration


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    for sec, keys in DEFAULTS.items():
        for key, (_, default) in keys.items():
            if sec != "data":
                assert cfg[f"{sec}.{key}"] == default
    assert str(cfg.data["g"]) == "fourier_mode(1.0, 0.05, 3.141592653589793)"
    assert cfg.data["T0"].is_zero and not cfg.data["g"].is_zero
    assert parse_config(cfg.echo()).echo() == cfg.echo()


def test_ell_must_be_below_L():
    with pytest.raises(ConfigError) as info:
        parse_config("[geometry]\nell = 0.6\nL = 0.5\n")
    assert (2, "ell must be < L") in info.value.errors
    assert "line 2: ell must be < L" in str(info.value)


def test_tube_must_not_reach_bottom():
    with pytest.raises(ConfigError, match="L must be in"):
        parse_config("[geometry]\nL = 1.2\n")


def test_all_errors_are_collected():
    text = "[grid]\nN = 48\nM = abc\n[solver]\ntol_fp = 0\nbogus = 1\nnot a pair\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    lines = [n for n, _ in info.value.errors]
    assert lines == [2, 3, 5, 6, 7]


def test_duplicate_key_last_wins_with_warning():
    cfg = parse_config("[grid]\nN = 16\nN = 32\n")
    assert cfg["grid.N"] == 32
    assert len(cfg.warnings) == 1 and "line 3" in cfg.warnings[0] and "grid.N" in cfg.warnings[0]


def test_unknown_key_strict_and_lenient():
    with pytest.raises(ConfigError):
        parse_config("[grid]\ncolour = red\n")
    cfg = parse_config("[grid]\ncolour = red\n", strict=False)
    assert "grid.colour" in cfg.warnings[0]


def test_overrides_and_registry():
    cfg = parse_config(SMALL, overrides=["grid.N=32", "data.eta0=fourier_mode(2, 0.01) + gaussian_bump(0.3, 1e-3)"])
    assert cfg["grid.N"] == 32
    assert [t.name for t in cfg.data["eta0"].terms] == ["fourier_mode", "gaussian_bump"]
    with pytest.raises(ConfigError, match="unknown preset"):
        parse_config("[data]\nT0 = vortex(1)\n")
    with pytest.raises(ConfigError, match="not available"):
        parse_config("[data]\neta0 = taylor_green\n")
    with pytest.raises(ConfigError, match="integer multiple"):
        parse_config("[time]\nT = 0.3\ndt = 0.25\n")


def test_preset_values():
    y = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    cfg = parse_config("[data]\neta0 = fourier_mode(2, 0.1)\nT0 = shear(2)\nu0 = shear(1.5)\n")
    assert np.allclose(shell_profile(cfg.data["eta0"], y), 0.1 * np.cos(2 * y), atol=1e-16)
    g = MACGrid(8, 4)
    X, Z = g.node_positions()
    T = stress_preset(cfg.data["T0"], X, Z)
    assert np.all(T == np.array([[2.0, 1.0], [1.0, 0.0]]))
    # stream function psi = -1.5 z^2 / 2 gives u_x = 1.5 z
    assert np.allclose(stream_preset(cfg.data["u0"], X, Z), -0.75 * Z**2)


# ---------------------------------------------------------------------------
# files


def moving_geo(N=8):
    geom = FlatSlab(M=2 * N)
    g = MACGrid(N, N)
    return SlabGeometry(g, geom, 0.03 * np.cos(geom.shell_grid()[..., 0]))


def test_snapshot_roundtrip_bitwise(tmp_path, rng):
    geo = moving_geo()
    g = geo.grid
    u = rng.standard_normal(g.nu)
    p = rng.standard_normal(g.nc)
    A = rng.standard_normal((g.Nx, g.Nz + 1, 2, 2))
    fields = snapshot_fields(geo, u, p, 0.1 * (A + np.swapaxes(A, -1, -2)))
    path = str(tmp_path / "s.vtk")
    write_snapshot(path, geo, fields, 1 / 3)
    back = read_snapshot(path)
    assert back["t"] == 1 / 3
    for k, F in fields.items():
        assert np.array_equal(back[k], F), k
    assert np.array_equal(back["points"][..., 1], geo.zeta_n)


def test_zero_snapshot(tmp_path):
    geo = moving_geo()
    g = geo.grid
    path = str(tmp_path / "z.vtk")
    write_snapshot(path, geo, snapshot_fields(geo, np.zeros(g.nu), np.zeros(g.nc),
                                              np.zeros((g.Nx, g.Nz + 1, 2, 2))), 0.0)
    text = open(path, encoding="utf-8").read()
    assert f"DIMENSIONS {g.Nx} {g.Nz + 1} 1" in text
    back = read_snapshot(path)
    for k in ("u", "p", "Txx", "Txz", "Tzz"):
        assert np.all(back[k] == 0.0)
    assert np.all(back["min_eig"] == 1.0)
    assert b"\r" not in open(path, "rb").read()


def test_shell_csv_roundtrip(tmp_path, rng):
    y = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    eta, v = rng.standard_normal(16) * 1e-3, rng.standard_normal(16) / 7
    path = str(tmp_path / "shell.csv")
    write_shell_csv(path, y, eta, v)
    a, b, c = read_shell_csv(path)
    assert np.array_equal(a, y) and np.array_equal(b, eta) and np.array_equal(c, v)


def test_empty_ledger_is_header_only(tmp_path):
    paths = write_timeseries({"energy": (ENERGY_COLUMNS, [])}, str(tmp_path))
    assert open(paths[0], "rb").read() == (",".join(ENERGY_COLUMNS) + "\n").encode()


def test_io_error_has_path_context(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError, match="file"):
        write_csv(str(blocker / "sub" / "a.csv"), ("a",), [])


# ---------------------------------------------------------------------------
# command line


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_cfg(base)
    outs = [str(base / "a"), str(base / "b")]
    codes = [main(["run", "--config", cfg, "--out", o]) for o in outs]
    return codes, outs


def test_run_exit_code_and_files(small_run):
    codes, (out, _) = small_run
    assert codes == [0, 0]
    for name in ("energy", "fixed_point", "windows", "norms", "volume", "stop", "smallness"):
        assert os.path.exists(os.path.join(out, f"{name}.csv"))
    snaps = sorted(os.listdir(os.path.join(out, "snapshots")))
    assert snaps == ["step_000000.vtk", "step_000000_shell.csv", "step_000004.vtk", "step_000004_shell.csv",
                     "step_000008.vtk", "step_000008_shell.csv"]
    log = open(os.path.join(out, "run.log"), encoding="utf-8").read()
    assert "stop_reason = completed" in log and "[grid]\nN = 16" in log


def test_energy_schema_and_fp_ordering(small_run):
    out = small_run[1][0]
    cols, rows = read_csv(os.path.join(out, "energy.csv"))
    assert tuple(cols) == ENERGY_COLUMNS and len(rows) == 8
    cols, rows = read_csv(os.path.join(out, "fixed_point.csv"))
    assert cols[:4] == ["window", "k", "dY", "rho"]
    keys = [(r["window"], r["k"]) for r in rows]
    assert all(a < b for a, b in zip(keys, keys[1:]))
    _, stop = read_csv(os.path.join(out, "stop.csv"))
    assert stop[0]["stop_reason"] == "completed"


def test_runs_are_byte_identical(small_run):
    a, b = small_run[1]
    cmp = filecmp.dircmp(a, b)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    assert not cmp.subdirs["snapshots"].diff_files
    for name in os.listdir(a):
        if name.endswith(".csv"):
            assert open(os.path.join(a, name), "rb").read() == open(os.path.join(b, name), "rb").read()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = write_cfg(tmp_path, "[geometry]\nell = 0.6\n", "bad.ini")
    assert main(["run", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "ell must be < L" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--override", "geometry.dim=3", "--out", str(tmp_path / "o")]) == 2


def test_degeneracy_run_exits_1(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "[geometry]\nell = 0.001\n[data]\ng = fourier_mode(1, 5)\n")
    out = str(tmp_path / "deg")
    assert main(["run", "--config", cfg, "--out", out]) == 1
    _, stop = read_csv(os.path.join(out, "stop.csv"))
    assert stop[0]["stop_reason"] == "degeneracy" and stop[0]["node"] != ""


def test_verify_subcommand(capsys):
    assert main(["verify", "--seed", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8 and all(ln.startswith("PASS") for ln in lines)


def test_bench_subcommand(capsys):
    assert main(["bench", "--N", "8"]) == 0
    assert "coupled step 8x8" in capsys.readouterr().out
