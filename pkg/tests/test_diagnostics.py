import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oldroyd_fsi import spectral
from oldroyd_fsi.diagnostics import (
    ENERGY_COLUMNS, damped_oscillator_energy, energy_report, fluid_sobolev_norm, min_conformation_eigenvalue,
    norm_suite, residual_scaling, shell_norm, spd_monitor, sym_eigenvalues, time_derivative, volume_ledger,
)
from oldroyd_fsi.fluid import MACGrid, SlabGeometry
from oldroyd_fsi.geometry import FlatSlab
from oldroyd_fsi.solvent_structure import SolventStructureSolver


def test_spd_zero_stress():
    rep = spd_monitor(np.zeros((4, 5, 2, 2)))
    assert rep.min_eigenvalue == 1.0 and rep.ok


def test_spd_diagonal():
    T = np.zeros((3, 3, 2, 2))
    T[1, 2] = np.diag([-0.5, 0.2])
    rep = spd_monitor(T)
    assert abs(rep.min_eigenvalue - 0.5) < 1e-15 and rep.location == (1, 2)


def test_spd_steady_shear_state():
    val, _ = min_conformation_eigenvalue(np.array([[0.5, 0.5], [0.5, 0.0]]))
    assert abs(val - (2.5 - np.sqrt(1.25)) / 2) < 1e-15
    assert abs(val - 0.691) < 1e-3


def test_spd_flags_indefinite():
    rep = spd_monitor(np.diag([-1.5, 0.0])[None])
    assert not rep.ok and rep.min_eigenvalue == pytest.approx(-0.5)


@pytest.mark.parametrize("d", [2, 3])
def test_closed_form_eigenvalues_match_lapack(d, rng):
    A = rng.standard_normal((500, d, d))
    S = A + np.swapaxes(A, -1, -2)
    assert np.max(np.abs(sym_eigenvalues(S) - np.linalg.eigvalsh(S))) < 1e-12


def test_repeated_eigenvalue_3d():
    assert np.allclose(sym_eigenvalues(2.0 * np.eye(3)), 2.0, atol=1e-15)


def test_laplacian_norm_of_cosine():
    y = spectral.grid(32)
    assert abs(spectral.l2_norm_periodic(spectral.laplacian(np.cos(y))) - np.sqrt(np.pi)) < 1e-13
    assert abs(shell_norm(np.cos(y), 2, seminorm=True) - np.sqrt(np.pi)) < 1e-13


def test_constant_field_on_unit_domain():
    Nx, Nz, c = 16, 8, -1.7
    F = np.full((Nx, Nz + 1), c)
    assert abs(fluid_sobolev_norm(F, 0, 1 / Nx, 1 / Nz) - abs(c)) < 1e-14
    for k in (1, 2, 3):
        assert fluid_sobolev_norm(F, k, 1 / Nx, 1 / Nz, seminorm=True) <= 1e-13


def smooth_norm(N, k):
    g = MACGrid(N, N)
    geo = SlabGeometry(g, FlatSlab(M=2 * N), 0.05 * np.cos(spectral.grid(2 * N)))
    X, Zeta = geo.node_points()
    F = np.sin(X) * np.cos(Zeta) + 0.5 * Zeta**2
    return fluid_sobolev_norm(F, k, g.hx, g.hz, geo.J_n, geo.zx_n)


@pytest.mark.parametrize("k", [0, 1])
def test_norm_converges_under_refinement(k):
    vals = [smooth_norm(N, k) for N in (32, 64, 128, 256)]
    d = np.abs(np.diff(vals))
    assert np.all(np.log2(d[:-1] / d[1:]) >= 2.0 - 0.1), vals


@given(st.integers(0, 2), st.floats(0.1, 3.0))
@settings(max_examples=20, deadline=None)
def test_norms_are_nested(k, a):
    g = MACGrid(16, 8)
    X, Z = g.node_positions()
    F = a * np.sin(X) * Z + np.cos(2 * X)
    assert fluid_sobolev_norm(F, k, g.hx, g.hz) <= fluid_sobolev_norm(F, k + 1, g.hx, g.hz)
    y = spectral.grid(32)
    f = a * np.cos(y) + np.sin(3 * y)
    assert shell_norm(f, k) <= shell_norm(f, k + 1)


def test_time_derivative_second_order():
    t = np.linspace(0, 1, 11)
    snaps = [np.full(3, s**2) for s in t]
    dT = time_derivative(snaps, t)
    assert np.allclose(dT[5], 2 * t[5], atol=1e-13)
    assert time_derivative([np.ones(2)], [0.0])[0].tolist() == [0.0, 0.0]


def test_zero_trajectory_ledger():
    s = SolventStructureSolver(FlatSlab(M=16), 8, 8, 0.1)
    st_, recs = s.initial_state(), []
    for _ in range(3):
        st_, r = s.step(st_)
        recs.append(r)
    rows = energy_report(recs)
    assert len(rows) == 3 and tuple(rows[0]) == ENERGY_COLUMNS
    assert all(row[c] == 0.0 for row in rows for c in ENERGY_COLUMNS[1:])
    assert all(r["mismatch"] == 0.0 for r in volume_ledger(recs))
    assert energy_report([]) == []


def test_shell_mode_energy_matches_oscillator():
    k, a0, q = 2, 0.05, 0.3
    geom = FlatSlab(M=32)
    s = SolventStructureSolver(geom, 8, 8, 1e-3, fluid=False)
    y = geom.shell_grid()[..., 0]
    st_ = s.initial_state(eta0=a0 * np.cos(k * y))
    for _ in range(1000):
        st_, rec = s.step(st_, g=lambda t, y: q * np.cos(k * y))
    kin, el = damped_oscillator_energy(k, a0, 0.0, q, 1.0)
    row = energy_report([rec])[0]
    assert abs(row["E_shell_kin"] - kin) <= 1e-6
    assert abs(row["E_shell_el"] - el) <= 1e-6


def test_residual_scaling():
    assert residual_scaling([8e-3, -8e-3], [1e-3, 1e-3]) == pytest.approx(8.0)
    assert residual_scaling([1.0], [0.0]) == np.inf


def test_norm_suite_labels():
    g = MACGrid(8, 8)
    geo = SlabGeometry(g, FlatSlab(M=16), np.zeros(16))
    y = spectral.grid(16)
    row = norm_suite(0.25, np.cos(y), np.zeros(16), np.zeros((8, 9, 2)), np.zeros(g.nc),
                     np.zeros((8, 9, 2, 2)), geo, np.zeros((8, 9, 2, 2)))
    assert row["t"] == 0.25
    assert {"eta_W6", "eta_t_W4", "u_W2", "p_L2", "T_W3", "T_t_W2"} <= set(row)
    assert row["eta_W0"] == pytest.approx(np.sqrt(np.pi))
    assert row["T_W3"] == 0.0
