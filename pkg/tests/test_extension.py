import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oldroyd_fsi.extension import (
    correction, extension_3d_fluxes, extension_bound_ratio, solenoidal_extension, stream_function,
    trace_error, velocity_from_stream,
)
from oldroyd_fsi.fluid import MACGrid, SlabGeometry
from oldroyd_fsi.geometry import FlatSlab


def setup(N, M=None, eta_fn=None):
    M = M or 2 * N
    geom = FlatSlab(M=M)
    y = geom.shell_grid()[..., 0]
    eta = np.zeros(M) if eta_fn is None else eta_fn(y)
    g = MACGrid(N, N)
    return geom, g, SlabGeometry(g, geom, eta), y


def test_correction_examples():
    geom, g, geo, y = setup(16)
    assert correction(geom, np.zeros_like(y), np.zeros_like(y)) == 0.0
    assert abs(correction(geom, np.zeros_like(y), np.cos(y))) < 1e-15
    assert np.isclose(correction(geom, np.zeros_like(y), np.ones_like(y)), 1.0, atol=1e-15)


def test_zero_datum_gives_zero_field():
    geom, g, geo, y = setup(16, eta_fn=lambda y: 0.05 * np.cos(y))
    assert np.all(solenoidal_extension(g, geo, np.zeros_like(y)) == 0.0)


def test_flat_mean_free_datum_has_zero_correction():
    geom, g, geo, y = setup(32)
    xi = np.cos(y) + 0.3 * np.sin(3 * y)
    assert abs(correction(geom, geo.eta, xi)) <= 1e-14


@pytest.mark.parametrize("amp", [0.0, 0.05, 0.12])
def test_divergence_free(amp):
    geom, g, geo, y = setup(32, eta_fn=lambda y: amp * np.cos(y) + 0.3 * amp * np.sin(2 * y))
    u = solenoidal_extension(g, geo, np.sin(2 * y) + 0.4 * np.cos(y) + 0.2)
    assert np.max(np.abs(geo.divergence(u))) <= 1e-12


def test_support_inside_tube():
    geom, g, geo, y = setup(64, eta_fn=lambda y: 0.08 * np.cos(y))
    u = solenoidal_extension(g, geo, np.cos(y) + np.sin(3 * y))
    ux, uz = g.split(u)
    outside_x = g.z_half < 1.0 - geom.ell
    outside_z = g.z_full < 1.0 - geom.ell
    assert np.all(ux[:, outside_x] == 0.0)
    assert np.all(uz[:, outside_z] == 0.0)
    assert np.max(np.abs(uz[:, -1])) > 0.5


def test_linearity():
    geom, g, geo, y = setup(32, eta_fn=lambda y: 0.06 * np.sin(y))
    a, b = np.cos(y), np.sin(2 * y) + 0.5
    lhs = solenoidal_extension(g, geo, 2.0 * a - 3.0 * b)
    rhs = 2.0 * solenoidal_extension(g, geo, a) - 3.0 * solenoidal_extension(g, geo, b)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


@given(st.floats(-0.1, 0.1), st.floats(-2.0, 2.0), st.integers(1, 4))
@settings(max_examples=15, deadline=None)
def test_divergence_free_property(amp, c, k):
    geom, g, geo, y = setup(16, eta_fn=lambda y: amp * np.cos(y))
    u = solenoidal_extension(g, geo, c * np.cos(k * y) + 1.0)
    assert np.max(np.abs(geo.divergence(u))) <= 1e-12


def test_trace_order():
    errs = []
    for N in (16, 32, 64):
        geom, g, geo, y = setup(N, eta_fn=lambda y: 0.05 * np.cos(y))
        xi = np.cos(y) + 0.5 * np.sin(2 * y)
        errs.append(trace_error(g, geo, solenoidal_extension(g, geo, xi), xi))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9), orders


def test_stream_function_oracle():
    # flat shell, xi = cos y: the boundary stream function is sin y; running sums of
    # exact cell averages reproduce it at the nodes up to rounding
    for N in (16, 32, 64):
        geom, g, geo, y = setup(N)
        psi, face, K = stream_function(g, geo, np.cos(y))
        assert np.max(np.abs(psi[:, -1] - np.sin(g.x_full))) <= 1e-13


def test_velocity_from_stream_is_solenoidal():
    geom, g, geo, y = setup(32, eta_fn=lambda y: 0.05 * np.cos(2 * y))
    X, Z = g.node_positions()
    u = velocity_from_stream(g, geo, np.sin(X) * np.sin(np.pi * Z))
    assert np.max(np.abs(geo.divergence(u))) <= 1e-12


def test_norm_ratio_stable_under_refinement():
    ratios = []
    for N in (64, 128, 256):
        geom, g, geo, y = setup(N, eta_fn=lambda y: 0.05 * np.cos(y))
        ratios.append(extension_bound_ratio(g, geo, np.cos(y) + 0.3 * np.sin(2 * y)))
    assert np.all(np.isfinite(ratios))
    for a, b in zip(ratios, ratios[1:]):
        assert max(a / b, b / a) <= 1.1


def test_three_dimensional_smoke():
    geom = FlatSlab(dim=3, M=16)
    y = geom.shell_grid()
    xi = np.cos(y[..., 0]) * np.sin(y[..., 1]) + 0.2
    out = extension_3d_fluxes(geom, xi, 16)
    div = out["div"]
    assert np.max(np.abs(div)) <= 1e-12
