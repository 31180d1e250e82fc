import numpy as np
import pytest

from oldroyd_fsi import spectral
from oldroyd_fsi.geometry import (
    Annulus2D, Cutoff, DegeneracyError, FlatSlab, HanzawaMap, NoConvergenceError, ShellField,
    boundary_point, check_nondegeneracy, moving_normal_and_area,
)


def random_eta(rng, geom, amp):
    """Smooth random displacement rescaled to sup-norm ``amp``."""
    shape = geom.shell_shape
    y = geom.shell_grid()
    e = np.zeros(shape)
    for _ in range(4):
        k = rng.integers(0, 4, size=len(shape))
        ph = rng.uniform(0, 2 * np.pi)
        e += rng.standard_normal() * np.cos(np.tensordot(y, k, axes=([-1], [0])) + ph)
    return amp * e / np.max(np.abs(e))


def test_cutoff_properties():
    c = Cutoff(0.5, 0.05)
    assert c(0.0) == 1.0 and c(-0.125) == 1.0
    s = np.linspace(-1.0, -0.45, 50)
    assert np.all(c(s) == 0.0)
    # C^1 and C^2 continuity at the transition ends
    for s0 in (c.lower, c.upper):
        assert abs(c.d1(s0)) < 1e-14 and abs(c.d2(s0)) < 1e-12
    ss = np.linspace(c.lower, c.upper, 20001)
    assert np.isclose(np.max(c.d1(ss)), c.max_slope, rtol=1e-6)
    fd = (c(ss[2:]) - c(ss[:-2])) / (ss[2] - ss[0])
    assert np.allclose(fd, c.d1(ss[1:-1]), atol=1e-6)


def test_normals_unit_and_chart_injective():
    for geom in (FlatSlab(2, 32), FlatSlab(3, 8), Annulus2D(32)):
        y = geom.shell_grid()
        n = geom.normal(y)
        assert np.allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-15)
        pts = geom.chart(y).reshape(-1, geom.dim)
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        assert dist.min() > 1e-8


def test_boundary_point_examples():
    g = FlatSlab(2, 32)
    assert np.allclose(boundary_point(g, np.zeros(32), np.pi), [np.pi, 1.0])
    y = spectral.grid(32)
    assert np.allclose(boundary_point(g, 0.1 * np.cos(y), 0.0), [0.0, 1.1], atol=1e-15)
    a = Annulus2D(32)
    p = boundary_point(a, np.full(32, 0.2), 0.0)
    # polar oracle: radius 1.2 at angle 0
    assert np.allclose(p, [1.2 * np.cos(0.0), 1.2 * np.sin(0.0)], atol=1e-15)


def test_forward_examples():
    g = FlatSlab(2, 32)
    hm = HanzawaMap(g, np.full(32, 0.1))
    assert np.allclose(hm.forward(np.array([0.0, 1.0])), [0.0, 1.1], atol=1e-15)
    x = np.array([1.3, 1.0 - g.L / 2])
    expected = 1.0 - g.L / 2 + 0.1 * g.cutoff(-g.L / 2)
    assert np.isclose(hm.forward(x)[1], expected, atol=1e-15)
    far = np.array([[0.2, 1.0 - g.L], [3.0, 0.1]])
    assert np.array_equal(hm.forward(far), far)
    assert np.array_equal(hm.inverse(far), far)


def test_inverse_examples():
    g = FlatSlab(2, 32)
    hm = HanzawaMap(g, np.full(32, 0.1))
    assert np.allclose(hm.inverse(np.array([0.0, 1.1])), [0.0, 1.0], atol=1e-14)
    hm0 = HanzawaMap(g, np.zeros(32))
    x = np.array([[0.5, 0.9], [2.0, 1.05]])
    assert np.array_equal(hm0.inverse(x), x)


def test_roundtrip_random(rng):
    for geom in (FlatSlab(2, 32), Annulus2D(32), FlatSlab(3, 8)):
        for _ in range(10):
            eta = random_eta(rng, geom, rng.uniform(0, geom.ell))
            hm = HanzawaMap(geom, eta)
            if isinstance(geom, FlatSlab):
                x = np.concatenate([rng.uniform(0, 2 * np.pi, (1000, geom.dim - 1)),
                                    rng.uniform(0, 1 + geom.ell, (1000, 1))], axis=1)
            else:
                r = rng.uniform(geom.r_in, 1 + geom.ell, 1000)
                t = rng.uniform(0, 2 * np.pi, 1000)
                x = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
            assert np.max(np.abs(hm.inverse(hm.forward(x)) - x)) <= 1e-10
            assert np.max(np.abs(hm.forward(hm.inverse(x)) - x)) <= 1e-10


def test_boundary_restriction(rng):
    for geom in (FlatSlab(2, 32), Annulus2D(32), FlatSlab(3, 8)):
        eta = random_eta(rng, geom, 0.8 * geom.ell)
        hm = HanzawaMap(geom, eta)
        y = geom.shell_grid()
        on = geom.chart(y)
        assert np.max(np.abs(hm.forward(on) - boundary_point(geom, eta, y))) <= 1e-14


def test_jacobian_against_finite_differences(rng):
    for geom in (FlatSlab(2, 32), Annulus2D(32), FlatSlab(3, 8)):
        hm = HanzawaMap(geom, random_eta(rng, geom, 0.8 * geom.ell))
        if isinstance(geom, FlatSlab):
            x = np.concatenate([rng.uniform(0, 2 * np.pi, (200, geom.dim - 1)),
                                rng.uniform(0.4, 1.0, (200, 1))], axis=1)
        else:
            r, t = rng.uniform(0.6, 1.0, 200), rng.uniform(0, 2 * np.pi, 200)
            x = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
        J = hm.jacobian(x)
        h = 1e-5
        fd = np.empty_like(J)
        for j in range(geom.dim):
            e = np.zeros(geom.dim)
            e[j] = h
            fd[..., j] = (hm.forward(x + e) - hm.forward(x - e)) / (2 * h)
        rel = np.max(np.abs(fd - J)) / np.max(np.abs(J))
        assert rel <= 1e-6


def test_moving_normal_and_area_examples():
    g = FlatSlab(2, 64)
    n, a = moving_normal_and_area(g, np.zeros(64))
    assert np.allclose(n, [0, 1]) and np.allclose(a, 1.0)
    y = spectral.grid(64)
    n, a = moving_normal_and_area(g, 0.1 * np.cos(y))
    assert np.allclose(a, np.sqrt(1 + 0.01 * np.sin(y) ** 2), atol=1e-13)
    # finite-difference cross-check of the tangent length
    h = 1e-6
    tang = (boundary_point(g, 0.1 * np.cos(y), y + h) - boundary_point(g, 0.1 * np.cos(y), y - h)) / (2 * h)
    assert np.allclose(np.linalg.norm(tang, axis=-1), a, atol=1e-8)
    g3 = FlatSlab(3, 8)
    n, a = moving_normal_and_area(g3, np.full((8, 8), 0.05))
    assert np.allclose(n, [0, 0, 1]) and np.allclose(a, 1.0)


def test_annulus_area_against_polar_oracle():
    a = Annulus2D(64)
    th = spectral.grid(64)
    eta = 0.05 * np.sin(3 * th)
    n, area = moving_normal_and_area(a, eta)
    etap = 0.15 * np.cos(3 * th)
    assert np.allclose(area, np.sqrt(etap**2 + (1 + eta) ** 2), atol=1e-13)
    assert np.all(np.sum(n * a.normal(th[:, None]), axis=-1) > 0)


def test_orientation_positive(rng):
    for geom in (FlatSlab(2, 32), FlatSlab(3, 8), Annulus2D(32)):
        eta = random_eta(rng, geom, geom.ell)
        n, _ = moving_normal_and_area(geom, eta, check=False)
        assert np.all(np.sum(n * geom.normal(geom.shell_grid()), axis=-1) > 0)


def test_check_nondegeneracy():
    g = FlatSlab(2, 64)
    rep = check_nondegeneracy(g, np.zeros(64))
    assert rep.ok and rep.min_area == 1.0
    rep = check_nondegeneracy(g, np.full(64, g.ell + 0.01))
    assert not rep.ok and "displacement exceeds ell" in rep.reasons
    # 0.9 L cos y with ell = 0.95 L: verdict fixed by kappa0 and a grid scan of the area
    y = spectral.grid(64)
    for kappa0 in (0.3, 1.05):
        g = FlatSlab(2, 64, L=0.5, ell=0.95 * 0.5, kappa0=kappa0)
        eta = 0.9 * 0.5 * np.cos(y)
        rep = check_nondegeneracy(g, eta)
        scan = np.sqrt(1 + (0.45 * np.sin(y)) ** 2)
        assert np.isclose(rep.min_area, scan.min(), atol=1e-13)
        assert rep.ok == (scan.min() >= kappa0)


def test_map_rejects_large_displacement():
    g = FlatSlab(2, 32)
    with pytest.raises(DegeneracyError):
        HanzawaMap(g, np.full(32, g.ell * 1.01))


def test_inverse_no_convergence_budget():
    g = FlatSlab(2, 32)
    hm = HanzawaMap(g, np.full(32, 0.1), newton_maxit=1)
    with pytest.raises(NoConvergenceError):
        hm.inverse(np.array([[0.3, 0.8]]))


def test_reflected_map_discrepancy_reported():
    g = FlatSlab(2, 32)
    hm = HanzawaMap(g, np.full(32, 0.1))
    x = np.stack([np.zeros(50), np.linspace(0, 1, 50)], axis=1)
    disc = hm.inverse_discrepancy(x)
    assert 1e-4 < disc < 0.1
    # exact on the boundary and outside the tube, where the cutoff is constant
    assert HanzawaMap(g, np.full(32, 0.1)).inverse_discrepancy(np.array([[0.0, 1.0], [0.0, 0.2]])) < 1e-15


def test_slab_metrics_match_jacobian(rng):
    g = FlatSlab(2, 32)
    hm = HanzawaMap(g, random_eta(rng, g, 0.1))
    X, Z = rng.uniform(0, 2 * np.pi, 30), rng.uniform(0, 1, 30)
    zeta, zx, zz = hm.slab_metrics(X, Z)
    J = hm.jacobian(np.stack([X, Z], axis=1))
    assert np.allclose(zx, J[:, 1, 0], atol=1e-14) and np.allclose(zz, J[:, 1, 1], atol=1e-14)
    assert np.allclose(zeta, hm.forward(np.stack([X, Z], axis=1))[:, 1], atol=1e-14)


def test_shell_field_nd_grad():
    y = spectral.grid(8)
    v = np.cos(y)[:, None] * np.sin(2 * y)[None, :]
    f = ShellField(v)
    pts = np.array([[0.3, 1.1], [2.0, 5.0]])
    gr = f.grad(pts)
    assert np.allclose(gr[:, 0], -np.sin(pts[:, 0]) * np.sin(2 * pts[:, 1]))
    assert np.allclose(gr[:, 1], 2 * np.cos(pts[:, 0]) * np.cos(2 * pts[:, 1]))
