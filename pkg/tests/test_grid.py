import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imcf.errors import SingularMetric
from imcf.grid import (
    PeriodicGrid,
    covariant_hessian,
    fd_gradient,
    fd_hessian,
    integrate,
    laplace_beltrami,
    metric_christoffels,
    spd_inverse,
)

from conftest import TWO_PI, line


def test_grid_rejects_small_axes():
    with pytest.raises(ValueError):
        PeriodicGrid((7,), (1.0,))


def test_grid_rejects_mismatched_periods():
    with pytest.raises(ValueError):
        PeriodicGrid((8, 8), (1.0,))


def test_grid_basic_properties():
    g = PeriodicGrid((8, 16), (2.0, 4.0))
    assert g.d == 2
    assert g.n_points == 128
    assert g.spacing == (0.25, 0.25)
    assert g.cell_volume == pytest.approx(0.0625)
    assert g.points().shape == (8, 16, 2)


def test_point_wraps_modulo_shape():
    g = PeriodicGrid((8,), (TWO_PI,))
    np.testing.assert_allclose(g.point((9,)), g.point((1,)))
    np.testing.assert_allclose(g.point((-1,)), g.point((7,)))


def test_refine_doubles_points():
    assert line(64).refine().shape == (128,)


@given(st.integers(1, 3), st.floats(-5, 5))
def test_operators_annihilate_constants(d, c):
    g = PeriodicGrid((8,) * d, (1.0,) * d)
    f = np.full(g.shape, c)
    for order in (2, 4):
        assert np.max(np.abs(fd_gradient(f, g, order))) <= 1e-12 * (1 + abs(c))
        assert np.max(np.abs(fd_hessian(f, g, order))) <= 1e-12 * (1 + abs(c)) * 100


def test_gradient_of_sine_within_taylor_bound(line64):
    x = line64.points()[..., 0]
    err = np.max(np.abs(fd_gradient(np.sin(x), line64)[..., 0] - np.cos(x)))
    # leading truncation term h^2/6 * max|f'''|
    assert err <= (TWO_PI / 64) ** 2 / 6 * 1.0


@pytest.mark.parametrize("order", [2, 4])
def test_gradient_convergence_order(order):
    errs = []
    for n in (64, 128):
        g = line(n)
        x = g.points()[..., 0]
        errs.append(np.max(np.abs(fd_gradient(np.sin(x), g, order)[..., 0] - np.cos(x))))
    ratio = errs[0] / errs[1]
    assert ratio == pytest.approx(2**order, rel=0.10)


@pytest.mark.parametrize("order", [2, 4])
def test_hessian_of_sine(order):
    errs = []
    for n in (64, 128):
        g = line(n)
        x = g.points()[..., 0]
        errs.append(np.max(np.abs(fd_hessian(np.sin(x), g, order)[..., 0, 0] + np.sin(x))))
    assert errs[0] <= 10 * (TWO_PI / 64) ** order
    assert np.log2(errs[0] / errs[1]) == pytest.approx(order, rel=0.15)


def test_mixed_hessian_symmetric_and_accurate():
    g = PeriodicGrid((32, 48), (TWO_PI, TWO_PI))
    X, Y = np.moveaxis(g.points(), -1, 0)
    f = np.sin(X) * np.cos(2 * Y)
    hess = fd_hessian(f, g)
    assert np.array_equal(hess[..., 0, 1], hess[..., 1, 0])
    exact = -2 * np.cos(X) * np.sin(2 * Y)
    assert np.max(np.abs(hess[..., 0, 1] - exact)) < 0.05


def test_gradient_shape_for_tensor_fields():
    g = PeriodicGrid((8, 8), (1.0, 1.0))
    f = np.zeros(g.shape + (2, 2))
    assert fd_gradient(f, g).shape == g.shape + (2, 2, 2)


def test_invalid_order():
    with pytest.raises(ValueError):
        fd_gradient(np.zeros(8), line(8), order=3)


def test_christoffels_vanish_for_constant_metric():
    g = PeriodicGrid((8, 8), (1.0, 1.0))
    metric = np.broadcast_to(np.diag([2.0, 3.0]), g.shape + (2, 2)).copy()
    assert np.max(np.abs(metric_christoffels(metric, g))) == 0.0


def test_christoffels_vanish_for_scaled_identity():
    # e^{2 psi} delta with psi constant along the slice
    g = PeriodicGrid((16, 16), (TWO_PI, TWO_PI))
    metric = np.exp(-2.0 * 0.7) * np.broadcast_to(np.eye(2), g.shape + (2, 2))
    assert np.max(np.abs(metric_christoffels(metric, g))) < 1e-14


def test_christoffel_of_conformal_line_metric():
    errs = []
    for n in (64, 128):
        g = line(n)
        x = g.points()[..., 0]
        metric = ((1 + 0.1 * np.sin(x)) ** 2)[..., None, None]
        gam = metric_christoffels(metric, g)[..., 0, 0, 0]
        exact = 0.1 * np.cos(x) / (1 + 0.1 * np.sin(x))
        errs.append(np.max(np.abs(gam - exact)))
    assert errs[0] < 5 * (TWO_PI / 64) ** 2
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.15)


def test_christoffels_symmetric_in_lower_indices():
    g = PeriodicGrid((16, 16), (TWO_PI, TWO_PI))
    X, Y = np.moveaxis(g.points(), -1, 0)
    m = np.empty(g.shape + (2, 2))
    m[..., 0, 0] = 2 + np.sin(X)
    m[..., 1, 1] = 2 + np.cos(Y)
    m[..., 0, 1] = m[..., 1, 0] = 0.3 * np.sin(X + Y)
    gam = metric_christoffels(m, g)
    assert np.array_equal(gam, np.swapaxes(gam, -1, -2))


def test_christoffels_match_analytic_two_dimensional_metric():
    # g = diag(1, a(x)^2): Gamma^1_01 = a'/a, Gamma^0_11 = -a a'
    errs = []
    for n in (32, 64):
        g = PeriodicGrid((n, n), (TWO_PI, TWO_PI))
        X = g.points()[..., 0]
        a = 1 + 0.2 * np.sin(X)
        da = 0.2 * np.cos(X)
        m = np.zeros(g.shape + (2, 2))
        m[..., 0, 0] = 1.0
        m[..., 1, 1] = a * a
        gam = metric_christoffels(m, g)
        errs.append(max(np.max(np.abs(gam[..., 1, 0, 1] - da / a)),
                        np.max(np.abs(gam[..., 0, 1, 1] + a * da))))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.2)


def test_covariant_hessian_flat_equals_plain_hessian(line64):
    x = line64.points()[..., 0]
    u = np.sin(x)
    gam = np.zeros(line64.shape + (1, 1, 1))
    np.testing.assert_array_equal(covariant_hessian(u, line64, gam), fd_hessian(u, line64))


def test_covariant_hessian_of_constant_is_zero(line64):
    gam = np.random.default_rng(0).normal(size=line64.shape + (1, 1, 1))
    assert np.max(np.abs(covariant_hessian(np.full(64, 3.0), line64, gam))) == 0.0


def test_covariant_hessian_conformal_line():
    errs = []
    for n in (64, 128):
        g = line(n)
        x = g.points()[..., 0]
        metric = ((1 + 0.1 * np.sin(x)) ** 2)[..., None, None]
        gam = metric_christoffels(metric, g)
        u = np.sin(x)
        G = 0.1 * np.cos(x) / (1 + 0.1 * np.sin(x))
        exact = -np.sin(x) - G * np.cos(x)
        errs.append(np.max(np.abs(covariant_hessian(u, g, gam)[..., 0, 0] - exact)))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.15)


def test_laplace_beltrami_flat_torus():
    g = PeriodicGrid((64, 64), (TWO_PI, TWO_PI))
    X, Y = np.moveaxis(g.points(), -1, 0)
    f = np.sin(X) * np.sin(Y)
    ginv = np.broadcast_to(np.eye(2), g.shape + (2, 2))
    lap = laplace_beltrami(f, g, ginv, np.zeros(g.shape + (2, 2, 2)))
    assert np.max(np.abs(lap + 2 * f)) < 2e-3


def test_integrate_constant_and_band_limited():
    for n in (8, 17, 64):
        assert integrate(np.ones(n), line(n)) == pytest.approx(TWO_PI, rel=1e-14)
    g = line(64)
    x = g.points()[..., 0]
    assert abs(integrate(np.sin(x) ** 2, g) - np.pi) <= 1e-12
    assert integrate(np.sin(x) ** 2, g, weight=np.zeros(64)) == 0.0


def test_spd_inverse_and_errors():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(20, 3, 3))
    m = a @ np.swapaxes(a, -1, -2) + 0.5 * np.eye(3)
    inv, w = spd_inverse(m)
    np.testing.assert_allclose(inv @ m, np.broadcast_to(np.eye(3), m.shape), atol=1e-10)
    assert np.all(w > 0)
    with pytest.raises(SingularMetric):
        spd_inverse(np.diag([1.0, -1.0])[None])
    with pytest.raises(SingularMetric):
        spd_inverse(np.diag([1.0, 1e-14])[None])
    with pytest.raises(SingularMetric):
        spd_inverse(np.zeros((4, 1, 1)))
