import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_legendre

from opext.sph import ShField, degrees, legendre_series, lm_index, n_coeffs, real_sh_basis


def test_index_layout():
    assert n_coeffs(4) == 25
    assert lm_index(0, 0) == 0
    assert lm_index(2, -2) == 4
    np.testing.assert_array_equal(degrees(2), [0, 1, 1, 1, 2, 2, 2, 2, 2])


def test_basis_orthonormal(sphere4000):
    Y, _, _ = sphere4000.sh_basis(6)
    M = Y.T @ (sphere4000.weights[:, None] * Y)
    np.testing.assert_allclose(M, np.eye(Y.shape[1]), atol=5e-3)


def test_low_degree_closed_forms():
    theta = np.array([0.3, 1.1, 2.0])
    phi = np.array([0.2, -1.0, 2.5])
    Y = real_sh_basis(1, theta, phi)
    c = np.sqrt(3 / (4 * np.pi))
    np.testing.assert_allclose(Y[:, 0], 1 / np.sqrt(4 * np.pi))
    np.testing.assert_allclose(Y[:, lm_index(1, 0)], c * np.cos(theta), rtol=1e-13)
    # the m = +1 and m = -1 real harmonics are x and y up to sign
    np.testing.assert_allclose(np.abs(Y[:, lm_index(1, 1)]), c * np.abs(np.sin(theta) * np.cos(phi)), rtol=1e-13)
    np.testing.assert_allclose(np.abs(Y[:, lm_index(1, -1)]), c * np.abs(np.sin(theta) * np.sin(phi)), rtol=1e-13)


def test_derivatives_finite_difference():
    theta, phi = np.array([0.7, 2.1]), np.array([0.4, -2.2])
    _, Yt, Yp = real_sh_basis(5, theta, phi, derivatives=True)
    h = 1e-6
    fdt = (real_sh_basis(5, theta + h, phi) - real_sh_basis(5, theta - h, phi)) / (2 * h)
    fdp = (real_sh_basis(5, theta, phi + h) - real_sh_basis(5, theta, phi - h)) / (2 * h)
    np.testing.assert_allclose(Yt, fdt, atol=1e-7)
    np.testing.assert_allclose(Yp, fdp, atol=1e-7)


def test_field_gradient_tangent_and_accurate(sphere1000):
    f = ShField.single(3, 1)
    v, g = f.on_cloud(sphere1000)
    assert np.abs((g * sphere1000.normals).sum(1)).max() < 1e-12
    # compare with GMLS
    from opext.geometry import surface_gradient

    np.testing.assert_allclose(surface_gradient(sphere1000, v, 4), g, atol=2e-3)


def test_field_algebra():
    a, b = ShField.single(1, 0), ShField.single(3, -2)
    s = a + b * 2.0
    assert s.L == 3
    assert s.coeffs[lm_index(3, -2)] == 2.0
    assert a.padded(4).L == 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=12), st.floats(-1, 1))
def test_legendre_series_matches_scipy(coef, t):
    ref = sum(c * eval_legendre(l, t) for l, c in enumerate(coef))
    assert legendre_series(np.array(coef), np.array([t]))[0] == pytest.approx(ref, abs=1e-10)


def test_legendre_series_derivative():
    coef = np.random.default_rng(0).normal(size=9)
    t = np.linspace(-0.9, 0.9, 7)
    h = 1e-6
    _, d = legendre_series(coef, t, derivative=True)
    fd = (legendre_series(coef, t + h) - legendre_series(coef, t - h)) / (2 * h)
    np.testing.assert_allclose(d, fd, rtol=1e-6, atol=1e-8)
