import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opext.geometry import farthest_point_sample
from opext.kernels import gaussian, kernel_matrix, matern, wendland
from opext.rkhs import (
    GramSystem,
    IllConditionedError,
    Interpolant,
    assemble_gram,
    condition_number,
    error_norms,
    eval_interpolant,
    eval_interpolant_gradient,
    power_function,
    solve_regularized,
)


def _random_points(n, seed):
    X = np.random.default_rng(seed).normal(size=(n, 3))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def test_single_center_gram():
    sys = assemble_gram(matern("3/2", 2.0), [[1.0, 0, 0]])
    np.testing.assert_array_equal(sys.A, [[1.0]])
    itp = solve_regularized(sys, [2.5], lam=0.0)
    np.testing.assert_allclose(itp.alpha, [2.5])


def test_separated_wendland_identity():
    X = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    spec = wendland(0, 2.0)  # support radius 0.5
    sys = assemble_gram(spec, X)
    np.testing.assert_array_equal(sys.A, np.eye(3))
    b = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(solve_regularized(sys, b, 0.0).alpha, b)
    assert condition_number(sys, 0.0).kappa == 1.0
    assert condition_number(sys, 1e-6).kappa == 1.0


def test_two_by_two_hand_solve():
    sys = GramSystem(np.zeros((2, 3)), gaussian(1.0), np.array([[1.0, 0.5], [0.5, 1.0]]))
    np.testing.assert_allclose(solve_regularized(sys, [1.0, 0.0], 0.0).alpha, [4 / 3, -2 / 3], rtol=1e-14)


def test_gram_symmetric_exactly():
    for seed in range(10):
        A = assemble_gram(matern("1/2", 3.0), _random_points(30, seed)).A
        assert np.array_equal(A, A.T)


def test_interpolation_reproduces_data():
    X = _random_points(40, 1)
    b = np.sin(3 * X[:, 0]) + X[:, 2]
    itp = solve_regularized(assemble_gram(matern("3/2", 2.0), X), b, 0.0)
    np.testing.assert_allclose(eval_interpolant(itp, X), b, rtol=1e-8)


def test_single_gaussian_value():
    itp = Interpolant(np.zeros((1, 3)), gaussian(4.0), np.array([1.7]), 0.0)
    assert eval_interpolant(itp, [[0.25, 0, 0]])[0] == pytest.approx(1.7 * np.exp(-1.0), rel=1e-14)


def test_zero_coefficients():
    X = _random_points(10, 2)
    itp = Interpolant(X, matern("3/2", 1.0), np.zeros(10), 0.0)
    Y = _random_points(5, 3)
    np.testing.assert_array_equal(eval_interpolant(itp, Y), 0.0)
    np.testing.assert_array_equal(eval_interpolant_gradient(itp, Y), 0.0)


def test_multi_column_rhs():
    X = _random_points(25, 4)
    B = np.random.default_rng(0).normal(size=(25, 3))
    sys = assemble_gram(matern("5/2", 2.0), X)
    itp = solve_regularized(sys, B, 1e-10)
    for k in range(3):
        np.testing.assert_allclose(itp.alpha[:, k], solve_regularized(sys, B[:, k], 1e-10).alpha, rtol=1e-10)


def test_singular_without_regularization():
    X = np.vstack([_random_points(5, 0), _random_points(5, 0)[:1] + 1e-13])
    sys = assemble_gram(gaussian(0.1), X)
    with pytest.raises(IllConditionedError):
        solve_regularized(sys, np.ones(6), 0.0)


def test_duplicates_warn_and_floor():
    X = np.vstack([_random_points(4, 0), _random_points(4, 0)[:1]])
    with pytest.warns(UserWarning):
        sys = assemble_gram(matern("1/2", 1.0), X)
    assert solve_regularized(sys, np.ones(5), 0.0).lam > 0


def test_negative_lambda():
    with pytest.raises(ValueError):
        solve_regularized(assemble_gram(gaussian(1.0), _random_points(3, 0)), np.ones(3), -1.0)


def test_interpolant_json_roundtrip():
    itp = solve_regularized(assemble_gram(wendland(1, 1.0), _random_points(8, 5)), np.arange(8.0))
    back = Interpolant.from_dict(itp.to_dict())
    Y = _random_points(6, 6)
    np.testing.assert_array_equal(eval_interpolant(back, Y), eval_interpolant(itp, Y))


def test_power_function_examples():
    spec = matern("3/2", 2.0)
    X = _random_points(30, 7)
    np.testing.assert_allclose(power_function(spec, X, X), 0.0, atol=1e-6)
    assert power_function(wendland(2, 1.0), np.empty((0, 3)), X[:1])[0] == pytest.approx(np.sqrt(3.0))
    x = _random_points(20, 8)
    prev = power_function(spec, X[:5], x)
    for m in (10, 20, 30):
        cur = power_function(spec, X[:m], x)
        assert (cur <= prev + 1e-12).all()
        prev = cur


def test_gradient_matches_finite_difference():
    spec = matern("5/2", 2.0)
    X = _random_points(12, 9)
    itp = Interpolant(X, spec, np.random.default_rng(1).normal(size=12), 0.0)
    y = np.array([[0.3, -0.1, 0.4]])
    h = 1e-6
    fd = [(eval_interpolant(itp, y + h * e) - eval_interpolant(itp, y - h * e))[0] / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(eval_interpolant_gradient(itp, y)[0], fd, rtol=1e-6)


def test_interpolant_gradient_tangential(sphere1000):
    c = sphere1000
    idx = farthest_point_sample(c, 50)
    itp = solve_regularized(assemble_gram(matern("3/2", 5.0), c.points[idx]), c.points[idx, 0])
    g = eval_interpolant_gradient(itp, None, c)
    assert np.abs((g * c.normals).sum(1)).max() < 1e-12


def test_identity_condition():
    sys = GramSystem(np.zeros((4, 3)), gaussian(1.0), np.eye(4))
    for lam in (0.0, 1e-3, 1.0):
        assert condition_number(sys, lam).kappa == 1.0


def test_condition_infinite_when_semidefinite():
    sys = GramSystem(np.zeros((2, 3)), gaussian(1.0), np.ones((2, 2)))
    assert condition_number(sys, 0.0).kappa == np.inf
    assert np.isfinite(condition_number(sys, 1e-6).kappa)


@pytest.mark.parametrize("lam", [1e-10, 1e-6])
def test_condition_bound_random(lam):
    rng = np.random.default_rng(11)
    specs = [gaussian(2.0), matern("1/2", 3.0), matern("3/2", 1.0), wendland(2, 1.0)]
    for k in range(20):
        sys = assemble_gram(specs[k % 4], _random_points(int(rng.integers(5, 80)), 100 + k))
        rep = condition_number(sys, lam)
        assert rep.kappa <= rep.bound


def test_error_norm_examples():
    w = np.full(50, 0.1)
    rng = np.random.default_rng(0)
    u, g = rng.normal(size=50), rng.normal(size=(50, 3))
    e = error_norms(u, u, g, g, w)
    assert e == {"rel_L2": 0.0, "rel_gradL2": 0.0, "rel_H1": 0.0}
    e = error_norms(u, 0 * u, g, 0 * g, w)
    assert all(v == pytest.approx(1.0) for v in e.values())
    e = error_norms(u, u, g, 0 * g, w)
    nu2, ng2 = w @ u**2, w @ (g**2).sum(1)
    assert e["rel_H1"] ** 2 == pytest.approx(ng2 / (nu2 + ng2))


def test_error_norm_zero_reference():
    with pytest.raises(ValueError):
        error_norms(np.zeros(3), np.ones(3), np.zeros((3, 3)), np.ones((3, 3)), np.ones(3))


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 40), st.sampled_from([1e-10, 1e-6, 1e-2]), st.integers(0, 10_000))
def test_regularized_residual_small(n, lam, seed):
    X = _random_points(n, seed)
    b = np.random.default_rng(seed).normal(size=n)
    itp = solve_regularized(assemble_gram(matern("3/2", 2.0), X), b, lam)
    M = kernel_matrix(itp.spec, X) + lam * np.eye(n)
    assert itp.residual == pytest.approx(np.linalg.norm(M @ itp.alpha - b) / np.linalg.norm(b), abs=1e-12)
    assert itp.residual < 1e-6
