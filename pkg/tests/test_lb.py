import numpy as np
import pytest

from opext.extension import ResponseCache
from opext.geometry import farthest_point_sample
from opext.kernels import gaussian, matern, wendland
from opext.lb import (
    MeshfreeLaplaceBeltrami,
    MeshfreeOracle,
    PerturbedOracle,
    SolverError,
    SpectralSphereOracle,
    ZonalResponse,
    make_test_functions,
    make_training_pairs,
    read_pairs,
    solve_lb_meshfree,
    solve_lb_spectral,
    spectral_solution_field,
    write_pairs,
)
from opext.rkhs import error_norms, h1_norm
from opext.sph import ShField, lm_index

from conftest import cloud


def _wmean(c, u):
    return c.weights @ u / c.weights.sum()


def test_spectral_examples():
    u = spectral_solution_field(ShField.single(2, 0))
    assert u.coeffs[lm_index(2, 0)] == pytest.approx(1 / 6, rel=1e-15)
    u = spectral_solution_field(ShField.single(1, 1) + ShField.single(3, 0))
    assert u.coeffs[lm_index(1, 1)] == pytest.approx(1 / 2)
    assert u.coeffs[lm_index(3, 0)] == pytest.approx(1 / 12)
    np.testing.assert_array_equal(spectral_solution_field(ShField.zeros(4)).coeffs, 0.0)


def test_spectral_requires_sphere():
    with pytest.raises(SolverError):
        solve_lb_spectral(cloud("a", 300), ShField.single(1, 0))
    with pytest.raises(SolverError):
        SpectralSphereOracle(cloud("a", 300))


def test_meshfree_second_harmonic(sphere2000):
    f = ShField.single(2, 0)
    sol = solve_lb_meshfree(sphere2000, f.on_cloud(sphere2000)[0])
    exact = (f * (1 / 6)).on_cloud(sphere2000)[0]
    assert error_norms(exact, sol.u, np.ones((sphere2000.n, 3)), np.ones((sphere2000.n, 3)), sphere2000.weights)["rel_L2"] < 0.02


def test_meshfree_constant_input(sphere1000):
    solver = MeshfreeLaplaceBeltrami(sphere1000)
    f = np.full(sphere1000.n, 2.0) + sphere1000.points[:, 0]
    sol = solver.solve(f)
    assert sol.mean_removed == pytest.approx(2.0, abs=1e-3)
    np.testing.assert_allclose(sol.u, sphere1000.points[:, 0] / 2, atol=1e-4)
    assert solver.residual(sol.u, f) < 1e-3


@pytest.mark.parametrize("name", ["sphere", "b", "c"])
def test_meshfree_output_mean_zero(name):
    c = cloud(name, 1000)
    f = np.random.default_rng(0).normal(size=c.n)
    u = MeshfreeOracle(c).apply(f)
    assert abs(_wmean(c, u)) <= 1e-8 * np.linalg.norm(u)


@pytest.mark.parametrize("oracle_cls", [SpectralSphereOracle, MeshfreeOracle])
def test_oracle_linearity(oracle_cls, sphere1000):
    o = oracle_cls(sphere1000)
    rng = np.random.default_rng(2)
    f, g = rng.normal(size=(2, sphere1000.n))
    lhs = o.apply(2.0 * f - 3.0 * g)
    rhs = 2.0 * o.apply(f) - 3.0 * o.apply(g)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_kernel_input_pair_residual(sphere2000):
    o = MeshfreeOracle(sphere2000)
    spec = matern("3/2", 5.0)
    f = o.kernel_input(spec, 17)
    u, _ = o.kernel_response(spec, 17)
    assert abs(_wmean(sphere2000, u)) < 1e-10
    assert o.solver.residual(u, f) < 0.05
    k2 = o.kernel_input(spec, 17) + o.kernel_input(spec, 300)
    np.testing.assert_allclose(o.apply(k2), u + o.kernel_response(spec, 300)[0], atol=1e-10 * np.abs(u).max())


@pytest.mark.parametrize("spec", [gaussian(5.0), matern("3/2", 5.0), wendland(2, 10 / 3)], ids=lambda s: s.label)
def test_zonal_response_matches_meshfree(spec, sphere2000):
    exact = SpectralSphereOracle(sphere2000).kernel_response(spec, 5)
    approx = MeshfreeOracle(sphere2000).kernel_response(spec, 5)
    assert error_norms(exact[0], approx[0], exact[1], approx[1], sphere2000.weights)["rel_H1"] < 0.03


def test_zonal_series_reproduces_kernel():
    spec = matern("5/2", 5.0)
    zr = ZonalResponse.build(spec, L=256)
    rho = np.linspace(0.05, 1.9, 20)
    from opext.kernels import eval_phi

    np.testing.assert_allclose(zr.kernel_series(rho), eval_phi(spec, spec.sigma * rho), atol=1e-6)


def test_spectral_superpose_matches_single(sphere1000):
    o = SpectralSphereOracle(sphere1000)
    spec = matern("1/2", 5.0)
    centers = np.array([3, 50, 400])
    alpha = np.array([[1.0, 0.5], [-2.0, 0.0], [0.25, 1.0]])
    U, G = o.superpose(spec, centers, alpha)
    ref = sum(alpha[i, 1] * o.kernel_response(spec, c)[0] for i, c in enumerate(centers))
    np.testing.assert_allclose(U[:, 1], ref, atol=1e-12)
    assert G.shape == (sphere1000.n, 3, 2)


def test_test_functions():
    fs = make_test_functions([3, 6, 8, 10, 12], 3, seed=4)
    assert len(fs) == 15 and [f.L for f in fs[::3]] == [3, 6, 8, 10, 12]
    assert all(f.coeffs[0] == 0.0 for f in fs)
    again = make_test_functions([3, 6, 8, 10, 12], 3, seed=4)
    assert all(np.array_equal(a.coeffs, b.coeffs) for a, b in zip(fs, again))


def test_test_functions_mean_zero(sphere4000):
    for f in make_test_functions([3, 8], 2):
        v = f.on_cloud(sphere4000)[0]
        assert abs(_wmean(sphere4000, v)) < 1e-3 * np.abs(v).max()


def test_perturbed_oracle(sphere1000):
    inner = SpectralSphereOracle(sphere1000)
    spec = matern("3/2", 5.0)
    same = PerturbedOracle(inner, 0.0).kernel_response(spec, 7)
    np.testing.assert_array_equal(same[0], inner.kernel_response(spec, 7)[0])
    p = PerturbedOracle(inner, 1e-3, seed=2)
    u, g = p.kernel_response(spec, 7)
    u0, g0 = inner.kernel_response(spec, 7)
    assert h1_norm(u - u0, g - g0, sphere1000.weights) == pytest.approx(1e-3, rel=1e-8)
    u2, _ = PerturbedOracle(inner, 1e-3, seed=2).kernel_response(spec, 7)
    np.testing.assert_array_equal(u, u2)
    u3, _ = PerturbedOracle(inner, 1e-3, seed=3).kernel_response(spec, 7)
    assert not np.array_equal(u, u3)


def test_perturbed_superpose_consistent(sphere1000):
    p = PerturbedOracle(SpectralSphereOracle(sphere1000), 1e-2, seed=1)
    spec = wendland(2, 10 / 3)
    U, _ = p.superpose(spec, np.array([1, 2]), np.array([1.0, -1.0]))
    ref = p.kernel_response(spec, 1)[0] - p.kernel_response(spec, 2)[0]
    np.testing.assert_allclose(U[:, 0], ref, atol=1e-12)


def test_pairs_roundtrip_and_cache(tmp_path, sphere1000):
    o = SpectralSphereOracle(sphere1000)
    spec = matern("3/2", 5.0)
    centers = farthest_point_sample(sphere1000, 3)
    pairs = make_training_pairs(o, spec, centers)
    write_pairs(tmp_path / "pairs", pairs, sphere1000, {"kernel": spec.to_dict()})
    manifest, back = read_pairs(tmp_path / "pairs")
    assert manifest["kernel"]["family"] == "matern"
    for a, b in zip(pairs, back):
        np.testing.assert_array_equal(a.u, b.u)
    cache = ResponseCache(tmp_path / "cache")
    u1, _ = cache.get_or_compute(o, spec, int(centers[0]))
    assert cache.get(o, spec, int(centers[0])) is not None
    np.testing.assert_array_equal(u1, pairs[0].u)
