import numpy as np
import pytest
import scipy.sparse as sp
import torch

from opext.geometry import farthest_point_sample
from opext.gnp import (
    DTYPE,
    GnpConfig,
    GnpModel,
    GnpOracle,
    TrainConfig,
    TrainingDivergenceError,
    batch_loss,
    edge_integral,
    evaluate,
    load_checkpoint,
    node_integral,
    save_checkpoint,
    sobolev_loss,
    time_integrals,
    train,
)
from opext.kernels import matern
from opext.lb import SpectralSphereOracle, make_training_pairs
from opext.rkhs import error_norms

from conftest import cloud


def _t(a):
    return torch.as_tensor(np.asarray(a), dtype=DTYPE)


@pytest.fixture(scope="module")
def small():
    c = cloud("sphere", 128)
    pairs = make_training_pairs(SpectralSphereOracle(c), matern("3/2", 5.0), farthest_point_sample(c, 6))
    return c, pairs


def test_node_integral_identity_kernels():
    N, d = 20, 4
    eye = torch.eye(d, dtype=DTYPE).expand(N, d, d)
    c = _t([1.0, -2.0, 0.5, 3.0])
    w = _t(np.linspace(0.1, 1.0, N))
    out = node_integral(eye, eye, c.expand(N, d), w)
    torch.testing.assert_close(out, (c * w.sum()).expand(N, d))
    assert torch.count_nonzero(node_integral(eye, eye, torch.zeros(N, d, dtype=DTYPE), w)) == 0


def test_node_edge_equivalence():
    N, d = 256, 8
    g = torch.Generator().manual_seed(0)
    k1, k2 = torch.randn(2, N, d, d, generator=g, dtype=DTYPE)
    v = torch.randn(N, d, generator=g, dtype=DTYPE)
    w = torch.full((N,), 1.0 / N, dtype=DTYPE)
    complete = sp.csr_matrix(np.ones((N, N)))
    a = node_integral(k1, k2, v, w)
    b = edge_integral(k1, k2, v, complete)
    assert (torch.linalg.norm(a - b) / torch.linalg.norm(b)).item() < 1e-10


def test_edge_integral_examples():
    N, d = 5, 3
    eye = torch.eye(d, dtype=DTYPE).expand(N, d, d)
    c = _t([1.0, 2.0, 3.0]).expand(N, d)
    ring = sp.csr_matrix(np.roll(np.eye(N), 1, axis=1) + np.roll(np.eye(N), -1, axis=1))
    torch.testing.assert_close(edge_integral(eye, eye, c, ring), c)
    g = torch.Generator().manual_seed(1)
    k1, k2 = torch.randn(2, N, d, d, generator=g, dtype=DTYPE)
    v = torch.randn(N, d, generator=g, dtype=DTYPE)
    single = sp.csr_matrix(([1.0], ([0], [3])), shape=(N, N))
    with pytest.warns(UserWarning, match="isolated"):
        out = edge_integral(k1, k2, v, single)
    torch.testing.assert_close(out[0], k1[0] @ k2[3] @ v[3])
    assert torch.count_nonzero(out[1:]) == 0


def test_node_integration_faster(sphere1000):
    assert time_integrals(sphere1000, d_v=16)["ratio"] > 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        GnpConfig(layers=1)
    with pytest.raises(ValueError):
        GnpConfig(width=30)
    with pytest.raises(ValueError):
        GnpConfig(activation="relu")


def test_zero_parameters_constant_output(small):
    c, _ = small
    model = GnpModel(GnpConfig(d_v=4, width=8))
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    u, g = model.predict(c, np.random.default_rng(0).normal(size=c.n))
    np.testing.assert_array_equal(u, u[0])
    np.testing.assert_array_equal(g, 0.0)


def test_stripped_network_linear(small):
    c, _ = small
    model = GnpModel(GnpConfig(d_v=4, width=8, activation="identity", bias=False, seed=3))
    # hidden-layer kernels see f(x); blind them so the remaining path is linear in f
    with torch.no_grad():
        for net in list(model.k1) + list(model.k2):
            net.linears[0].weight[:, 3] = 0.0
        model.lift.linears[0].weight[:, :3] = 0.0
    f = np.random.default_rng(1).normal(size=c.n)
    u1, g1 = model.predict(c, f)
    u2, g2 = model.predict(c, 2 * f)
    np.testing.assert_allclose(u2, 2 * u1, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-14)


def test_output_gradient_finite_difference(small):
    c, pairs = small
    model = GnpModel(GnpConfig(d_v=4, width=8, seed=5))
    t = {"x": _t(c.points), "w": _t(c.weights)}
    with torch.no_grad():
        code = model.encode(t["x"], _t(pairs[0].f), t["w"])
    rng = np.random.default_rng(0)
    theta, phi = rng.uniform(0.3, 2.8, 20), rng.uniform(0, 2 * np.pi, 20)

    def point(th, ph):
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)

    with torch.no_grad():
        _, grad = model.decode(code, _t(point(theta, phi)))
        h = 1e-5
        for dth, dph in ((h, 0.0), (0.0, h)):
            up, _ = model.decode(code, _t(point(theta + dth, phi + dph)), with_grad=False)
            um, _ = model.decode(code, _t(point(theta - dth, phi - dph)), with_grad=False)
            fd = ((up - um) / (2 * h)).numpy()
            tangent = (point(theta + dth, phi + dph) - point(theta - dth, phi - dph)) / (2 * h)
            analytic = (grad.numpy() * tangent).sum(1)
            np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-8 * np.abs(fd).max())


def test_output_gradient_tangent(small):
    c, pairs = small
    _, g = GnpModel(GnpConfig(d_v=4, width=8)).predict(c, pairs[0].f)
    assert np.abs((g * c.normals).sum(1)).max() < 1e-12


def test_training_gradient_finite_difference(small):
    c, pairs = small
    model = GnpModel(GnpConfig(layers=3, d_v=4, width=8, seed=2))
    ct = {"x": _t(c.points), "w": _t(c.weights), "n": _t(c.normals)}
    F, U, G = (_t(np.stack([getattr(p, k) for p in pairs[:2]])) for k in ("f", "u", "grad"))

    def loss():
        return batch_loss(model, ct, F, U, G)

    model.zero_grad()
    loss().backward()
    params = list(model.parameters())
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(10):
        p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            lp = loss().item()
            p[idx] = orig - h
            lm = loss().item()
            p[idx] = orig
        fd = (lp - lm) / (2 * h)
        assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_sobolev_loss_examples():
    rng = np.random.default_rng(0)
    w = rng.uniform(0.1, 1, 30)
    u, g = rng.normal(size=30), rng.normal(size=(30, 3))
    assert sobolev_loss(u, u, g, g, w).item() == 0.0
    assert sobolev_loss(u, 0 * u, g, 0 * g, w).item() == pytest.approx(2.0)
    uh = u + 0.1 * rng.normal(size=30)
    first = sobolev_loss(u, uh, g, g, w).item()
    assert first == pytest.approx(error_norms(u, uh, g, g, w)["rel_L2"])
    with pytest.raises(ValueError):
        sobolev_loss(0 * u, u, g, g, w)


def test_zero_epochs_unchanged(small):
    c, pairs = small
    model = GnpModel(GnpConfig(d_v=4, width=8))
    before = model.fingerprint()
    res = train(model, pairs, c, TrainConfig(epochs=0))
    assert model.fingerprint() == before and res.history == []


def test_training_deterministic_and_decreasing(small):
    c, pairs = small
    cfg = TrainConfig(epochs=6, subsample=64, batch_size=2, seed=1)
    runs = [train(GnpModel(GnpConfig(d_v=4, width=8, seed=1)), pairs, c, cfg) for _ in range(2)]
    assert runs[0].history == runs[1].history
    assert runs[0].model.fingerprint() == runs[1].model.fingerprint()
    sm = runs[0].smoothed
    assert all(a >= b for a, b in zip(sm, sm[1:]))
    assert sm[-1] < runs[0].history[0]["loss"]


def test_divergence_reported(small):
    c, pairs = small
    model = GnpModel(GnpConfig(d_v=4, width=8))
    with torch.no_grad():
        model.lift.linears[0].weight.fill_(float("nan"))
    with pytest.raises(TrainingDivergenceError, match="epoch 0"):
        train(model, pairs, c, TrainConfig(epochs=1, subsample=32))


def test_checkpoint_roundtrip(tmp_path, small):
    c, pairs = small
    model = GnpModel(GnpConfig(d_v=4, width=8, seed=9))
    train(model, pairs, c, TrainConfig(epochs=1, subsample=32))
    save_checkpoint(tmp_path / "m.json", model, TrainConfig(epochs=1))
    back, tc, _ = load_checkpoint(tmp_path / "m.json")
    assert back.fingerprint() == model.fingerprint() and tc.epochs == 1
    np.testing.assert_array_equal(back.predict(c, pairs[0].f)[0], model.predict(c, pairs[0].f)[0])
    assert set(evaluate(back, pairs, c)) == {"rel_L2", "rel_gradL2", "rel_H1", "max_rel_L2"}


def test_gnp_oracle_superpose(small):
    c, _ = small
    o = GnpOracle(GnpModel(GnpConfig(d_v=4, width=8, seed=4)), c)
    spec = matern("3/2", 5.0)
    U, G = o.superpose(spec, np.array([0, 9]), np.array([1.5, -0.5]))
    ref = 1.5 * o.kernel_response(spec, 0)[0] - 0.5 * o.kernel_response(spec, 9)[0]
    np.testing.assert_allclose(U[:, 0], ref, atol=1e-12)
    assert o.key != GnpOracle(GnpModel(GnpConfig(d_v=4, width=8, seed=5)), c).key
