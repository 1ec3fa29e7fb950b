"""Separable geometric neural operator (GNP) in double precision.

Each hidden layer applies

    v'(x) = GELU(W v(x) + k1(x, f(x)) sum_y w_y k2(y, f(y)) v(y))

where ``k1`` and ``k2`` are MLPs emitting ``d_v x d_v`` matrices, so the inner
sum is computed once and shared by every ``x`` (node-based integration). The
last layer only sees coordinates, ``u(x) = Q(k1_T(x) c)`` with
``c = sum_y w_y k2_T(y) v(y)``, which makes the surface gradient of the output
cheap: only ``Q`` and ``k1_T`` depend on ``x``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import torch
from torch import nn

from .geometry import SurfaceCloud, farthest_point_sample
from .lb import Oracle

logger = logging.getLogger(__name__)

__all__ = [
    "GnpConfig",
    "TrainConfig",
    "Mlp",
    "GnpModel",
    "TrainingDivergenceError",
    "node_integral",
    "edge_integral",
    "sobolev_loss",
    "train",
    "TrainResult",
    "evaluate",
    "GnpOracle",
    "save_checkpoint",
    "load_checkpoint",
    "time_integrals",
]

DTYPE = torch.float64
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TrainingDivergenceError(FloatingPointError):
    pass


@dataclass
class GnpConfig:
    layers: int = 4
    d_v: int = 16
    width: int = 32
    activation: str = "gelu"
    bias: bool = True
    seed: int = 0
    # fixed normalization: the network sees f * input_scale and emits u / output_scale
    input_scale: float = 1.0
    output_scale: float = 1.0

    def __post_init__(self):
        if self.layers < 2:
            raise ValueError("need at least 2 layers")
        if self.width < 4 or self.width % 4:
            raise ValueError("width must be a positive multiple of 4")
        if self.activation not in ("gelu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 3e-3
    halve_every: int = 50
    subsample: int = 256
    batch_size: int = 4
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    normalize: bool = True


def _act(name: str, h):
    return nn.functional.gelu(h) if name == "gelu" else h


def _dact(name: str, h):
    if name != "gelu":
        return torch.ones_like(h)
    cdf = 0.5 * (1.0 + torch.erf(h * _INV_SQRT2))
    return cdf + h * _INV_SQRT2PI * torch.exp(-0.5 * h * h)


class Mlp(nn.Module):
    """Widths ``(d_in, w/4, w/2, w, d_out)``; activation on hidden layers only."""

    def __init__(self, d_in: int, d_out: int, width: int, activation: str = "gelu", bias: bool = True):
        super().__init__()
        widths = [d_in, width // 4, width // 2, width, d_out]
        self.activation = activation
        self.linears = nn.ModuleList(
            nn.Linear(a, b, bias=bias, dtype=DTYPE) for a, b in zip(widths[:-1], widths[1:])
        )

    def forward(self, x):
        n = len(self.linears)
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < n - 1:
                x = _act(self.activation, x)
        return x

    def forward_tangent(self, x, dx):
        """Values and forward-mode tangents.

        ``dx`` carries a direction axis just before the point axis:
        ``x`` (..., N, d_in) pairs with ``dx`` (..., k, N, d_in).
        """
        n = len(self.linears)
        for i, lin in enumerate(self.linears):
            x = lin(x)
            dx = dx @ lin.weight.T
            if i < n - 1:
                dx = dx * _dact(self.activation, x).unsqueeze(-3)
                x = _act(self.activation, x)
        return x, dx


def node_integral(k1, k2, v, weights):
    """``k1(x) @ sum_y w_y k2(y) v(y)``; one shared inner sum.

    Shapes: ``k1`` (..., N, d, d), ``k2`` (..., M, d, d), ``v`` (..., M, d),
    ``weights`` (M,). Returns (..., N, d).
    """
    s = torch.einsum("m,...mij,...mj->...i", weights, k2, v)
    return torch.einsum("...nij,...j->...ni", k1, s)


def edge_integral(k1, k2, v, graph, chunk: int = 65536):
    """``(1/|N(x)|) sum_{y in N(x)} k1(x) k2(y) v(y)`` with per-edge kernel matrices.

    ``graph`` is a sparse adjacency (rows are receivers). Isolated nodes get a
    zero contribution and a warning.
    """
    g = sp.csr_matrix(graph)
    rows = torch.as_tensor(np.repeat(np.arange(g.shape[0]), np.diff(g.indptr)))
    cols = torch.as_tensor(g.indices.astype(np.int64))
    deg = torch.as_tensor(np.diff(g.indptr), dtype=v.dtype)
    if torch.any(deg == 0):
        warnings.warn(f"{int((deg == 0).sum())} isolated nodes in edge integral", stacklevel=2)
    out = torch.zeros(g.shape[0], v.shape[-1], dtype=v.dtype)
    for s in range(0, rows.numel(), chunk):
        r, c = rows[s : s + chunk], cols[s : s + chunk]
        kappa = k1[r] @ k2[c]
        msg = (kappa @ v[c].unsqueeze(-1)).squeeze(-1)
        out.index_add_(0, r, msg)
    return out / deg.clamp(min=1.0).unsqueeze(-1)


class GnpModel(nn.Module):
    def __init__(self, config: GnpConfig | None = None):
        super().__init__()
        self.config = config = config or GnpConfig()
        torch.manual_seed(config.seed)
        d, w, act, b = config.d_v, config.width, config.activation, config.bias
        self.lift = Mlp(4, d, w, act, b)
        self.W = nn.ModuleList(nn.Linear(d, d, bias=False, dtype=DTYPE) for _ in range(config.layers - 1))
        self.k1 = nn.ModuleList(Mlp(4, d * d, w, act, b) for _ in range(config.layers - 1))
        self.k2 = nn.ModuleList(Mlp(4, d * d, w, act, b) for _ in range(config.layers - 1))
        self.k1_last = Mlp(3, d * d, w, act, b)
        self.k2_last = Mlp(3, d * d, w, act, b)
        self.project = Mlp(d, 1, w, act, b)

    def _mat(self, m):
        d = self.config.d_v
        return m.reshape(*m.shape[:-1], d, d)

    def encode(self, x, f, weights):
        """Latent vector ``c`` consumed by the final, coordinate-only layer.

        ``x`` (N, 3), ``f`` (..., N), ``weights`` (N,). Returns (..., d_v).
        """
        act = self.config.activation
        f = f * self.config.input_scale
        xb = x.expand(*f.shape, 3)
        feats = torch.cat([xb, f.unsqueeze(-1)], dim=-1)
        v = self.lift(feats)
        self._check(v, 0)
        for j in range(self.config.layers - 1):
            integral = node_integral(self._mat(self.k1[j](feats)), self._mat(self.k2[j](feats)), v, weights)
            v = _act(act, self.W[j](v) + integral)
            self._check(v, j + 1)
        K2 = self._mat(self.k2_last(x))
        return torch.einsum("m,mij,...mj->...i", weights, K2, v)

    def decode(self, c, x, normals=None, with_grad: bool = True):
        """``u(x) = Q(k1_T(x) c)`` and, optionally, its (tangential) gradient.

        ``c`` (..., d_v), ``x`` (N, 3). Gradients are ambient unless ``normals``
        are given, in which case they are projected on the tangent planes.
        """
        scale = self.config.output_scale
        if not with_grad:
            z = torch.einsum("nij,...j->...ni", self._mat(self.k1_last(x)), c)
            return scale * self.project(z).squeeze(-1), None
        eye = torch.eye(3, dtype=x.dtype).unsqueeze(1).expand(3, x.shape[0], 3)
        k, dk = self.k1_last.forward_tangent(x, eye)
        z = torch.einsum("nij,...j->...ni", self._mat(k), c)
        dz = torch.einsum("anij,...j->...ani", self._mat(dk), c)
        u, du = self.project.forward_tangent(z, dz)
        grad = scale * du.squeeze(-1).movedim(-2, -1)  # (..., N, 3)
        if normals is not None:
            grad = grad - (grad * normals).sum(-1, keepdim=True) * normals
        return scale * u.squeeze(-1), grad

    def forward(self, x, f, weights, normals=None, eval_index=None, with_grad: bool = True):
        c = self.encode(x, f, weights)
        if eval_index is not None:
            x = x[eval_index]
            normals = None if normals is None else normals[eval_index]
        u, g = self.decode(c, x, normals, with_grad)
        self._check(u, self.config.layers)
        return u, g

    @staticmethod
    def _check(t, layer: int):
        if not torch.isfinite(t).all():
            raise TrainingDivergenceError(f"non-finite activations at layer {layer}")

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    @torch.no_grad()
    def predict(self, cloud: SurfaceCloud, f):
        """Numpy convenience: values and tangential gradients on a cloud."""
        t = _cloud_tensors(cloud)
        u, g = self(t["x"], torch.as_tensor(np.asarray(f), dtype=DTYPE), t["w"], t["n"])
        return u.numpy(), g.numpy()


def _cloud_tensors(cloud: SurfaceCloud) -> dict:
    return {
        "x": torch.as_tensor(cloud.points, dtype=DTYPE),
        "w": torch.as_tensor(cloud.weights, dtype=DTYPE),
        "n": torch.as_tensor(cloud.normals, dtype=DTYPE),
    }


def sobolev_loss(u, u_hat, grad_u, grad_hat, weights):
    """``||u - u^||_w / ||u||_w + ||grad u - grad u^||_w / ||grad u||_w`` (mean over batch)."""
    w = torch.as_tensor(weights, dtype=DTYPE)
    u, u_hat, grad_u, grad_hat = (torch.as_tensor(a, dtype=DTYPE) for a in (u, u_hat, grad_u, grad_hat))
    nu = torch.sqrt((u * u * w).sum(-1))
    ng = torch.sqrt(((grad_u * grad_u).sum(-1) * w).sum(-1))
    if torch.any(nu == 0) or torch.any(ng == 0):
        raise ValueError("zero reference norm in Sobolev loss")
    eu = torch.sqrt(((u - u_hat) ** 2 * w).sum(-1))
    d = grad_u - grad_hat
    eg = torch.sqrt(((d * d).sum(-1) * w).sum(-1))
    return (eu / nu + eg / ng).mean()


@dataclass
class TrainResult:
    model: GnpModel
    history: list
    smoothed: list
    seconds: float


def _stack_pairs(pairs):
    f = torch.as_tensor(np.stack([p.f for p in pairs]), dtype=DTYPE)
    u = torch.as_tensor(np.stack([p.u for p in pairs]), dtype=DTYPE)
    g = torch.as_tensor(np.stack([p.grad for p in pairs]), dtype=DTYPE)
    return f, u, g


def batch_loss(model: GnpModel, cloud_t: dict, f, u, g, index=None):
    u_hat, g_hat = model(cloud_t["x"], f, cloud_t["w"], cloud_t["n"], eval_index=index)
    w = cloud_t["w"]
    if index is not None:
        w, u, g = w[index], u[..., index], g[..., index, :]
    return sobolev_loss(u, u_hat, g, g_hat, w)


def train(model: GnpModel, pairs, cloud: SurfaceCloud, config: TrainConfig | None = None, log_every: int = 10) -> TrainResult:
    """Adam on the Sobolev loss with FPS-subsampled loss points and a halving schedule.

    Each epoch draws a fresh FPS subsample (seeded start) and a seeded shuffle of
    the pairs, so runs are deterministic under ``config.seed``.
    """
    config = config or TrainConfig()
    t0 = time.perf_counter()
    history: list[dict] = []
    if config.epochs == 0:
        return TrainResult(model, history, [], 0.0)
    ct = _cloud_tensors(cloud)
    F, U, G = _stack_pairs(pairs)
    if config.normalize:
        model.config.input_scale = float(1.0 / F.std())
        model.config.output_scale = float(U.std())
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=config.betas)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=config.halve_every, gamma=0.5)
    m = min(config.subsample, cloud.n)
    for epoch in range(config.epochs):
        idx = torch.as_tensor(farthest_point_sample(cloud, m, seed=int(rng.integers(2**31))))
        order = rng.permutation(len(pairs))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            b = torch.as_tensor(order[s : s + config.batch_size])
            opt.zero_grad()
            try:
                loss = batch_loss(model, ct, F[b], U[b], G[b], idx)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"epoch {epoch}: {exc}") from exc
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(f"epoch {epoch}: loss is {loss.item()}")
            loss.backward()
            opt.step()
            total += loss.item() * len(b)
        sched.step()
        history.append({"epoch": epoch + 1, "loss": total / len(pairs), "lr": opt.param_groups[0]["lr"]})
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d loss %.4g", epoch + 1, history[-1]["loss"])
    smoothed = list(np.minimum.accumulate([h["loss"] for h in history]))
    return TrainResult(model, history, smoothed, time.perf_counter() - t0)


@torch.no_grad()
def evaluate(model: GnpModel, pairs, cloud: SurfaceCloud) -> dict:
    """Mean relative errors of the model over pairs, on the full cloud."""
    ct = _cloud_tensors(cloud)
    F, U, G = _stack_pairs(pairs)
    u_hat, g_hat = model(ct["x"], F, ct["w"], ct["n"])
    w = ct["w"]
    # outputs are compared after removing their weighted means, like oracle outputs
    u_hat = u_hat - (u_hat * w).sum(-1, keepdim=True) / w.sum()
    eu = torch.sqrt(((U - u_hat) ** 2 * w).sum(-1))
    nu = torch.sqrt((U * U * w).sum(-1))
    eg = torch.sqrt((((G - g_hat) ** 2).sum(-1) * w).sum(-1))
    ng = torch.sqrt(((G * G).sum(-1) * w).sum(-1))
    h1 = torch.sqrt((eu**2 + eg**2) / (nu**2 + ng**2))
    return {
        "rel_L2": float((eu / nu).mean()),
        "rel_gradL2": float((eg / ng).mean()),
        "rel_H1": float(h1.mean()),
        "max_rel_L2": float((eu / nu).max()),
    }


class GnpOracle(Oracle):
    """A trained model used as a (non-exact) solution operator."""

    kind = "gnp"
    exact = False

    def __init__(self, model: GnpModel, cloud: SurfaceCloud):
        super().__init__(cloud)
        self.model = model
        self._t = _cloud_tensors(cloud)

    @property
    def key(self) -> str:
        return f"{super().key}:{self.model.fingerprint()[:16]}"

    @torch.no_grad()
    def _respond(self, f):
        u, g = self.model(self._t["x"], torch.as_tensor(f, dtype=DTYPE), self._t["w"], self._t["n"])
        return u.numpy(), g.numpy()

    @torch.no_grad()
    def superpose(self, spec, centers, alpha, cache=None, chunk: int = 64):
        if cache is not None:
            return super().superpose(spec, centers, alpha, cache)
        centers = np.asarray(centers, dtype=int)
        A = torch.as_tensor(np.asarray(alpha, dtype=float).reshape(len(centers), -1))
        U = torch.zeros(self.cloud.n, A.shape[1], dtype=DTYPE)
        G = torch.zeros(self.cloud.n, 3, A.shape[1], dtype=DTYPE)
        w = self._t["w"]
        for s in range(0, len(centers), chunk):
            F = torch.as_tensor(np.stack([self.kernel_input(spec, int(c)) for c in centers[s : s + chunk]]))
            u, g = self.model(self._t["x"], F, w, self._t["n"])
            u = u - (u * w).sum(-1, keepdim=True) / w.sum()
            U += u.T @ A[s : s + chunk]
            G += torch.einsum("bnd,bk->ndk", g, A[s : s + chunk])
        return U.numpy(), G.numpy()


def save_checkpoint(path, model: GnpModel, train_config: TrainConfig | None = None, history=None, extra=None):
    state = {k: v.detach().cpu().numpy().tolist() for k, v in model.state_dict().items()}
    blob = {
        "architecture": asdict(model.config),
        "parameters": state,
        "training": asdict(train_config) if train_config else None,
        "seed": model.config.seed,
        "history": history or [],
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)
    return path


def load_checkpoint(path):
    with open(path) as fh:
        blob = json.load(fh)
    model = GnpModel(GnpConfig(**blob["architecture"]))
    state = {k: torch.as_tensor(np.asarray(v), dtype=DTYPE) for k, v in blob["parameters"].items()}
    model.load_state_dict(state)
    tc = blob.get("training")
    if tc is not None:
        tc["betas"] = tuple(tc["betas"])
        tc = TrainConfig(**tc)
    return model, tc, blob


@torch.no_grad()
def time_integrals(cloud: SurfaceCloud, d_v: int = 16, repeats: int = 3, seed: int = 0) -> dict:
    """Wall-clock of node- vs edge-based integration of one separable layer."""
    gen = torch.Generator().manual_seed(seed)
    N = cloud.n
    k1 = torch.randn(N, d_v, d_v, generator=gen, dtype=DTYPE)
    k2 = torch.randn(N, d_v, d_v, generator=gen, dtype=DTYPE)
    v = torch.randn(N, d_v, generator=gen, dtype=DTYPE)
    w = torch.as_tensor(cloud.weights, dtype=DTYPE)
    graph = cloud.neighbor_graph

    def best(fn):
        times = []
        for _ in range(repeats):
            t = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t)
        return min(times)

    t_node = best(lambda: node_integral(k1, k2, v, w))
    t_edge = best(lambda: edge_integral(k1, k2, v, graph))
    return {"N": N, "edges": int(graph.nnz), "node_s": t_node, "edge_s": t_edge, "ratio": t_edge / t_node}
