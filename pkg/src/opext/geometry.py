"""Radial point-cloud manifolds, sampling metrics and GMLS surface operators."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .sph import lm_index, n_coeffs, real_sh_basis

logger = logging.getLogger(__name__)

__all__ = [
    "RadialShape",
    "SurfaceCloud",
    "sample_radial_manifold",
    "shape_preset",
    "farthest_point_sample",
    "fill_distance",
    "separation_radius",
    "surface_gradient",
    "save_cloud",
    "load_cloud",
]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RadialShape:
    """Star-shaped surface ``r(theta, phi) = r0 + sum a_lm Y_lm(theta, phi)``."""

    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(1))
    r0: float = 1.0
    name: str = "sphere"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).ravel()
        L = int(round(math.sqrt(c.size))) - 1
        if n_coeffs(L) != c.size:
            raise GeometryError("shape coefficients must fill a whole band")
        object.__setattr__(self, "coeffs", c)
        if self.r0 <= 0:
            raise GeometryError("base radius must be positive")
        t = np.linspace(0.0, np.pi, 97)
        p = np.linspace(0.0, 2 * np.pi, 193)
        T, P = np.meshgrid(t, p, indexing="ij")
        rmin = self.radius(T.ravel(), P.ravel()).min()
        if rmin <= 0:
            raise GeometryError(f"radius becomes non-positive (min {rmin:.3g})")

    @property
    def L(self) -> int:
        return int(round(math.sqrt(self.coeffs.size))) - 1

    @property
    def is_unit_sphere(self) -> bool:
        return self.r0 == 1.0 and not np.any(self.coeffs)

    def radius(self, theta, phi, derivatives: bool = False):
        if not np.any(self.coeffs):
            r = np.full(np.shape(theta), self.r0, dtype=float)
            if derivatives:
                return r, np.zeros_like(r), np.zeros_like(r)
            return r
        if derivatives:
            Y, Yt, Yp = real_sh_basis(self.L, theta, phi, derivatives=True)
            return self.r0 + Y @ self.coeffs, Yt @ self.coeffs, Yp @ self.coeffs
        return self.r0 + real_sh_basis(self.L, theta, phi) @ self.coeffs

    def to_dict(self) -> dict:
        return {"name": self.name, "r0": self.r0, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RadialShape":
        return cls(np.asarray(d["coeffs"], dtype=float), float(d["r0"]), d.get("name", "custom"))


def shape_preset(name: str) -> RadialShape:
    """Unit sphere or one of the A/B/C surrogate shapes of increasing complexity."""
    name = name.lower()
    if name == "sphere":
        return RadialShape()
    if name == "a":
        c = np.zeros(n_coeffs(2))
        c[lm_index(2, 0)] = 0.15
        return RadialShape(c, 1.0, "A-surrogate")
    if name in ("b", "c"):
        L, amp = (4, 0.1) if name == "b" else (8, 0.2)
        c = np.zeros(n_coeffs(L))
        for l in range(1, L + 1):
            for m in range(-l, l + 1):
                c[lm_index(l, m)] = amp / l**2
        return RadialShape(c, 1.0, f"{name.upper()}-surrogate")
    raise ValueError(f"unknown shape preset {name!r}")


@dataclass(eq=False)
class SurfaceCloud:
    """Sampled radial surface with analytic frames and quadrature weights.

    ``tangents[:, j]`` is the coordinate vector ``e_j = d X / d u_j`` for the
    chart ``u = (theta, phi)``; ``metric`` is their Gram matrix.
    """

    points: np.ndarray
    param: np.ndarray
    tangents: np.ndarray
    metric: np.ndarray
    metric_inv: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    shape: RadialShape
    r_nbr: float
    seed: int = 0

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def neighbor_graph(self) -> sp.csr_matrix:
        """Symmetric adjacency of points closer than ``r_nbr`` (no self loops)."""
        D = self.tree.sparse_distance_matrix(self.tree, self.r_nbr, output_type="coo_matrix")
        A = sp.csr_matrix((np.ones_like(D.data), (D.row, D.col)), shape=(self.n, self.n))
        A.setdiag(0)
        A.eliminate_zeros()
        A = ((A + A.T) > 0).astype(float)
        return A.tocsr()

    @cached_property
    def frame(self) -> np.ndarray:
        """Orthonormal tangent frame (N x 2 x 3) spanning the same plane as ``tangents``."""
        e1 = self.tangents[:, 0]
        e2 = self.tangents[:, 1]
        t1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        t2 = e2 - (e2 * t1).sum(1, keepdims=True) * t1
        t2 /= np.linalg.norm(t2, axis=1, keepdims=True)
        return np.stack([t1, t2], axis=1)

    def project_tangent(self, vectors: np.ndarray) -> np.ndarray:
        """Orthogonal projection of ambient vectors onto each tangent plane."""
        F = self.frame
        coords = np.einsum("nd,njd->nj", vectors, F)
        return np.einsum("nj,njd->nd", coords, F)

    def chart_gradient(self, dparam: np.ndarray) -> np.ndarray:
        """``d_i u g^{ij} e_j`` from chart partials ``dparam`` (N x 2)."""
        up = np.einsum("nij,nj->ni", self.metric_inv, dparam)
        return np.einsum("ni,nid->nd", up, self.tangents)

    def sh_basis(self, L: int):
        cache = self.__dict__.setdefault("_sh_cache", {})
        for Lc, vals in cache.items():
            if Lc >= L:
                k = n_coeffs(L)
                return tuple(v[:, :k] for v in vals)
        vals = real_sh_basis(L, self.param[:, 0], self.param[:, 1], derivatives=True)
        cache.clear()
        cache[L] = vals
        return vals

    def weighted_mean(self, values: np.ndarray) -> float:
        return float(self.weights @ values / self.weights.sum())

    def gmls(self, degree: int = 2) -> "GmlsOperators":
        cache = self.__dict__.setdefault("_gmls_cache", {})
        if degree not in cache:
            cache[degree] = build_gmls(self, degree)
        return cache[degree]


def _fibonacci(N: int, offset: float):
    i = np.arange(N)
    z = 1.0 - (2.0 * i + 1.0) / N
    theta = np.arccos(z)
    phi = np.mod(2.0 * np.pi * i / GOLDEN + offset, 2.0 * np.pi)
    return theta, phi


def default_neighbor_radius(area: float, N: int, target: int = 24) -> float:
    """Radius that puts roughly ``target`` neighbors inside each ball."""
    return math.sqrt(target * area / (math.pi * N))


def _surface_frames(shape: RadialShape, theta, phi):
    r, rt, rp = shape.radius(theta, phi, derivatives=True)
    st, ct = np.sin(theta), np.cos(theta)
    sp_, cp = np.sin(phi), np.cos(phi)
    nhat = np.stack([st * cp, st * sp_, ct], axis=1)
    that = np.stack([ct * cp, ct * sp_, -st], axis=1)
    phat = np.stack([-sp_, cp, np.zeros_like(phi)], axis=1)
    X = r[:, None] * nhat
    e_t = rt[:, None] * nhat + r[:, None] * that
    e_p = rp[:, None] * nhat + (r * st)[:, None] * phat
    E = np.stack([e_t, e_p], axis=1)
    g = np.einsum("nid,njd->nij", E, E)
    n = np.cross(e_t, e_p)
    sqrtg = np.linalg.norm(n, axis=1)
    n /= sqrtg[:, None]
    return X, E, g, sqrtg, n


def sample_radial_manifold(
    shape: RadialShape, N: int, seed: int = 0, r_nbr: float | None = None
) -> SurfaceCloud:
    """Fibonacci-lattice sampling of a radial surface.

    ``seed`` rotates the lattice about the polar axis (seed 0 is unrotated).
    Quadrature weights are ``sqrt|g|`` times the parameter-space cell area of an
    equal-solid-angle cell.
    """
    if N < 16:
        raise GeometryError("need at least 16 points")
    offset = 0.0 if seed == 0 else float(np.random.default_rng(seed).uniform(0, 2 * np.pi))
    theta, phi = _fibonacci(N, offset)
    X, E, g, sqrtg, n = _surface_frames(shape, theta, phi)
    if np.any(np.linalg.det(g) <= 0):
        raise GeometryError("degenerate metric")
    w = sqrtg * (4.0 * np.pi / N) / np.sin(theta)
    if r_nbr is None:
        r_nbr = default_neighbor_radius(float(w.sum()), N)
    return SurfaceCloud(
        points=X,
        param=np.stack([theta, phi], axis=1),
        tangents=E,
        metric=g,
        metric_inv=np.linalg.inv(g),
        weights=w,
        normals=n,
        shape=shape,
        r_nbr=float(r_nbr),
        seed=seed,
    )


def farthest_point_sample(cloud_or_points, m: int, seed: int = 0) -> np.ndarray:
    """Greedy farthest-point subsample of ``m`` indices from a seeded random start."""
    X = cloud_or_points.points if isinstance(cloud_or_points, SurfaceCloud) else np.asarray(cloud_or_points)
    N = X.shape[0]
    if m > N:
        raise ValueError(f"cannot pick {m} of {N} points")
    if m <= 0:
        return np.empty(0, dtype=int)
    idx = np.empty(m, dtype=int)
    idx[0] = np.random.default_rng(seed).integers(N)
    d2 = ((X - X[idx[0]]) ** 2).sum(1)
    for k in range(1, m):
        idx[k] = int(np.argmax(d2))
        np.minimum(d2, ((X - X[idx[k]]) ** 2).sum(1), out=d2)
    return idx


def _subset(X, cloud):
    """Center coordinates from cloud indices (1-D) or explicit points (N x 3)."""
    X = np.asarray(X)
    if X.ndim == 2:
        return X.astype(float)
    return cloud.points[X.astype(int)]


def fill_distance(X, cloud: SurfaceCloud) -> float:
    """max over cloud points of the distance to the nearest point of ``X`` (unsquared)."""
    if len(X) == 0:
        raise ValueError("fill distance of an empty set")
    d, _ = cKDTree(_subset(X, cloud)).query(cloud.points)
    return float(d.max())


def separation_radius(X, cloud: SurfaceCloud) -> float:
    """Half the smallest pairwise distance within ``X``."""
    if len(X) < 2:
        raise ValueError("separation radius needs at least two points")
    d, _ = cKDTree(_subset(X, cloud)).query(_subset(X, cloud), k=2)
    return 0.5 * float(d[:, 1].min())


STENCIL_SIZE = 25


def _monomials(s1, s2, degree):
    cols = []
    for total in range(degree + 1):
        for a in range(total, -1, -1):
            cols.append(s1**a * s2 ** (total - a))
    return np.stack(cols, axis=-1)


def _monomial_slot(a: int, b: int) -> int:
    total = a + b
    return total * (total + 1) // 2 + (total - a)


@dataclass(frozen=True)
class GmlsOperators:
    """Sparse stencils for tangent-frame first derivatives and the surface Laplacian."""

    d1: sp.csr_matrix
    d2: sp.csr_matrix
    laplacian: sp.csr_matrix
    degree: int


def build_gmls(cloud: SurfaceCloud, degree: int = 2, stencil: int | None = None) -> GmlsOperators:
    """Weighted least-squares polynomial fits in each point's tangent-plane chart.

    The chart is the orthogonal projection onto the tangent plane, where the
    induced metric is the identity with vanishing first derivatives at the base
    point; so the derivative of the fit gives the surface gradient and the trace
    of its Hessian gives the Laplace-Beltrami operator there.
    """
    N = cloud.n
    nmono = (degree + 1) * (degree + 2) // 2
    if stencil is None:
        stencil = max(STENCIL_SIZE, nmono + 6)
    if stencil < nmono or stencil > N:
        raise GeometryError(f"stencil of {stencil} points cannot fit {nmono} monomials on {N} points")
    # k nearest neighbours adapt to the sampling density, which varies on
    # non-spherical shapes; the first neighbour is the point itself
    dist, nbr = cloud.tree.query(cloud.points, stencil)
    diff = cloud.points[nbr] - cloud.points[:, None, :]
    rho = dist.max(axis=1)
    F = cloud.frame
    s = np.einsum("nkd,njd->nkj", diff, F) / rho[:, None, None]
    P = _monomials(s[..., 0], s[..., 1], degree)
    # compactly supported weights keep the discrete Laplacian free of spurious
    # near-null and unstable modes (Gaussian weights were not)
    w = np.clip(1.0 - dist / (1.05 * rho[:, None]), 0.0, None) ** 8
    PtW = np.transpose(P * w[..., None], (0, 2, 1))
    M = PtW @ P
    C = np.linalg.solve(M, PtW)
    ix = _monomial_slot(1, 0), _monomial_slot(0, 1)
    ixx, iyy = _monomial_slot(2, 0), _monomial_slot(0, 2)
    g1 = C[:, ix[0], :] / rho[:, None]
    g2 = C[:, ix[1], :] / rho[:, None]
    lap = 2.0 * (C[:, ixx, :] + C[:, iyy, :]) / rho[:, None] ** 2
    rows = np.repeat(np.arange(N), stencil)
    cols = nbr.ravel()

    def assemble(vals):
        return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(N, N))

    return GmlsOperators(assemble(g1), assemble(g2), assemble(lap), degree)


def surface_gradient(cloud: SurfaceCloud, values, degree: int = 2) -> np.ndarray:
    """GMLS surface gradient of sampled values, as ambient tangent vectors (N x 3)."""
    values = np.asarray(values, dtype=float)
    ops = cloud.gmls(degree)
    F = cloud.frame
    a = ops.d1 @ values
    b = ops.d2 @ values
    if values.ndim == 1:
        return a[:, None] * F[:, 0] + b[:, None] * F[:, 1]
    return a[:, None, :] * F[:, 0, :, None] + b[:, None, :] * F[:, 1, :, None]


def save_cloud(cloud: SurfaceCloud, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (x,y,z,theta,phi,w) and a ``<path>.json`` sidecar."""
    path = Path(path)
    csv_path, json_path = path.with_suffix(".csv"), path.with_suffix(".json")
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "z", "theta", "phi", "w"])
        for p, q, w in zip(cloud.points, cloud.param, cloud.weights):
            wr.writerow([repr(float(v)) for v in (*p, *q, w)])
    meta = {"shape": cloud.shape.to_dict(), "r_nbr": cloud.r_nbr, "seed": cloud.seed, "n": cloud.n}
    json_path.write_text(json.dumps(meta, indent=2))
    return csv_path, json_path


def load_cloud(path) -> SurfaceCloud:
    """Rebuild a cloud from its CSV + JSON sidecar; frames are recomputed analytically."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.loadtxt(path.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    shape = RadialShape.from_dict(meta["shape"])
    theta, phi = data[:, 3], data[:, 4]
    X, E, g, sqrtg, n = _surface_frames(shape, theta, phi)
    return SurfaceCloud(
        points=data[:, :3],
        param=np.stack([theta, phi], axis=1),
        tangents=E,
        metric=g,
        metric_inv=np.linalg.inv(g),
        weights=data[:, 5],
        normals=n,
        shape=shape,
        r_nbr=float(meta["r_nbr"]),
        seed=int(meta.get("seed", 0)),
    )
