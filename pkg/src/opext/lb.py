"""Reference solution operators for ``Delta_LB u = -f`` with ``int u = 0``.

Oracles map sampled inputs on a :class:`~opext.geometry.SurfaceCloud` to sampled
solutions and surface gradients. Every oracle removes the weighted mean of its
input (the equation is only solvable for mean-zero data) and of its output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicHermiteSpline
from scipy.special import roots_legendre

from .geometry import SurfaceCloud, surface_gradient
from .kernels import KernelSpec, eval_phi, kernel_matrix, pairwise_distances
from .rkhs import h1_norm
from .sph import ShField, degrees, legendre_series, n_coeffs

logger = logging.getLogger(__name__)

__all__ = [
    "spectral_solution_field",
    "solve_lb_spectral",
    "solve_lb_meshfree",
    "MeshfreeLaplaceBeltrami",
    "MeshfreeSolution",
    "Oracle",
    "SpectralSphereOracle",
    "MeshfreeOracle",
    "PerturbedOracle",
    "perturbed_oracle",
    "ZonalResponse",
    "make_test_functions",
    "make_training_pairs",
    "TrainingPair",
    "write_pairs",
    "read_pairs",
    "random_sh_field",
]


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------- spectral


def spectral_solution_field(f: ShField) -> ShField:
    """Mode-wise inverse: ``u_lm = f_lm / (l (l + 1))`` with the l = 0 mode dropped."""
    ls = degrees(f.L)
    u = np.zeros_like(f.coeffs)
    nz = ls > 0
    u[nz] = f.coeffs[nz] / (ls[nz] * (ls[nz] + 1.0))
    return ShField(u)


def _require_sphere(cloud: SurfaceCloud):
    if not cloud.shape.is_unit_sphere:
        raise SolverError(f"spectral solver needs the unit sphere, got {cloud.shape.name}")


def solve_lb_spectral(cloud: SurfaceCloud, f: ShField):
    """Exact solution values and surface gradients for a band-limited right-hand side."""
    _require_sphere(cloud)
    return spectral_solution_field(f).on_cloud(cloud)


@dataclass(frozen=True, eq=False)
class ZonalResponse:
    """Exact response to a mean-removed kernel input on the unit sphere.

    On the sphere ``k(x, c)`` depends only on the chordal distance ``rho`` and
    expands as ``sum_l a_l (2l+1)/(4 pi) P_l(x . c)`` (Funk-Hecke), so the
    solution profile is ``g(rho) = sum_{l>=1} a_l (2l+1) / (4 pi l (l+1)) P_l``.
    ``g`` and ``dg/drho`` are tabulated and Hermite-interpolated.
    """

    spec: KernelSpec
    a: np.ndarray
    spline: CubicHermiteSpline
    dspline: object

    @classmethod
    def build(cls, spec: KernelSpec, L: int = 256, grid: int = 8193) -> "ZonalResponse":
        a = funk_hecke_coefficients(spec, L)
        l = np.arange(L + 1)
        c = np.zeros(L + 1)
        c[1:] = a[1:] * (2 * l[1:] + 1) / (4 * np.pi * l[1:] * (l[1:] + 1))
        rho = np.linspace(0.0, 2.0, grid)
        t = 1.0 - 0.5 * rho**2
        g, dg_dt = legendre_series(c, t, derivative=True)
        dg = -rho * dg_dt
        spline = CubicHermiteSpline(rho, g, dg)
        # derivative data interpolated separately keeps dg/drho at O(h^4)
        d2 = np.gradient(dg, rho, edge_order=2)
        dspline = CubicHermiteSpline(rho, dg, d2)
        return cls(spec, a, spline, dspline)

    def kernel_series(self, rho):
        l = np.arange(self.a.size)
        return legendre_series(self.a * (2 * l + 1) / (4 * np.pi), 1.0 - 0.5 * np.asarray(rho) ** 2)

    def profile(self, rho):
        return self.spline(rho), self.dspline(rho)


def funk_hecke_coefficients(spec: KernelSpec, L: int, panels: int = 96, order: int = 32) -> np.ndarray:
    """``a_l = 2 pi int_0^2 Phi(sigma rho) P_l(1 - rho^2/2) rho d rho`` for l <= L."""
    rmax = min(2.0, spec.support_radius)
    x, w = roots_legendre(order)
    edges = np.linspace(0.0, rmax, panels + 1)
    h = np.diff(edges)
    rho = (edges[:-1, None] + 0.5 * h[:, None] * (x[None, :] + 1.0)).ravel()
    wt = (0.5 * h[:, None] * w[None, :]).ravel()
    vals = eval_phi(spec, spec.sigma * rho) * rho * wt * 2 * np.pi
    t = 1.0 - 0.5 * rho**2
    a = np.empty(L + 1)
    p_prev, p = np.ones_like(t), t.copy()
    a[0] = vals @ p_prev
    if L >= 1:
        a[1] = vals @ p
    for l in range(1, L):
        p_prev, p = p, ((2 * l + 1) * t * p - l * p_prev) / (l + 1)
        a[l + 1] = vals @ p
    return a


# ---------------------------------------------------------------- meshfree


@dataclass(frozen=True)
class MeshfreeSolution:
    u: np.ndarray
    grad: np.ndarray
    mean_removed: float
    multiplier: float


class MeshfreeLaplaceBeltrami:
    """GMLS collocation of Delta_LB with a bordered mean-zero constraint.

    The system ``[[L, 1], [w^T, 0]] [u; mu] = [-f; 0]`` is factorized once; the
    multiplier ``mu`` absorbs whatever part of ``-f`` is incompatible with ``L``.
    """

    def __init__(self, cloud: SurfaceCloud, degree: int = 4, grad_degree: int = 4):
        self.cloud = cloud
        self.degree = degree
        self.grad_degree = grad_degree
        self.L = cloud.gmls(degree).laplacian
        N = cloud.n
        w = cloud.weights
        B = sp.bmat(
            [[self.L, sp.csr_matrix(np.ones((N, 1)))], [sp.csr_matrix(w[None, :]), None]]
        ).tocsc()
        try:
            self._lu = spla.splu(B)
        except RuntimeError as exc:
            raise SolverError("meshfree Laplace-Beltrami system is singular") from exc

    def solve(self, f) -> MeshfreeSolution:
        f = np.asarray(f, dtype=float)
        w = self.cloud.weights
        mean = float(w @ f / w.sum())
        rhs = np.concatenate([-(f - mean), [0.0]])
        sol = self._lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise SolverError("non-finite meshfree solution")
        u = sol[:-1]
        grad = surface_gradient(self.cloud, u, self.grad_degree)
        return MeshfreeSolution(u, grad, mean, float(sol[-1]))

    def residual(self, u, f) -> float:
        """Relative residual ``||L u + f||_w / ||f||_w`` (f taken mean-free)."""
        w = self.cloud.weights
        f = np.asarray(f) - w @ f / w.sum()
        r = self.L @ u + f
        return float(np.sqrt(w @ r**2 / (w @ f**2)))


def solve_lb_meshfree(cloud: SurfaceCloud, f, degree: int = 4) -> MeshfreeSolution:
    return MeshfreeLaplaceBeltrami(cloud, degree).solve(f)


# ---------------------------------------------------------------- oracles


def _demean(cloud: SurfaceCloud, u: np.ndarray) -> np.ndarray:
    w = cloud.weights
    return u - (w @ u) / w.sum()


def _fingerprint(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p, dtype=float).tobytes())
        else:
            h.update(str(p).encode())
    return h.hexdigest()


class Oracle:
    """Maps sampled right-hand sides to sampled solutions and surface gradients."""

    kind = "abstract"
    exact = True

    def __init__(self, cloud: SurfaceCloud):
        self.cloud = cloud

    @property
    def key(self) -> str:
        c = self.cloud
        return f"{self.kind}:{_fingerprint(c.points[:64], c.n, c.shape.to_dict())[:16]}"

    def _respond(self, f: np.ndarray):
        raise NotImplementedError

    def respond(self, f):
        """Solution values and gradients for the mean-removed input ``f``."""
        f = _demean(self.cloud, np.asarray(f, dtype=float))
        u, g = self._respond(f)
        return _demean(self.cloud, u), g

    def apply(self, f) -> np.ndarray:
        return self.respond(f)[0]

    def apply_gradient(self, f) -> np.ndarray:
        return self.respond(f)[1]

    def kernel_input(self, spec: KernelSpec, center: int) -> np.ndarray:
        x = self.cloud.points
        return _demean(self.cloud, kernel_matrix(spec, x, x[center : center + 1])[:, 0])

    def kernel_response(self, spec: KernelSpec, center: int):
        return self.respond(self.kernel_input(spec, center))

    def solve_field(self, f: ShField):
        """Solution for a band-limited right-hand side given by its coefficients."""
        return self.respond(f.on_cloud(self.cloud)[0])

    def superpose(self, spec: KernelSpec, centers, alpha, cache=None):
        """``sum_i alpha_i * response_i`` (values N x K, gradients N x 3 x K)."""
        centers = np.asarray(centers, dtype=int)
        A = np.asarray(alpha, dtype=float).reshape(len(centers), -1)
        U = np.zeros((self.cloud.n, A.shape[1]))
        G = np.zeros((self.cloud.n, 3, A.shape[1]))
        for i, c in enumerate(centers):
            if cache is not None:
                u, g = cache.get_or_compute(self, spec, int(c))
            else:
                u, g = self.kernel_response(spec, int(c))
            U += np.outer(u, A[i])
            G += g[:, :, None] * A[i][None, None, :]
        return U, G


class SpectralSphereOracle(Oracle):
    """Exact solver on the unit sphere.

    Kernel inputs use the zonal (Funk-Hecke) expansion up to ``l_zonal``;
    arbitrary sampled inputs are projected onto harmonics up to ``l_proj`` with
    the cloud quadrature.
    """

    kind = "spectral-sphere"
    exact = True

    def __init__(self, cloud: SurfaceCloud, l_proj: int = 24, l_zonal: int = 256):
        _require_sphere(cloud)
        super().__init__(cloud)
        self.l_proj = l_proj
        self.l_zonal = l_zonal
        self._zonal: dict[KernelSpec, ZonalResponse] = {}

    def zonal(self, spec: KernelSpec) -> ZonalResponse:
        if spec not in self._zonal:
            self._zonal[spec] = ZonalResponse.build(spec, self.l_zonal)
        return self._zonal[spec]

    def _respond(self, f):
        Y, _, _ = self.cloud.sh_basis(self.l_proj)
        coeffs = Y.T @ (self.cloud.weights * f)
        return spectral_solution_field(ShField(coeffs)).on_cloud(self.cloud)

    def solve_field(self, f: ShField):
        u, g = solve_lb_spectral(self.cloud, f)
        return _demean(self.cloud, u), g

    def kernel_response(self, spec: KernelSpec, center: int):
        U, G = self.superpose(spec, [center], [1.0])
        return U[:, 0], G[:, :, 0]

    def superpose(self, spec, centers, alpha, cache=None, chunk: int = 512):
        centers = np.asarray(centers, dtype=int)
        A = np.asarray(alpha, dtype=float).reshape(len(centers), -1)
        X = self.cloud.points
        zr = self.zonal(spec)
        U = np.zeros((X.shape[0], A.shape[1]))
        G = np.zeros((X.shape[0], 3, A.shape[1]))
        for s in range(0, len(centers), chunk):
            C = X[centers[s : s + chunk]]
            As = A[s : s + chunk]
            rho = pairwise_distances(X, C)
            g, dg = zr.profile(rho)
            U += g @ As
            with np.errstate(divide="ignore", invalid="ignore"):
                w = dg / rho
            w[rho == 0.0] = 0.0
            # ambient chain rule, projected after summation
            WA = w @ As
            G += X[:, :, None] * WA[:, None, :] - np.einsum("ij,jd,jk->idk", w, C, As, optimize=True)
        for k in range(A.shape[1]):
            G[:, :, k] = self.cloud.project_tangent(G[:, :, k])
            U[:, k] = _demean(self.cloud, U[:, k])
        return U, G


class MeshfreeOracle(Oracle):
    kind = "meshfree"
    exact = True

    def __init__(self, cloud: SurfaceCloud, degree: int = 4):
        super().__init__(cloud)
        self.solver = MeshfreeLaplaceBeltrami(cloud, degree)

    def _respond(self, f):
        sol = self.solver.solve(f)
        return sol.u, sol.grad


def random_sh_field(L: int, rng: np.random.Generator) -> ShField:
    """Mean-zero field with ``c_lm ~ Normal(0, (1/l^2)^2)`` for 1 <= l <= L."""
    ls = degrees(L)
    c = np.zeros(n_coeffs(L))
    nz = ls > 0
    c[nz] = rng.normal(size=nz.sum()) / ls[nz] ** 2
    return ShField(c)


class PerturbedOracle(Oracle):
    """Wraps an exact oracle and adds a fixed smooth error of H1 norm ``delta``.

    The error for a kernel input is seeded by the center coordinates, and for a
    generic input by a hash of its values, so repeated queries see the same
    perturbation.
    """

    kind = "perturbed"
    exact = False

    def __init__(self, inner: Oracle, delta: float, seed: int = 0, band_limit: int = 6):
        if delta < 0:
            raise ValueError("delta must be non-negative")
        super().__init__(inner.cloud)
        self.inner = inner
        self.delta = float(delta)
        self.seed = int(seed)
        self.band_limit = band_limit

    @property
    def key(self) -> str:
        return f"{self.inner.key}+perturbed(delta={self.delta!r},seed={self.seed},L={self.band_limit})"

    def _noise_coeffs(self, token: str) -> np.ndarray:
        digest = int(hashlib.sha256(token.encode()).hexdigest()[:16], 16)
        rng = np.random.default_rng([self.seed, digest])
        return random_sh_field(self.band_limit, rng).coeffs

    def _noise(self, C: np.ndarray):
        """Scaled noise fields for coefficient columns ``C`` ((L+1)^2 x K)."""
        Y, Yt, Yp = self.cloud.sh_basis(self.band_limit)
        E = Y @ C
        E -= self.cloud.weights @ E / self.cloud.weights.sum()
        dT, dP = Yt @ C, Yp @ C
        G = np.stack(
            [self.cloud.chart_gradient(np.stack([dT[:, k], dP[:, k]], 1)) for k in range(C.shape[1])],
            axis=-1,
        )
        w = self.cloud.weights
        norms = np.sqrt(w @ E**2 + w @ (G**2).sum(1))
        scale = np.where(norms > 0, self.delta / np.where(norms > 0, norms, 1.0), 0.0)
        return E * scale, G * scale

    def center_noise(self, centers):
        X = self.cloud.points
        C = np.stack([self._noise_coeffs(_fingerprint("center", X[c])) for c in centers], axis=1)
        return self._noise(C)

    def _respond(self, f):
        u, g = self.inner.respond(f)
        if self.delta == 0.0:
            return u, g
        E, G = self._noise(self._noise_coeffs(_fingerprint("input", f))[:, None])
        return u + E[:, 0], g + G[:, :, 0]

    def kernel_response(self, spec, center):
        u, g = self.inner.kernel_response(spec, center)
        if self.delta == 0.0:
            return u, g
        E, G = self.center_noise([center])
        return u + E[:, 0], g + G[:, :, 0]

    def solve_field(self, f):
        return self.respond(f.on_cloud(self.cloud)[0])

    def superpose(self, spec, centers, alpha, cache=None):
        U, G = self.inner.superpose(spec, centers, alpha, cache)
        if self.delta == 0.0:
            return U, G
        A = np.asarray(alpha, dtype=float).reshape(len(centers), -1)
        for s in range(0, len(centers), 256):
            E, GE = self.center_noise(centers[s : s + 256])
            U += E @ A[s : s + 256]
            G += np.einsum("ndk,kj->ndj", GE, A[s : s + 256])
        return U, G


def perturbed_oracle(inner: Oracle, delta: float, seed: int = 0) -> PerturbedOracle:
    return PerturbedOracle(inner, delta, seed)


# ---------------------------------------------------------------- data


def make_test_functions(max_degrees, per_degree: int, seed: int = 0) -> list[ShField]:
    """Band-limited random fields, ``per_degree`` of them for each maximal degree."""
    rng = np.random.default_rng(seed)
    return [random_sh_field(int(L), rng) for L in max_degrees for _ in range(per_degree)]


@dataclass(frozen=True, eq=False)
class TrainingPair:
    center: int
    f: np.ndarray
    u: np.ndarray
    grad: np.ndarray


def make_training_pairs(oracle: Oracle, spec: KernelSpec, centers, cloud: SurfaceCloud | None = None):
    """(mean-removed kernel input, solution, solution gradient) for each center."""
    if cloud is not None and cloud is not oracle.cloud:
        raise ValueError("oracle is bound to a different cloud")
    pairs = []
    for c in np.asarray(centers, dtype=int):
        f = oracle.kernel_input(spec, int(c))
        u, g = oracle.kernel_response(spec, int(c))
        pairs.append(TrainingPair(int(c), f, u, g))
    return pairs


def write_pairs(directory, pairs, cloud: SurfaceCloud, manifest: dict) -> Path:
    """One CSV per pair (x,y,z,f,u,gx,gy,gz) plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, p in enumerate(pairs):
        name = f"pair_{k:04d}.csv"
        with open(directory / name, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "y", "z", "f", "u", "gx", "gy", "gz"])
            for row in np.column_stack([cloud.points, p.f, p.u, p.grad]):
                wr.writerow([repr(float(v)) for v in row])
        files.append({"file": name, "center": p.center})
    full = dict(manifest)
    full["pairs"] = files
    full.setdefault("mean_removal", "kernel inputs have their quadrature-weighted mean subtracted")
    (directory / "manifest.json").write_text(json.dumps(full, indent=2))
    return directory


def read_pairs(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    pairs = []
    for entry in manifest["pairs"]:
        data = np.loadtxt(directory / entry["file"], delimiter=",", skiprows=1, ndmin=2)
        pairs.append(TrainingPair(int(entry["center"]), data[:, 3], data[:, 4], data[:, 5:8]))
    return manifest, pairs
