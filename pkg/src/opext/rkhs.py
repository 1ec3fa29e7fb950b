"""Regularized kernel interpolation: Gram systems, solves, power function, error norms."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .kernels import KernelSpec, kernel_gradient_sum, kernel_matrix, pairwise_distances

__all__ = [
    "GramSystem",
    "Interpolant",
    "IllConditionedError",
    "assemble_gram",
    "solve_regularized",
    "eval_interpolant",
    "eval_interpolant_gradient",
    "power_function",
    "condition_number",
    "ConditionReport",
    "error_norms",
    "weighted_norm",
    "DEFAULT_LAMBDA",
]

DEFAULT_LAMBDA = 1e-10
DUPLICATE_LAMBDA_FLOOR = 1e-12


class IllConditionedError(np.linalg.LinAlgError):
    """Cholesky failed on an unregularized Gram matrix."""


@dataclass(frozen=True, eq=False)
class GramSystem:
    centers: np.ndarray
    spec: KernelSpec
    A: np.ndarray
    lam: float = 0.0
    has_duplicates: bool = False

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @cached_property
    def extreme_eigenvalues(self) -> tuple[float, float]:
        ev = sla.eigh(self.A, eigvals_only=True, check_finite=False)
        return float(ev[0]), float(ev[-1])


@dataclass(frozen=True, eq=False)
class Interpolant:
    centers: np.ndarray
    spec: KernelSpec
    alpha: np.ndarray
    lam: float
    residual: float = 0.0

    @property
    def l1(self) -> float:
        return float(np.abs(self.alpha).sum())

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "centers": self.centers.tolist(),
            "alpha": self.alpha.tolist(),
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Interpolant":
        return cls(
            centers=np.asarray(d["centers"], dtype=float),
            spec=KernelSpec.from_dict(d["spec"]),
            alpha=np.asarray(d["alpha"], dtype=float),
            lam=float(d["lambda"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def assemble_gram(spec: KernelSpec, X) -> GramSystem:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    A = kernel_matrix(spec, X)
    dup = False
    if X.shape[0] > 1:
        D = pairwise_distances(X, X)
        np.fill_diagonal(D, np.inf)
        dup = bool((D == 0.0).any())
        if dup:
            warnings.warn("duplicate centers in Gram system; lambda floored at 1e-12", stacklevel=2)
    return GramSystem(X, spec, A, 0.0, dup)


def solve_regularized(sys: GramSystem, b, lam: float = DEFAULT_LAMBDA) -> Interpolant:
    """Solve ``(A + lam I) alpha = b`` by Cholesky.

    At ``lam == 0`` a failed factorization raises :class:`IllConditionedError`.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if sys.has_duplicates:
        lam = max(lam, DUPLICATE_LAMBDA_FLOOR)
    b = np.asarray(b, dtype=float)
    M = sys.A + lam * np.eye(sys.n)
    try:
        cf = sla.cho_factor(M, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        if lam == 0.0:
            raise IllConditionedError(
                "Gram matrix is not numerically positive definite; use lambda > 0"
            ) from exc
        raise
    alpha = sla.cho_solve(cf, b, check_finite=False)
    bnorm = np.linalg.norm(b)
    res = np.linalg.norm(M @ alpha - b) / bnorm if bnorm > 0 else 0.0
    return Interpolant(sys.centers, sys.spec, alpha, lam, float(res))


def eval_interpolant(itp: Interpolant, points, chunk: int = 4096) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    alpha = itp.alpha
    out = np.empty((points.shape[0],) + alpha.shape[1:])
    for s in range(0, points.shape[0], chunk):
        out[s : s + chunk] = kernel_matrix(itp.spec, points[s : s + chunk], itp.centers) @ alpha
    return out


def eval_interpolant_gradient(itp: Interpolant, points, cloud=None) -> np.ndarray:
    """Ambient gradient of the expansion; tangential when a cloud is supplied.

    With ``cloud`` given, ``points`` must be the cloud points (or None).
    """
    if points is None:
        points = cloud.points
    grad = kernel_gradient_sum(itp.spec, points, itp.centers, itp.alpha)
    if cloud is not None:
        if grad.ndim == 3:
            grad = np.stack([cloud.project_tangent(grad[..., j]) for j in range(grad.shape[2])], -1)
        else:
            grad = cloud.project_tangent(grad)
    return grad


def power_function(spec: KernelSpec, X, x, jitter: float = 0.0) -> np.ndarray:
    """``sqrt(k(x,x) - k_x^T A^-1 k_x)`` evaluated at each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    phi0 = spec.phi0
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.full(x.shape[0], np.sqrt(phi0))
    X = np.atleast_2d(X)
    A = kernel_matrix(spec, X) + jitter * np.eye(X.shape[0])
    try:
        Lc = sla.cholesky(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("singular Gram matrix; pass a jitter") from exc
    Kx = kernel_matrix(spec, X, x)
    V = sla.solve_triangular(Lc, Kx, lower=True, check_finite=False)
    p2 = phi0 - (V * V).sum(0)
    return np.sqrt(np.clip(p2, 0.0, None))


@dataclass(frozen=True)
class ConditionReport:
    kappa: float
    lam_min: float
    lam_max: float
    lam: float

    @property
    def bound(self) -> float:
        """``1 + lam_max / lam`` (inf at lam = 0)."""
        return np.inf if self.lam == 0 else 1.0 + self.lam_max / self.lam


def condition_number(sys: GramSystem, lam: float = 0.0) -> ConditionReport:
    """``(lam + lam_max) / (lam + lam_min)`` from the extreme eigenvalues of ``A``."""
    lo, hi = sys.extreme_eigenvalues
    den = lam + lo
    kappa = np.inf if den <= 0 else (lam + hi) / den
    return ConditionReport(float(kappa), float(lo), float(hi), float(lam))


def weighted_norm(values, weights) -> float:
    v = np.asarray(values, dtype=float)
    if v.ndim > 1:
        v2 = (v * v).reshape(v.shape[0], -1).sum(1)
    else:
        v2 = v * v
    return float(np.sqrt(np.asarray(weights) @ v2))


def h1_norm(u, grad, weights) -> float:
    return float(np.hypot(weighted_norm(u, weights), weighted_norm(grad, weights)))


def error_norms(u_true, u_hat, grad_true, grad_hat, weights) -> dict:
    """Relative weighted L2, gradient-L2 and H1 errors."""
    u_true = np.asarray(u_true, dtype=float)
    grad_true = np.asarray(grad_true, dtype=float)
    nu = weighted_norm(u_true, weights)
    ng = weighted_norm(grad_true, weights)
    if nu == 0.0 or ng == 0.0:
        raise ValueError("zero reference norm in relative error")
    eu = weighted_norm(u_true - np.asarray(u_hat), weights)
    eg = weighted_norm(grad_true - np.asarray(grad_hat), weights)
    return {
        "rel_L2": eu / nu,
        "rel_gradL2": eg / ng,
        "rel_H1": float(np.sqrt((eu**2 + eg**2) / (nu**2 + ng**2))),
    }
