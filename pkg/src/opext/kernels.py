"""Radial kernel families with Sobolev native-space metadata.

Every kernel is written ``k(x, y) = Phi(sigma * ||x - y||)`` with the radial
profiles below (unnormalized, so ``Phi(0) = 1`` except Wendland ``k=2`` where
``Phi(0) = 3``).

==================  =============================================  ==============
family              Phi(r)                                         H^s(R^d) order
==================  =============================================  ==============
gaussian            exp(-r^2)                                      --
matern nu=1/2       exp(-r)                                        (d+1)/2
matern nu=3/2       (1 + sqrt(3) r) exp(-sqrt(3) r)                (d+3)/2
matern nu=5/2       (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r)    (d+5)/2
wendland k=0        (1 - r)_+^l                                    (d+1)/2
wendland k=1        (1 - r)_+^(l+1) ((l+1) r + 1)                  (d+3)/2
wendland k=2        (1 - r)_+^(l+2) ((l+1)(l+3) r^2 + 3(l+2) r + 3)  (d+5)/2
==================  =============================================  ==============

with the Wendland exponent ``l = floor(d/2) + 1 + k``. Restricting a kernel to
an ``m``-dimensional submanifold lowers the order by ``(d - m)/2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

__all__ = [
    "KernelSpec",
    "NativeSpaceInfo",
    "eval_phi",
    "eval_dphi",
    "eval_kernel",
    "grad_kernel",
    "kernel_matrix",
    "kernel_gradient_sum",
    "native_space",
    "gaussian",
    "matern",
    "wendland",
]

FAMILIES = ("gaussian", "matern", "wendland")
MATERN_NUS = (Fraction(1, 2), Fraction(3, 2), Fraction(5, 2))
WENDLAND_KS = (0, 1, 2)

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """A radial kernel family plus its shape parameter.

    ``param`` is the Matern smoothness ``nu`` or the Wendland order ``k``; it
    is ignored (and normalized to 0) for the Gaussian.
    """

    family: str
    param: Fraction = Fraction(0)
    sigma: float = 1.0
    ambient_dim: int = 3

    def __post_init__(self):
        family = self.family.lower()
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be >= 1")
        object.__setattr__(self, "sigma", float(self.sigma))
        param = Fraction(self.param).limit_denominator(16)
        if family == "gaussian":
            param = Fraction(0)
        elif family == "matern" and param not in MATERN_NUS:
            raise ValueError(f"Matern nu must be one of 1/2, 3/2, 5/2, got {param}")
        elif family == "wendland" and param not in WENDLAND_KS:
            raise ValueError(f"Wendland k must be 0, 1 or 2, got {param}")
        object.__setattr__(self, "param", param)

    @property
    def wendland_exponent(self) -> int:
        if self.family != "wendland":
            raise AttributeError("only Wendland kernels have an exponent")
        return self.ambient_dim // 2 + 1 + int(self.param)

    @property
    def phi0(self) -> float:
        return float(eval_phi(self, 0.0))

    @property
    def support_radius(self) -> float:
        """Ambient distance beyond which the kernel vanishes (inf if never)."""
        return 1.0 / self.sigma if self.family == "wendland" else np.inf

    @property
    def label(self) -> str:
        if self.family == "gaussian":
            return "Gaussian"
        if self.family == "matern":
            return f"Matern nu={self.param}"
        return f"Wendland k={self.param}"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "nu_or_k": str(self.param),
            "sigma": self.sigma,
            "ambient_dim": self.ambient_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(
            family=d["family"],
            param=Fraction(str(d.get("nu_or_k", 0))),
            sigma=float(d["sigma"]),
            ambient_dim=int(d.get("ambient_dim", 3)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def gaussian(sigma: float, ambient_dim: int = 3) -> KernelSpec:
    return KernelSpec("gaussian", 0, sigma, ambient_dim)


def matern(nu, sigma: float, ambient_dim: int = 3) -> KernelSpec:
    return KernelSpec("matern", Fraction(nu), sigma, ambient_dim)


def wendland(k: int, sigma: float, ambient_dim: int = 3) -> KernelSpec:
    return KernelSpec("wendland", k, sigma, ambient_dim)


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radial argument must be non-negative")
    return r


def eval_phi(spec: KernelSpec, r):
    """Unscaled radial profile ``Phi(r)``; ``sigma`` is applied by callers."""
    r = _check_r(r)
    if spec.family == "gaussian":
        return np.exp(-r * r)
    if spec.family == "matern":
        nu = spec.param
        if nu == Fraction(1, 2):
            return np.exp(-r)
        if nu == Fraction(3, 2):
            return (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)
        return (1.0 + _SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-_SQRT5 * r)
    l = spec.wendland_exponent
    k = int(spec.param)
    t = np.clip(1.0 - r, 0.0, None)
    if k == 0:
        return t**l
    if k == 1:
        return t ** (l + 1) * ((l + 1) * r + 1.0)
    return t ** (l + 2) * ((l + 1) * (l + 3) * r * r + 3 * (l + 2) * r + 3.0)


def eval_dphi(spec: KernelSpec, r):
    """Derivative ``Phi'(r)`` (one-sided at r=0 for the non-smooth profiles)."""
    r = _check_r(r)
    if spec.family == "gaussian":
        return -2.0 * r * np.exp(-r * r)
    if spec.family == "matern":
        nu = spec.param
        if nu == Fraction(1, 2):
            return -np.exp(-r)
        if nu == Fraction(3, 2):
            return -3.0 * r * np.exp(-_SQRT3 * r)
        return -(5.0 / 3.0) * r * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    l = spec.wendland_exponent
    k = int(spec.param)
    t = np.clip(1.0 - r, 0.0, None)
    if k == 0:
        return -l * t ** (l - 1)
    if k == 1:
        return -(l + 1) * (l + 2) * r * t**l
    q = (l + 1) * (l + 3) * r * r + 3 * (l + 2) * r + 3.0
    dq = 2 * (l + 1) * (l + 3) * r + 3 * (l + 2)
    return -(l + 2) * t ** (l + 1) * q + t ** (l + 2) * dq


def _pair(spec: KernelSpec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """``k(x, y) = Phi(sigma ||x - y||)``; also the restricted kernel on a surface."""
    x, y = _pair(spec, x, y)
    return float(eval_phi(spec, spec.sigma * np.linalg.norm(x - y)))


def grad_kernel(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of ``k(., y)`` at ``x``. Zero at ``x == y`` by convention."""
    x, y = _pair(spec, x, y)
    diff = x - y
    r = np.linalg.norm(diff)
    if r == 0.0:
        return np.zeros_like(diff)
    return eval_dphi(spec, spec.sigma * r) * spec.sigma * diff / r


def pairwise_distances(X, Y) -> np.ndarray:
    """Euclidean distance matrix, exact zeros on identical rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    np.maximum(sq, 0.0, out=sq)
    d = np.sqrt(sq)
    # the expansion above loses ~1e-8 near zero; recompute tiny entries exactly
    close = d < 1e-6
    if close.any():
        i, j = np.nonzero(close)
        d[i, j] = np.linalg.norm(X[i] - Y[j], axis=1)
    return d


def kernel_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Matrix ``K[i, j] = k(X[i], Y[j])``. Symmetric exactly when ``Y`` is None."""
    if Y is None:
        X = np.asarray(X, dtype=float)
        K = eval_phi(spec, spec.sigma * pairwise_distances(X, X))
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, spec.phi0)
        return K
    return eval_phi(spec, spec.sigma * pairwise_distances(X, Y))


def kernel_gradient_sum(spec: KernelSpec, X, Y, coef, chunk: int = 2048) -> np.ndarray:
    """``sum_j coef[j] * grad_x k(X[i], Y[j])`` for every row of ``X``.

    ``coef`` may be a vector (returns ``(n, d)``) or a matrix with one column per
    expansion (returns ``(n, d, ncol)``).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    coef = np.asarray(coef, dtype=float)
    squeeze = coef.ndim == 1
    C = coef[:, None] if squeeze else coef
    out = np.empty((X.shape[0], X.shape[1], C.shape[1]))
    for s in range(0, X.shape[0], chunk):
        xs = X[s : s + chunk]
        r = pairwise_distances(xs, Y)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = eval_dphi(spec, spec.sigma * r) * spec.sigma / r
        w[r == 0.0] = 0.0
        # grad_i = sum_j w_ij (x_i - y_j) c_j
        wc = w @ C
        out[s : s + chunk] = xs[:, :, None] * wc[:, None, :] - np.einsum(
            "ij,jd,jc->idc", w, Y, C, optimize=True
        )
    return out[..., 0] if squeeze else out


@dataclass(frozen=True)
class NativeSpaceInfo:
    ambient_order: Optional[Fraction]
    manifold_order: Optional[Fraction]
    ambient_dim: int
    manifold_dim: int


def native_space(spec: KernelSpec, d: int, m: int) -> NativeSpaceInfo:
    """Sobolev orders of the native space in ``R^d`` and on an ``m``-manifold."""
    if not 1 <= m <= d:
        raise ValueError("need 1 <= m <= d")
    if spec.family == "gaussian":
        return NativeSpaceInfo(None, None, d, m)
    if spec.family == "matern":
        s = (d + 2 * spec.param) / 2
    else:
        s = Fraction(d + 2 * int(spec.param) + 1, 2)
    s = Fraction(s)
    return NativeSpaceInfo(s, s - Fraction(d - m, 2), d, m)
