"""Real orthonormal spherical harmonics and band-limited fields.

Coefficients are stored flat with index ``l*l + l + m`` for ``-l <= m <= l``.
The real basis is

    Y_lm = sqrt(2) N_l|m| P_l|m|(cos t) cos(m p)      m > 0
    Y_l0 = N_l0 P_l0(cos t)
    Y_lm = sqrt(2) N_l|m| P_l|m|(cos t) sin(|m| p)    m < 0

without the Condon-Shortley phase; it is orthonormal on the unit sphere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import sph_legendre_p_all

__all__ = [
    "n_coeffs",
    "lm_index",
    "degrees",
    "real_sh_basis",
    "ShField",
    "legendre_series",
]


def n_coeffs(L: int) -> int:
    return (L + 1) ** 2


def lm_index(l: int, m: int) -> int:
    if abs(m) > l:
        raise ValueError(f"|m| > l for (l, m) = ({l}, {m})")
    return l * l + l + m


def degrees(L: int) -> np.ndarray:
    """Degree ``l`` of every flat coefficient slot up to band limit ``L``."""
    return np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])


def real_sh_basis(L: int, theta, phi, derivatives: bool = False):
    """Evaluate all real harmonics up to degree ``L``.

    Returns ``Y`` of shape ``(npoints, (L+1)**2)``; with ``derivatives`` also
    ``dY/dtheta`` and ``dY/dphi`` of the same shape.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    P = sph_legendre_p_all(L, L, theta, diff_n=1)
    val, dval = P[0], P[1]
    npts = theta.size
    Y = np.empty((npts, n_coeffs(L)))
    Yt = np.empty_like(Y) if derivatives else None
    Yp = np.empty_like(Y) if derivatives else None
    sqrt2 = np.sqrt(2.0)
    for m in range(L + 1):
        sign = -1.0 if m % 2 else 1.0  # undo Condon-Shortley
        cos_m = np.cos(m * phi)
        sin_m = np.sin(m * phi)
        for l in range(m, L + 1):
            p = sign * val[l, m]
            dp = sign * dval[l, m]
            if m == 0:
                Y[:, lm_index(l, 0)] = p
                if derivatives:
                    Yt[:, lm_index(l, 0)] = dp
                    Yp[:, lm_index(l, 0)] = 0.0
                continue
            ip, im = lm_index(l, m), lm_index(l, -m)
            Y[:, ip] = sqrt2 * p * cos_m
            Y[:, im] = sqrt2 * p * sin_m
            if derivatives:
                Yt[:, ip] = sqrt2 * dp * cos_m
                Yt[:, im] = sqrt2 * dp * sin_m
                Yp[:, ip] = -sqrt2 * m * p * sin_m
                Yp[:, im] = sqrt2 * m * p * cos_m
    if derivatives:
        return Y, Yt, Yp
    return Y


@dataclass(frozen=True, eq=False)
class ShField:
    """Band-limited real spherical-harmonic expansion ``sum c_lm Y_lm``."""

    coeffs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).ravel()
        L = int(round(np.sqrt(c.size))) - 1
        if n_coeffs(L) != c.size:
            raise ValueError(f"{c.size} coefficients is not a full band (L+1)^2")
        object.__setattr__(self, "coeffs", c)

    @property
    def L(self) -> int:
        return int(round(np.sqrt(self.coeffs.size))) - 1

    @classmethod
    def zeros(cls, L: int) -> "ShField":
        return cls(np.zeros(n_coeffs(L)))

    @classmethod
    def single(cls, l: int, m: int, L: int | None = None, amplitude: float = 1.0):
        out = np.zeros(n_coeffs(max(l, L or 0)))
        out[lm_index(l, m)] = amplitude
        return cls(out)

    def padded(self, L: int) -> "ShField":
        if L < self.L:
            return ShField(self.coeffs[: n_coeffs(L)].copy())
        out = np.zeros(n_coeffs(L))
        out[: self.coeffs.size] = self.coeffs
        return ShField(out)

    def __add__(self, other: "ShField") -> "ShField":
        L = max(self.L, other.L)
        return ShField(self.padded(L).coeffs + other.padded(L).coeffs)

    def __mul__(self, a: float) -> "ShField":
        return ShField(a * self.coeffs)

    __rmul__ = __mul__

    def evaluate(self, theta, phi) -> np.ndarray:
        return real_sh_basis(self.L, theta, phi) @ self.coeffs

    def param_derivatives(self, theta, phi):
        """Values and partial derivatives in (theta, phi)."""
        Y, Yt, Yp = real_sh_basis(self.L, theta, phi, derivatives=True)
        return Y @ self.coeffs, Yt @ self.coeffs, Yp @ self.coeffs

    def on_cloud(self, cloud):
        """Values and surface gradients (N x 3) at the points of a SurfaceCloud.

        The gradient is ``d_i f g^ij e_j`` in the (theta, phi) chart. Cached per
        cloud instance.
        """
        key = id(cloud)
        hit = self._cache.get(key)
        if hit is not None and hit[0] is cloud:
            return hit[1], hit[2]
        Y, Yt, Yp = cloud.sh_basis(self.L)
        f = Y @ self.coeffs
        df = np.stack([Yt @ self.coeffs, Yp @ self.coeffs], axis=1)
        grad = cloud.chart_gradient(df)
        self._cache.clear()
        self._cache[key] = (cloud, f, grad)
        return f, grad

    def to_list(self) -> list:
        return self.coeffs.tolist()


def legendre_series(coef, t, derivative: bool = False):
    """Evaluate ``sum_l coef[l] P_l(t)`` (and ``sum_l coef[l] P_l'(t)``) by recurrence."""
    coef = np.asarray(coef, dtype=float)
    t = np.asarray(t, dtype=float)
    p_prev = np.ones_like(t)
    p = t.copy()
    dp_prev = np.zeros_like(t)
    dp = np.ones_like(t)
    s = coef[0] * p_prev
    ds = np.zeros_like(t)
    if coef.size > 1:
        s = s + coef[1] * p
        ds = ds + coef[1] * dp
    for l in range(1, coef.size - 1):
        p_next = ((2 * l + 1) * t * p - l * p_prev) / (l + 1)
        # P'_{l+1} = P'_{l-1} + (2l+1) P_l
        dp_next = dp_prev + (2 * l + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
        s = s + coef[l + 1] * p
        if derivative:
            ds = ds + coef[l + 1] * dp
    if derivative:
        return s, ds
    return s
