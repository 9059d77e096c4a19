"""Token-wise and planar DCT machinery and the radial gradient filter family.

All transforms use the orthonormal Type-II DCT, realized as a dense basis
matrix ``D`` with ``D[k, n] = s_k * cos(pi * (n + 1/2) * k / N)``, where
``s_0 = sqrt(1/N)`` and ``s_k = sqrt(2/N)`` otherwise. The inverse is ``D.T``.
At the sizes used here (a few hundred tokens, 224 pixels at most) a matrix
product is faster than an FFT round trip and is exact to a few ulps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import DomainError, as_finite_array

FILTER_KINDS = ("polynomial", "reciprocal", "sigmoid", "band-clip", "top-k-sparse", "identity")
SMOOTH_KINDS = ("polynomial", "reciprocal", "sigmoid")


@lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis of size ``n x n`` (rows are frequencies)."""
    if n < 1:
        raise DomainError(f"transform length must be >= 1, got {n}")
    k = np.arange(n)[:, None]
    t = np.arange(n)[None, :]
    mat = np.cos(np.pi * (t + 0.5) * k / n) * math.sqrt(2.0 / n)
    mat[0] = math.sqrt(1.0 / n)
    mat.setflags(write=False)
    return mat


@dataclass(frozen=True)
class SpectralStack:
    """Token-wise DCT coefficients of a ``P x d`` embedding matrix.

    ``energy[k]`` is the Euclidean norm of ``coeffs[k]``.
    """

    coeffs: np.ndarray
    energy: np.ndarray = field(repr=False)

    @classmethod
    def from_coeffs(cls, coeffs) -> "SpectralStack":
        coeffs = as_finite_array(coeffs, 2, "coeffs")
        return cls(coeffs, np.linalg.norm(coeffs, axis=1))

    @property
    def n_tokens(self) -> int:
        return self.coeffs.shape[0]


def dct_tokens(embeddings) -> SpectralStack:
    """DCT along the token axis of a ``P x d`` matrix, each column independently."""
    emb = as_finite_array(embeddings, 2, "embeddings")
    return SpectralStack.from_coeffs(dct_matrix(emb.shape[0]) @ emb)


def idct_tokens(stack: SpectralStack) -> np.ndarray:
    coeffs = as_finite_array(stack.coeffs, 2, "coeffs")
    return dct_matrix(coeffs.shape[0]).T @ coeffs


def dct2(plane) -> np.ndarray:
    """Separable orthonormal 2-D DCT-II of an ``H x W`` plane (or a stack ``... x H x W``)."""
    x = as_finite_array(plane, (2, 3, 4), "plane")
    h, w = x.shape[-2:]
    return dct_matrix(h) @ x @ dct_matrix(w).T


def idct2(plane) -> np.ndarray:
    x = as_finite_array(plane, (2, 3, 4), "plane")
    h, w = x.shape[-2:]
    return dct_matrix(h).T @ x @ dct_matrix(w)


def radial_distance(u: int, v: int, height: int, width: int) -> float:
    """Normalized distance of DCT index ``(u, v)`` from the DC term.

    The denominator is ``sqrt(H^2 + W^2)``, so valid indices stay strictly below 1.

    >>> radial_distance(3, 4, 6, 8)
    0.5
    """
    if height < 1 or width < 1:
        raise DomainError("plane size must be positive")
    if not (0 <= u < height and 0 <= v < width):
        raise DomainError(f"index ({u}, {v}) outside a {height}x{width} plane")
    return math.hypot(u, v) / math.hypot(height, width)


@lru_cache(maxsize=64)
def radial_grid(height: int, width: int) -> np.ndarray:
    u = np.arange(height, dtype=np.float64)[:, None]
    v = np.arange(width, dtype=np.float64)[None, :]
    grid = np.sqrt(u**2 + v**2) / math.hypot(height, width)
    grid.setflags(write=False)
    return grid


@dataclass(frozen=True)
class RadialFilter:
    """A gradient-spectrum filter.

    Smooth kinds multiply each 2-D DCT coefficient by ``phi(d)``:

    * ``polynomial``: ``(1 - d) ** p``
    * ``reciprocal``: ``1 / (1 + beta * d)``
    * ``sigmoid``: ``1 / (1 + exp(beta * (d - center)))``

    ``band-clip`` splits the plane into low/mid/high bands at ``tau_low`` and
    ``tau_high`` and clips each band ``B`` to ``mean_B +/- gamma_B * std_B``.
    ``top-k-sparse`` keeps the ``top_k[B]`` percent largest-magnitude coefficients
    of each band and zeroes the rest.
    """

    kind: str = "polynomial"
    p: float = 1.5
    beta: float = 4.0
    center: float = 0.5
    tau_low: float = 1.0 / 3.0
    tau_high: float = 2.0 / 3.0
    gammas: tuple[float, float, float] = (1.5, 1.0, 0.5)
    top_k: tuple[float, float, float] = (50.0, 30.0, 30.0)

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise DomainError(f"unknown filter kind {self.kind!r}; expected one of {FILTER_KINDS}")
        if self.kind == "polynomial" and not self.p >= 0:
            raise DomainError("polynomial filter requires p >= 0")
        if self.kind in ("reciprocal", "sigmoid") and not self.beta >= 0:
            raise DomainError(f"{self.kind} filter requires beta >= 0")
        if self.kind in ("band-clip", "top-k-sparse"):
            if not 0.0 < self.tau_low < self.tau_high < 1.0:
                raise DomainError("band thresholds must satisfy 0 < tau_low < tau_high < 1")
            if len(self.gammas) != 3 or min(self.gammas) < 0:
                raise DomainError("gammas must be three non-negative numbers")
            if len(self.top_k) != 3 or not all(0.0 <= k <= 100.0 for k in self.top_k):
                raise DomainError("top_k must be three percentages in [0, 100]")
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        object.__setattr__(self, "top_k", tuple(float(k) for k in self.top_k))

    def factor(self, d):
        """Modulation ``phi(d)`` for the smooth kinds (and 1 for identity)."""
        d = np.asarray(d, dtype=np.float64)
        if self.kind == "polynomial":
            return np.power(1.0 - d, self.p)
        if self.kind == "reciprocal":
            return 1.0 / (1.0 + self.beta * d)
        if self.kind == "sigmoid":
            return 1.0 / (1.0 + np.exp(self.beta * (d - self.center)))
        if self.kind == "identity":
            return np.ones_like(d)
        raise DomainError(f"{self.kind} is not a radial modulation")


def band_index(height: int, width: int, tau_low: float, tau_high: float) -> np.ndarray:
    d = radial_grid(height, width)
    return np.where(d < tau_low, 0, np.where(d < tau_high, 1, 2))


def _band_clip(coeffs: np.ndarray, filt: RadialFilter) -> np.ndarray:
    bands = band_index(*coeffs.shape[-2:], filt.tau_low, filt.tau_high)
    out = coeffs.copy()
    for b, gamma in enumerate(filt.gammas):
        mask = bands == b
        if not mask.any():
            continue
        vals = coeffs[..., mask]
        mu = vals.mean(axis=-1, keepdims=True)
        sd = vals.std(axis=-1, keepdims=True)
        out[..., mask] = np.clip(vals, mu - gamma * sd, mu + gamma * sd)
    return out


def _top_k_sparse(coeffs: np.ndarray, filt: RadialFilter) -> np.ndarray:
    h, w = coeffs.shape[-2:]
    bands = band_index(h, w, filt.tau_low, filt.tau_high).ravel()
    flat = coeffs.reshape(-1, h * w)
    out = np.zeros_like(flat)
    order_idx = np.arange(h * w)
    for b, pct in enumerate(filt.top_k):
        members = order_idx[bands == b]
        if members.size == 0:
            continue
        keep = math.ceil(pct / 100.0 * members.size)
        if keep == 0:
            continue
        for row in range(flat.shape[0]):
            mags = np.abs(flat[row, members])
            # lexsort: last key is primary; ties fall back to the (u, v) raster index
            order = np.lexsort((members, -mags))
            kept = members[order[:keep]]
            out[row, kept] = flat[row, kept]
    return out.reshape(coeffs.shape)


def modulate_spectrum(coeffs, filt: RadialFilter) -> np.ndarray:
    """Apply ``filt`` to 2-D DCT coefficients laid out as ``... x H x W``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    h, w = coeffs.shape[-2:]
    if filt.kind == "identity" or (h == 1 and w == 1):
        return coeffs.copy()
    if filt.kind in SMOOTH_KINDS:
        return coeffs * filt.factor(radial_grid(h, w))
    if filt.kind == "band-clip":
        return _band_clip(coeffs, filt)
    return _top_k_sparse(coeffs, filt)


def apply_fgr(gradient, filt: RadialFilter) -> np.ndarray:
    """Regularize a ``B x C x H x W`` gradient plane by plane in the DCT domain."""
    grad = as_finite_array(gradient, 4, "gradient")
    if not isinstance(filt, RadialFilter):
        raise DomainError("filter must be a RadialFilter")
    if filt.kind == "identity" or grad.shape[-2:] == (1, 1):
        return grad.copy()
    return idct2(modulate_spectrum(dct2(grad), filt))


class TokenDCT(TransformerMixin, BaseEstimator):
    """Token-axis DCT of a ``P x d`` embedding matrix as a stateless transformer."""

    def fit(self, X, y=None):
        X = as_finite_array(X, 2, "X")
        self.n_tokens_ = X.shape[0]
        return self

    def transform(self, X):
        return dct_tokens(X).coeffs

    def inverse_transform(self, X):
        return idct_tokens(SpectralStack.from_coeffs(X))


class FrequencyGradientRegularizer(TransformerMixin, BaseEstimator):
    """Low-pass (or clipping) filter for ``B x C x H x W`` input gradients."""

    def __init__(
        self,
        kind="polynomial",
        p=1.5,
        beta=4.0,
        center=0.5,
        tau_low=1.0 / 3.0,
        tau_high=2.0 / 3.0,
        gammas=(1.5, 1.0, 0.5),
        top_k=(50.0, 30.0, 30.0),
    ):
        self.kind = kind
        self.p = p
        self.beta = beta
        self.center = center
        self.tau_low = tau_low
        self.tau_high = tau_high
        self.gammas = gammas
        self.top_k = top_k

    def fit(self, X=None, y=None):
        self.filter_ = RadialFilter(**self.get_params())
        return self

    def transform(self, X):
        filt = getattr(self, "filter_", None) or RadialFilter(**self.get_params())
        return apply_fgr(X, filt)
