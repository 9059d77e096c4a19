"""Input-space defenses applied to adversarial images before evaluation.

``jpeg-like`` is the quantization core of baseline JPEG only: per channel,
level shift by 128 on the 0..255 scale, 8x8 orthonormal DCT, quantization with
the standard luminance table scaled by the IJG quality rule, dequantization and
inverse DCT. There is no colour transform, chroma subsampling or entropy coding.

``center-crop`` resamples the cropped window back to full size with bilinear
interpolation on half-pixel-centred coordinates: output pixel ``i`` samples the
crop at ``(i + 0.5) * crop / size - 0.5``, clamped to the crop's edge pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .spectral import dct_matrix
from .validation import DomainError, check_images, check_unit_range

DEFENSE_KINDS = ("jpeg-like", "gaussian", "center-crop")

LUMINANCE_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class DefenseSpec:
    kind: str = "jpeg-like"
    quality: int = 75
    sigma: float = 0.5
    kernel: int = 5
    ratio: float = 0.9

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise DomainError(f"unknown defense kind {self.kind!r}; expected one of {DEFENSE_KINDS}")
        if not 1 <= self.quality <= 100:
            raise DomainError("quality must lie in [1, 100]")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DomainError(f"kernel size must be a positive odd integer, got {self.kernel}")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if not 0 < self.ratio <= 1:
            raise DomainError(f"ratio must lie in (0, 1], got {self.ratio}")

    @property
    def label(self) -> str:
        if self.kind == "jpeg-like":
            return f"jpeg-q{self.quality}"
        if self.kind == "gaussian":
            return f"gaussian-k{self.kernel}-s{self.sigma:g}"
        return f"center-crop-r{self.ratio:g}"


def quantization_table(quality: int) -> np.ndarray:
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    return np.clip(np.floor((LUMINANCE_TABLE * scale + 50) / 100), 1, 255)


def _jpeg_like(image: np.ndarray, quality: int) -> np.ndarray:
    h, w, c = image.shape
    ph, pw = -h % 8, -w % 8
    x = np.pad(image * 255.0 - 128.0, ((0, ph), (0, pw), (0, 0)), mode="edge")
    H, W = x.shape[:2]
    blocks = x.reshape(H // 8, 8, W // 8, 8, c).transpose(0, 2, 4, 1, 3)
    D = dct_matrix(8)
    table = quantization_table(quality)
    coeffs = D @ blocks @ D.T
    coeffs = np.round(coeffs / table) * table
    rec = (D.T @ coeffs @ D).transpose(0, 3, 1, 4, 2).reshape(H, W, c)
    return (rec[:h, :w] + 128.0) / 255.0


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - size // 2
    k1 = np.exp(-(r**2) / (2 * sigma**2))
    k = np.outer(k1, k1)
    return k / k.sum()


def _gaussian(image: np.ndarray, size: int, sigma: float) -> np.ndarray:
    r = size // 2
    k = gaussian_kernel(size, sigma)
    padded = np.pad(image, ((r, r), (r, r), (0, 0)), mode="edge")
    h, w, _ = image.shape
    out = np.zeros_like(image)
    for dy in range(size):
        for dx in range(size):
            out += k[dy, dx] * padded[dy : dy + h, dx : dx + w]
    return out


def _resample_axis(n_out: int, n_in: int):
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def _center_crop(image: np.ndarray, ratio: float) -> np.ndarray:
    h, w, _ = image.shape
    ch, cw = max(1, math.floor(ratio * h)), max(1, math.floor(ratio * w))
    top, left = (h - ch) // 2, (w - cw) // 2
    crop = image[top : top + ch, left : left + cw]
    y0, y1, fy = _resample_axis(h, ch)
    x0, x1, fx = _resample_axis(w, cw)
    rows = crop[y0] * (1 - fy)[:, None, None] + crop[y1] * fy[:, None, None]
    return rows[:, x0] * (1 - fx)[None, :, None] + rows[:, x1] * fx[None, :, None]


def defend(image, spec: DefenseSpec) -> np.ndarray:
    image = check_unit_range(image)
    if spec.kind == "jpeg-like":
        out = _jpeg_like(image, spec.quality)
    elif spec.kind == "gaussian":
        out = _gaussian(image, spec.kernel, spec.sigma)
    else:
        out = _center_crop(image, spec.ratio)
    return np.clip(out, 0.0, 1.0)


class ImageDefense(TransformerMixin, BaseEstimator):
    def __init__(self, kind="jpeg-like", quality=75, sigma=0.5, kernel=5, ratio=0.9):
        self.kind = kind
        self.quality = quality
        self.sigma = sigma
        self.kernel = kernel
        self.ratio = ratio

    def fit(self, X=None, y=None):
        self.spec_ = DefenseSpec(**self.get_params())
        return self

    def transform(self, X):
        spec = getattr(self, "spec_", None) or DefenseSpec(**self.get_params())
        return np.stack([defend(img, spec) for img in check_images(X)])
