"""Seeded toy vision encoders with hand-written reverse mode.

Pixels are centred by ``pixel_mean`` before patching (0.5 by default, the usual
ViT input normalization); with ``pixel_mean=0`` the patch embedding is bias-free
and the linear kind is exactly linear. Two architectures stand in for ViT surrogates:

``linear-patch``
    ``Z = X_p @ W_e.T`` (non-overlapping patches, flattened in ``(row, col, channel)``
    order), patches ``E = Z``, global feature ``g = G @ mean_rows(E)``.

``attention-1layer``
    ``Z`` as above, then one single-head softmax self-attention block with a
    residual connection, ``E = Z + softmax(Q K^T / sqrt(d)) V @ W_o.T``, and
    ``g = G @ mean_rows(E)``.

Weights are drawn from :class:`freqalign.rng.XorShift64Star` as
``uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`` in the fixed order
``W_e, [W_q, W_k, W_v, W_o], G``. There are no biases and no normalization layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .rng import XorShift64Star
from .validation import DomainError, check_image, check_images

ENCODER_KINDS = ("linear-patch", "attention-1layer")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "linear-patch"
    patch_size: int = 8
    embed_dim: int = 32
    seed: int = 0
    input_size: tuple[int, int, int] = (32, 32, 3)
    pixel_mean: float = 0.5

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise DomainError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        if len(self.input_size) != 3 or min(self.input_size) < 1:
            raise DomainError(f"input_size must be (H, W, C) with positive entries, got {self.input_size}")
        if self.patch_size < 1 or self.embed_dim < 1:
            raise DomainError("patch_size and embed_dim must be positive")
        h, w, _ = self.input_size
        if h % self.patch_size or w % self.patch_size:
            raise DomainError(f"input {h}x{w} is not divisible by patch_size {self.patch_size}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    @property
    def grid(self) -> tuple[int, int]:
        h, w, _ = self.input_size
        return h // self.patch_size, w // self.patch_size

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2 * self.input_size[2]


@dataclass(frozen=True)
class EncoderWeights:
    embed: np.ndarray
    glob: np.ndarray
    q: np.ndarray | None = None
    k: np.ndarray | None = None
    v: np.ndarray | None = None
    o: np.ndarray | None = None


@lru_cache(maxsize=32)
def build_weights(spec: EncoderSpec) -> EncoderWeights:
    rng = XorShift64Star(spec.seed)

    def draw(rows, cols):
        s = 1.0 / math.sqrt(cols)
        w = rng.uniform(-s, s, (rows, cols))
        w.setflags(write=False)
        return w

    d = spec.embed_dim
    embed = draw(d, spec.patch_dim)
    if spec.kind == "linear-patch":
        return EncoderWeights(embed, draw(d, d))
    q, k, v, o = (draw(d, d) for _ in range(4))
    return EncoderWeights(embed, draw(d, d), q, k, v, o)


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    h, w, c = image.shape
    x = image.reshape(h // patch, patch, w // patch, patch, c).transpose(0, 2, 1, 3, 4)
    return x.reshape((h // patch) * (w // patch), patch * patch * c)


def unpatchify(rows: np.ndarray, patch: int, shape: tuple[int, int, int]) -> np.ndarray:
    h, w, c = shape
    x = rows.reshape(h // patch, w // patch, patch, patch, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(h, w, c)


@dataclass(frozen=True)
class EncoderOutput:
    global_feature: np.ndarray
    patches: np.ndarray
    cache: dict


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def forward(spec: EncoderSpec, image) -> EncoderOutput:
    image = check_image(image)
    if image.shape != spec.input_size:
        raise DomainError(f"image shape {image.shape} does not match encoder input {spec.input_size}")
    w = build_weights(spec)
    x = patchify(image - spec.pixel_mean, spec.patch_size)
    z = x @ w.embed.T
    cache = {}
    if spec.kind == "linear-patch":
        tokens = z
    else:
        q, k, v = z @ w.q.T, z @ w.k.T, z @ w.v.T
        attn = _softmax_rows(q @ k.T / math.sqrt(spec.embed_dim))
        out = attn @ v
        tokens = z + out @ w.o.T
        cache.update(q=q, k=k, v=v, attn=attn)
    pooled = tokens.mean(axis=0)
    return EncoderOutput(w.glob @ pooled, tokens, cache)


def input_gradient(spec: EncoderSpec, image, loss_adjoints, cache: dict | None = None) -> np.ndarray:
    """Pull ``(dL/dglobal, dL/dpatches)`` back to ``dL/dimage``."""
    image = check_image(image)
    if image.shape != spec.input_size:
        raise DomainError(f"image shape {image.shape} does not match encoder input {spec.input_size}")
    d_global, d_tokens = loss_adjoints
    d_global = np.asarray(d_global, dtype=np.float64)
    d_tokens = np.asarray(d_tokens, dtype=np.float64)
    if d_global.shape != (spec.embed_dim,) or d_tokens.shape != (spec.n_patches, spec.embed_dim):
        raise DomainError(
            f"adjoint shapes {d_global.shape}, {d_tokens.shape} do not match "
            f"({spec.embed_dim},), ({spec.n_patches}, {spec.embed_dim})"
        )
    w = build_weights(spec)
    d_tok = d_tokens + (w.glob.T @ d_global)[None, :] / spec.n_patches
    if spec.kind == "linear-patch":
        d_z = d_tok
    else:
        if not cache:
            cache = forward(spec, image).cache
        attn, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
        scale = 1.0 / math.sqrt(spec.embed_dim)
        d_out = d_tok @ w.o
        d_attn = d_out @ v.T
        d_v = attn.T @ d_out
        d_scores = attn * (d_attn - np.sum(d_attn * attn, axis=1, keepdims=True))
        d_q = d_scores @ k * scale
        d_k = d_scores.T @ q * scale
        d_z = d_tok + d_q @ w.q + d_k @ w.k + d_v @ w.v
    return unpatchify(d_z @ w.embed, spec.patch_size, spec.input_size)


class PatchEncoder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``transform`` maps an image batch to global features."""

    def __init__(self, kind="linear-patch", patch_size=8, embed_dim=32, seed=0, pixel_mean=0.5):
        self.kind = kind
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.seed = seed
        self.pixel_mean = pixel_mean

    def fit(self, X, y=None):
        X = check_images(X)
        self.spec_ = EncoderSpec(self.kind, self.patch_size, self.embed_dim, self.seed, X.shape[1:], self.pixel_mean)
        self.n_patches_ = self.spec_.n_patches
        return self

    def encode(self, X) -> list[EncoderOutput]:
        check_is_fitted(self, "spec_")
        return [forward(self.spec_, img) for img in check_images(X)]

    def transform(self, X):
        return np.stack([out.global_feature for out in self.encode(X)])

    def patch_embeddings(self, X):
        return np.stack([out.patches for out in self.encode(X)])

