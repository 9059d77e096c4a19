"""Seeded synthetic natural-ish images: smooth colour fields plus a few soft blobs."""

from __future__ import annotations

import numpy as np

from .rng import XorShift64Star, derive_seed


def smooth_image(seed: int, shape=(32, 32, 3), n_waves: int = 4, n_blobs: int = 3) -> np.ndarray:
    h, w, c = shape
    rng = XorShift64Star(seed)
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    img = np.zeros(shape)
    for _ in range(n_waves):
        fy, fx = rng.uniform(0.0, 3.0, 2)
        phase = rng.uniform(0.0, 2 * np.pi, 1)[0]
        amp = rng.uniform(-0.3, 0.3, c)
        img += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)[..., None] * amp
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        radius = rng.uniform(0.08, 0.25, 1)[0]
        colour = rng.uniform(-0.5, 0.5, c)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius**2))
        img += bump[..., None] * colour
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros(shape)
    return 0.1 + 0.8 * img


def synthetic_pairs(master_seed: int, count: int, shape=(32, 32, 3)) -> list[tuple[np.ndarray, np.ndarray]]:
    """``count`` (source, target) pairs; pair ``i`` depends only on ``(master_seed, i)``."""
    pairs = []
    for i in range(count):
        seed = derive_seed(master_seed, i)
        pairs.append((smooth_image(derive_seed(seed, 0), shape), smooth_image(derive_seed(seed, 1), shape)))
    return pairs
