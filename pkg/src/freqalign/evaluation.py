"""Transfer metrics on held-out encoders and per-patch high-frequency energy maps.

A pair counts as a targeted success when the held-out encoder finds the
adversarial image closer (cosine) to the target than to the source. This is a
scale-free stand-in for thresholded judge scores, which toy encoders cannot
calibrate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import select_high_freq
from .encoders import EncoderSpec, forward
from .spectral import SpectralStack, dct_tokens, idct_tokens
from .validation import DomainError


_NEGLIGIBLE = 1e-24


@dataclass(frozen=True)
class PairRecord:
    sim_adv_target: float
    sim_adv_source: float

    @property
    def success(self) -> bool:
        return self.sim_adv_target > self.sim_adv_source


@dataclass(frozen=True)
class TransferReport:
    per_pair: list[PairRecord] = field(default_factory=list)

    @property
    def mean_sim(self) -> float:
        return float(np.mean([r.sim_adv_target for r in self.per_pair])) if self.per_pair else 0.0

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.per_pair) / len(self.per_pair) if self.per_pair else 0.0

    @property
    def aggregate(self) -> dict:
        return {"mean_sim": self.mean_sim, "success_rate": self.success_rate}


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def holdout_similarity(adversarial, source, target, holdout: EncoderSpec, ensemble=()) -> PairRecord:
    """Cosine similarity of the adversarial image to target and source under ``holdout``."""
    if any(spec.seed == holdout.seed for spec in ensemble):
        raise DomainError(f"holdout seed {holdout.seed} collides with a surrogate seed")
    g_adv = forward(holdout, adversarial).global_feature
    g_tgt = forward(holdout, target).global_feature
    g_src = forward(holdout, source).global_feature
    return PairRecord(cosine_similarity(g_adv, g_tgt), cosine_similarity(g_adv, g_src))


def transfer_report(triples, holdout: EncoderSpec, ensemble=()) -> TransferReport:
    """Report over ``(adversarial, source, target)`` triples."""
    return TransferReport([holdout_similarity(a, s, t, holdout, ensemble) for a, s, t in triples])


def energy_map(image, spec: EncoderSpec, theta: int = 10, n: int = 10) -> np.ndarray:
    """Per-patch energy of the selected high-frequency DCT rows, scaled to [0, 1]."""
    patches = forward(spec, image).patches
    stack = dct_tokens(patches)
    sel = select_high_freq(stack, theta, n)
    kept = np.zeros_like(stack.coeffs)
    kept[sel.indices] = sel.features
    tokens = idct_tokens(SpectralStack.from_coeffs(kept))
    energy = np.sum(tokens**2, axis=1).reshape(spec.grid)
    peak = energy.max()
    # high-frequency rows of identical tokens are zero only up to rounding; do not amplify that
    if peak <= _NEGLIGIBLE * np.sum(patches**2, axis=1).max():
        return np.zeros_like(energy)
    return energy / peak
