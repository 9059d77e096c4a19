"""Fast built-in property checks, exposed as ``freqalign selfcheck``."""

from __future__ import annotations

import math

import numpy as np

from .alignment import cost_matrix, sinkhorn
from .attack import AttackConfig, ensemble_loss_and_grad, prepare_ensemble
from .encoders import EncoderSpec
from .spectral import RadialFilter, dct2, dct_tokens, idct2, idct_tokens, modulate_spectrum, radial_grid
from .synthetic import smooth_image


def _roundtrip(rng):
    worst = 0.0
    for _ in range(100):
        P, d = rng.integers(1, 65, 2)
        E = rng.standard_normal((P, d))
        stack = dct_tokens(E)
        worst = max(worst, np.abs(idct_tokens(stack) - E).max(), abs(np.linalg.norm(stack.coeffs) - np.linalg.norm(E)))
        H, W = rng.integers(1, 65, 2)
        X = rng.standard_normal((H, W))
        C = dct2(X)
        worst = max(worst, np.abs(idct2(C) - X).max(), abs(np.linalg.norm(C) - np.linalg.norm(X)))
    return worst < 1e-10, f"max deviation {worst:.2e}"


def _dc_and_shift(rng):
    worst = 0.0
    for _ in range(100):
        P, d = rng.integers(2, 65, 2)
        E = rng.standard_normal((P, d))
        F = dct_tokens(E).coeffs
        shifted = dct_tokens(E + rng.standard_normal(d)).coeffs
        worst = max(worst, np.abs(F[0] - math.sqrt(P) * E.mean(axis=0)).max(), np.abs(shifted[1:] - F[1:]).max())
    return worst < 1e-12, f"max deviation {worst:.2e}"


def _equal_radius_ratio(rng):
    worst = 0.0
    for kind in ("polynomial", "reciprocal", "sigmoid"):
        filt = RadialFilter(kind)
        for _ in range(20):
            n = int(rng.integers(2, 33))
            G = rng.standard_normal((n, n))
            Gt = modulate_spectrum(G, filt)
            u, v = rng.integers(0, n, 2)
            if G[v, u] == 0 or radial_grid(n, n)[u, v] != radial_grid(n, n)[v, u]:
                continue
            worst = max(worst, abs(Gt[u, v] / Gt[v, u] - G[u, v] / G[v, u]) / abs(G[u, v] / G[v, u]))
    return worst < 1e-12, f"max relative deviation {worst:.2e}"


def _sinkhorn_marginals(rng):
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 9))
        C = cost_matrix(rng.standard_normal((n, 6)), rng.standard_normal((n, 6)))
        plan = sinkhorn(C, 0.1).plan
        worst = max(worst, np.abs(plan.sum(0) - 1 / n).max(), np.abs(plan.sum(1) - 1 / n).max())
    return worst < 1e-6, f"max marginal residual {worst:.2e}"


def _gradient_check(rng):
    cfg = AttackConfig(theta=10, n=10)
    worst = 0.0
    for kind, patch in (("linear-patch", 4), ("attention-1layer", 4)):
        spec = EncoderSpec(kind, patch, 16, seed=7)
        src, tgt = smooth_image(11), smooth_image(12)
        ctx = prepare_ensemble(tgt, cfg, [spec])
        _, grads, parts = ensemble_loss_and_grad(src, cfg, ctx)
        frozen = [(parts[0].selection.indices, parts[0].plan)]
        for _ in range(10):
            idx = tuple(int(i) for i in (rng.integers(0, 32), rng.integers(0, 32), rng.integers(0, 3)))
            h = 1e-4
            up, dn = src.copy(), src.copy()
            up[idx] += h
            dn[idx] -= h
            num = (ensemble_loss_and_grad(up, cfg, ctx, frozen)[0][0] - ensemble_loss_and_grad(dn, cfg, ctx, frozen)[0][0]) / (2 * h)
            ana = grads[0][idx]
            if abs(ana) < 1e-8:
                worst = max(worst, abs(num - ana) / 1e-7 * 1e-4)
            else:
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana)))
    return worst < 1e-4, f"max relative error {worst:.2e}"


CHECKS = {
    "dct round trip and Parseval": _roundtrip,
    "DC row and shift invariance": _dc_and_shift,
    "equal-radius ratio preservation": _equal_radius_ratio,
    "Sinkhorn uniform marginals": _sinkhorn_marginals,
    "analytic vs finite-difference gradient": _gradient_check,
}


def run_selfcheck(seed: int = 0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    ok_all = True
    for name, fn in CHECKS.items():
        ok, detail = fn(rng)
        ok_all &= ok
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
