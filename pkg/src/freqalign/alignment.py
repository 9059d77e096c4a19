"""Per-encoder alignment loss: global cosine term plus high-frequency optimal transport.

The transport plan is treated as a constant when differentiating (``dL/dC = plan``);
the top-n frequency selection is likewise piecewise constant, so both are frozen
in the backward pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .spectral import SpectralStack, dct_matrix, dct_tokens
from .validation import DegenerateFeatureWarning, DomainError, as_finite_array


@dataclass(frozen=True)
class HighFreqSelection:
    """The ``n`` most energetic DCT rows at or above the threshold, in ascending index order."""

    indices: np.ndarray
    features: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    cost: np.ndarray
    lam: float
    n_iter: int = 0
    residual: float = 0.0

    @property
    def objective(self) -> float:
        return float(np.sum(self.cost * self.plan))


def select_high_freq(stack: SpectralStack, theta: int, n: int) -> HighFreqSelection:
    P = stack.n_tokens
    if not 1 <= theta < P:
        raise DomainError(f"theta must satisfy 1 <= theta < P={P}, got {theta}")
    if not 1 <= n <= P - theta:
        raise DomainError(f"n must satisfy 1 <= n <= P - theta = {P - theta}, got {n}")
    candidates = np.arange(theta, P)
    # stable sort on -energy keeps the lower index first among ties
    order = np.argsort(-stack.energy[theta:], kind="stable")
    chosen = np.sort(candidates[order[:n]])
    return HighFreqSelection(chosen, stack.coeffs[chosen].copy())


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize; zero rows become the uniform unit vector (with a warning)."""
    x = np.array(x, dtype=np.float64, copy=True)
    norms = np.linalg.norm(x, axis=-1)
    zero = norms == 0.0
    if np.any(zero):
        warnings.warn(
            f"{int(zero.sum())} zero-norm feature row(s) replaced by a uniform unit vector",
            DegenerateFeatureWarning,
            stacklevel=3,
        )
        x[zero] = 1.0 / np.sqrt(x.shape[-1])
        norms = np.where(zero, 1.0, norms)
    return x / norms[..., None], norms


def cost_matrix(src, tgt) -> np.ndarray:
    """Cosine distance ``1 - <src_a, tgt_b>`` between row-normalized features."""
    src = as_finite_array(src, 2, "src")
    tgt = as_finite_array(tgt, 2, "tgt")
    if src.shape[1] != tgt.shape[1]:
        raise DomainError(f"feature dims differ: {src.shape[1]} vs {tgt.shape[1]}")
    s, _ = _unit_rows(src)
    t, _ = _unit_rows(tgt)
    return np.clip(1.0 - s @ t.T, 0.0, 2.0)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def sinkhorn(
    cost,
    lam: float = 0.1,
    max_iters: int = 200,
    tol: float = 1e-6,
    checkpoints: list | None = None,
) -> TransportPlan:
    """Entropic OT between uniform marginals, solved with log-domain Sinkhorn.

    If ``checkpoints`` is a list, the transport objective of the renormalized
    plan is appended to it after every iteration.
    """
    cost = as_finite_array(cost, 2, "cost")
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    n, m = cost.shape
    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    log_k = -cost / lam
    f = np.zeros(n)
    g = np.zeros(m)
    residual = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = log_a - _logsumexp(log_k + g[None, :], axis=1)
        g = log_b - _logsumexp(log_k + f[:, None], axis=0)
        log_plan = log_k + f[:, None] + g[None, :]
        # columns are exact after the g-update; the row residual measures convergence
        residual = float(np.max(np.abs(np.exp(_logsumexp(log_plan, axis=1)) - 1.0 / n)))
        if checkpoints is not None:
            checkpoints.append(float(np.sum(cost * _renormalize(np.exp(log_plan)))))
        if residual < tol:
            break
    plan = _renormalize(np.exp(log_k + f[:, None] + g[None, :]))
    return TransportPlan(plan, cost, float(lam), it, residual)


def _renormalize(plan: np.ndarray) -> np.ndarray:
    """Project a positive matrix onto the uniform-marginal polytope.

    Rows are scaled down to at most ``1/n``, then columns to at most ``1/m``; the
    remaining mass deficits ``r, c`` are restored with the rank-one term
    ``r c^T / |r|_1``. Both marginals then hold to rounding error and entries stay
    non-negative (the rounding step of Altschuler, Weed and Rigollet, 2017).
    """
    n, m = plan.shape
    a, b = 1.0 / n, 1.0 / m
    plan = plan * np.minimum(1.0, a / plan.sum(axis=1))[:, None]
    plan = plan * np.minimum(1.0, b / plan.sum(axis=0))[None, :]
    err_r = a - plan.sum(axis=1)
    err_c = b - plan.sum(axis=0)
    mass = err_r.sum()
    if mass > 0:
        # the correction can undershoot an exact zero by an ulp
        plan = np.maximum(plan + np.outer(err_r, err_c) / mass, 0.0)
    return plan


def ot_loss(src_sel: HighFreqSelection, tgt_sel: HighFreqSelection, lam: float = 0.1, **sinkhorn_kw):
    """Transport loss ``<C, plan>`` between two selections; returns ``(loss, plan)``."""
    if src_sel.features.shape != tgt_sel.features.shape:
        raise DomainError(
            f"selection shapes differ: {src_sel.features.shape} vs {tgt_sel.features.shape}"
        )
    cost = cost_matrix(src_sel.features, tgt_sel.features)
    tp = sinkhorn(cost, lam, **sinkhorn_kw)
    return float(np.sum(cost * tp.plan)), tp


def cosine_distance(a, b) -> float:
    a = as_finite_array(a, 1, "a")[None]
    b = as_finite_array(b, 1, "b")[None]
    return float(cost_matrix(a, b)[0, 0])


def per_encoder_loss(global_src, global_tgt, src_sel, tgt_sel, w_g=1.0, w_l=0.2, lam=0.1, **sinkhorn_kw) -> float:
    if w_g < 0 or w_l < 0:
        raise DomainError("loss weights must be non-negative")
    loss = w_g * cosine_distance(global_src, global_tgt)
    if w_l:
        loss += w_l * ot_loss(src_sel, tgt_sel, lam, **sinkhorn_kw)[0]
    return float(loss)


def _cosine_distance_grad(x: np.ndarray, t_unit: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. rows ``x`` of ``sum_ab weights_ab * (1 - <x_a/|x_a|, t_b>)``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFeatureWarning)
        x_unit, norms = _unit_rows(x)
    pulled = weights @ t_unit
    radial = np.sum(x_unit * pulled, axis=1, keepdims=True)
    return -(pulled - radial * x_unit) / norms[:, None]


@dataclass
class AlignmentResult:
    """Loss value, its parts, and the adjoints w.r.t. the source encoder outputs."""

    loss: float
    global_loss: float
    freq_loss: float
    grad_global: np.ndarray
    grad_patches: np.ndarray
    selection: HighFreqSelection | None = None
    plan: TransportPlan | None = None


@dataclass(frozen=True)
class TargetFeatures:
    global_feature: np.ndarray
    selection: HighFreqSelection | None


def prepare_target(global_tgt, patches_tgt, theta: int, n: int, need_local: bool = True) -> TargetFeatures:
    sel = select_high_freq(dct_tokens(patches_tgt), theta, n) if need_local else None
    return TargetFeatures(np.asarray(global_tgt, dtype=np.float64), sel)


def alignment_loss_and_grad(
    global_src,
    patches_src,
    target: TargetFeatures,
    theta: int,
    n: int,
    w_g: float = 1.0,
    w_l: float = 0.2,
    lam: float = 0.1,
    frozen: tuple[np.ndarray, TransportPlan] | None = None,
    **sinkhorn_kw,
) -> AlignmentResult:
    """Per-encoder loss and its gradient w.r.t. ``(global_src, patches_src)``.

    ``frozen=(indices, plan)`` reuses a previous selection and plan, giving the
    smooth surrogate ``w_g * L_global + w_l * <C(x), plan>`` used for finite-difference checks.
    """
    g = as_finite_array(global_src, 1, "global_src")
    E = as_finite_array(patches_src, 2, "patches_src")
    tg_unit, _ = _unit_rows(target.global_feature[None])
    g_unit, _ = _unit_rows(g[None])
    global_loss = float(np.clip(1.0 - g_unit[0] @ tg_unit[0], 0.0, 2.0))
    grad_global = w_g * _cosine_distance_grad(g[None], tg_unit, np.ones((1, 1)))[0]

    grad_patches = np.zeros_like(E)
    freq_loss = 0.0
    sel = plan = None
    if w_l and target.selection is not None:
        stack = dct_tokens(E)
        if frozen is None:
            sel = select_high_freq(stack, theta, n)
        else:
            idx = np.asarray(frozen[0])
            sel = HighFreqSelection(idx, stack.coeffs[idx].copy())
        cost = cost_matrix(sel.features, target.selection.features)
        if frozen is None:
            plan = sinkhorn(cost, lam, **sinkhorn_kw)
        else:
            plan = TransportPlan(frozen[1].plan, cost, frozen[1].lam)
        freq_loss = float(np.sum(cost * plan.plan))
        t_unit, _ = _unit_rows(target.selection.features)
        grad_rows = _cosine_distance_grad(sel.features, t_unit, plan.plan)
        grad_coeffs = np.zeros_like(E)
        grad_coeffs[sel.indices] = w_l * grad_rows
        grad_patches = dct_matrix(E.shape[0]).T @ grad_coeffs

    loss = w_g * global_loss + w_l * freq_loss
    return AlignmentResult(loss, global_loss, freq_loss, grad_global, grad_patches, sel, plan)
