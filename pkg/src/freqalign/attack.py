"""The iterative attack: ensemble alignment loss, dynamic weighting, FGR and the sign/Adam update."""

from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alignment import alignment_loss_and_grad, prepare_target
from .encoders import EncoderSpec, forward, input_gradient
from .spectral import RadialFilter, apply_fgr
from .validation import DomainError, OptimizationWarning, check_image, check_images, check_unit_range

logger = logging.getLogger(__name__)

OPTIMIZERS = ("fgsm", "mi-fgsm", "pgd-adam")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 16 / 255
    alpha: float = 1 / 255
    iters: int = 300
    theta: int = 10
    n: int = 10
    w_g: float = 1.0
    w_l: float = 0.2
    lam: float = 0.1
    fgr: RadialFilter = field(default_factory=RadialFilter)
    mu: float = 1.0
    temperature: float = 1.0
    optimizer: str = "mi-fgsm"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sinkhorn_iters: int = 200
    sinkhorn_tol: float = 1e-6

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise DomainError("epsilon must lie in (0, 1]")
        if not self.alpha >= 0:
            raise DomainError("alpha must be non-negative")
        if self.iters < 0:
            raise DomainError("iters must be >= 0")
        if self.w_g < 0 or self.w_l < 0:
            raise DomainError("loss weights must be non-negative")
        if not self.lam > 0:
            raise DomainError("lam must be positive")
        if not self.temperature > 0:
            raise DomainError("temperature must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise DomainError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not isinstance(self.fgr, RadialFilter):
            raise DomainError("fgr must be a RadialFilter")

    def replace(self, **changes) -> "AttackConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class AttackState:
    delta: np.ndarray
    momentum: np.ndarray
    prev_losses: np.ndarray | None = None
    second_moment: np.ndarray | None = None
    t: int = 0
    trace: list[dict] = field(default_factory=list)

    @classmethod
    def initial(cls, shape) -> "AttackState":
        return cls(np.zeros(shape), np.zeros(shape), second_moment=np.zeros(shape))

    def copy(self) -> "AttackState":
        return AttackState(
            self.delta.copy(),
            self.momentum.copy(),
            None if self.prev_losses is None else self.prev_losses.copy(),
            None if self.second_moment is None else self.second_moment.copy(),
            self.t,
            list(self.trace),
        )


def dynamic_weights(current, previous=None, temperature: float = 1.0) -> np.ndarray:
    """``W = J * softmax((current / previous) / T)``; all ones when there is no previous step."""
    current = np.asarray(current, dtype=np.float64)
    J = current.size
    if J < 1:
        raise DomainError("need at least one loss")
    if previous is None:
        return np.ones(J)
    previous = np.asarray(previous, dtype=np.float64)
    if previous.shape != current.shape:
        raise DomainError("previous and current losses differ in length")
    zero = previous == 0
    if np.any(zero):
        warnings.warn("zero previous loss; improvement ratio set to 1", OptimizationWarning, stacklevel=2)
    ratios = np.where(zero, 1.0, current / np.where(zero, 1.0, previous))
    z = ratios / temperature
    z = np.exp(z - z.max())
    return J * z / z.sum()


@dataclass(frozen=True)
class _EncoderContext:
    spec: EncoderSpec
    target: object


def prepare_ensemble(target, config: AttackConfig, ensemble) -> list[_EncoderContext]:
    """Encode the target once per run; its features are constant across iterations."""
    contexts = []
    for spec in ensemble:
        out = forward(spec, target)
        tf = prepare_target(out.global_feature, out.patches, config.theta, config.n, need_local=config.w_l > 0)
        contexts.append(_EncoderContext(spec, tf))
    return contexts


def ensemble_loss_and_grad(image, config: AttackConfig, contexts, frozen=None):
    """Per-encoder losses and image gradients at ``image``."""
    losses, grads, parts = [], [], []
    for j, ctx in enumerate(contexts):
        out = forward(ctx.spec, image)
        res = alignment_loss_and_grad(
            out.global_feature,
            out.patches,
            ctx.target,
            config.theta,
            config.n,
            config.w_g,
            config.w_l,
            config.lam,
            frozen=None if frozen is None else frozen[j],
            max_iters=config.sinkhorn_iters,
            tol=config.sinkhorn_tol,
        )
        grads.append(input_gradient(ctx.spec, image, (res.grad_global, res.grad_patches), out.cache))
        losses.append(res.loss)
        parts.append(res)
    return np.array(losses), grads, parts


def step(state: AttackState, config: AttackConfig, source, target, ensemble, contexts=None) -> AttackState:
    """One attack iteration; returns a new state and leaves ``state`` untouched."""
    if not ensemble:
        raise DomainError("ensemble must not be empty")
    if contexts is None:
        contexts = prepare_ensemble(target, config, ensemble)
    new = state.copy()
    losses, grads, parts = ensemble_loss_and_grad(source + state.delta, config, contexts)
    weights = dynamic_weights(losses, state.prev_losses, config.temperature)
    grad = sum(w * g for w, g in zip(weights, grads))

    planes = grad.transpose(2, 0, 1)[None]
    if config.fgr.kind != "identity":
        planes = apply_fgr(planes, config.fgr)
    reg = planes[0].transpose(1, 2, 0)
    reg_l1 = float(np.abs(reg).sum())
    notes = []

    if config.optimizer == "mi-fgsm":
        if reg_l1 > 0:
            new.momentum = config.mu * state.momentum + reg / reg_l1
            direction = np.sign(new.momentum)
        else:
            notes.append("zero regularized gradient; momentum and delta unchanged")
            direction = np.zeros_like(reg)
    elif config.optimizer == "fgsm":
        direction = np.sign(reg)
    else:
        b1, b2 = config.adam_beta1, config.adam_beta2
        k = state.t + 1
        new.momentum = b1 * state.momentum + (1 - b1) * reg
        new.second_moment = b2 * state.second_moment + (1 - b2) * reg**2
        m_hat = new.momentum / (1 - b1**k)
        v_hat = new.second_moment / (1 - b2**k)
        direction = m_hat / (np.sqrt(v_hat) + config.adam_eps)

    for note in notes:
        warnings.warn(note, OptimizationWarning, stacklevel=2)
        logger.warning("iteration %d: %s", state.t + 1, note)

    new.delta = np.clip(state.delta - config.alpha * direction, -config.epsilon, config.epsilon)
    new.prev_losses = losses
    new.t = state.t + 1
    new.trace.append(
        {
            "t": new.t,
            "losses": losses.tolist(),
            "global_losses": [p.global_loss for p in parts],
            "freq_losses": [p.freq_loss for p in parts],
            "weights": weights.tolist(),
            "total_loss": float(weights @ losses),
            "grad_l1": float(np.abs(grad).sum()),
            "fgr_grad_l1": reg_l1,
            "delta_linf": float(np.abs(new.delta).max()),
            "warnings": notes,
        }
    )
    return new


def run_attack(source, target, config: AttackConfig, ensemble, callback=None):
    """Run ``config.iters`` steps; returns ``(clamp(source + delta, 0, 1), trace)``."""
    source = check_unit_range(check_image(source, "source"), "source")
    target = check_unit_range(check_image(target, "target"), "target")
    if source.shape != target.shape:
        raise DomainError(f"source {source.shape} and target {target.shape} differ in shape")
    ensemble = list(ensemble)
    if not ensemble:
        raise DomainError("ensemble must not be empty")
    contexts = prepare_ensemble(target, config, ensemble)
    state = AttackState.initial(source.shape)
    for _ in range(config.iters):
        state = step(state, config, source, target, ensemble, contexts)
        if callback is not None:
            callback(state)
    return adversarial_image(source, state.delta, config.epsilon), state.trace


def adversarial_image(source: np.ndarray, delta: np.ndarray, epsilon: float) -> np.ndarray:
    """``clamp(source + delta, 0, 1)`` with ``|result - source| <= epsilon`` exactly in floating point.

    ``(s + d) - s`` can exceed ``d`` by an ulp; such entries are nudged back toward ``s``.
    """
    adv = np.clip(source + delta, 0.0, 1.0)
    for _ in range(4):
        over = np.abs(adv - source) > epsilon
        if not over.any():
            break
        adv[over] = np.nextafter(adv[over], source[over])
    return adv


def default_ensemble(input_size=(32, 32, 3)) -> list[EncoderSpec]:
    """Two heterogeneous surrogates (different seed, patch size and width)."""
    return [
        EncoderSpec("linear-patch", 4, 32, seed=1, input_size=input_size),
        EncoderSpec("attention-1layer", 2, 24, seed=2, input_size=input_size),
    ]


class FrequencyAlignmentAttack(TransformerMixin, BaseEstimator):
    """Estimator facade over :func:`run_attack`.

    ``fit(X, y)`` optimizes one perturbation per (source ``X[i]``, target ``y[i]``)
    pair; ``transform(X)`` adds the learned perturbations and clamps to [0, 1].
    """

    def __init__(
        self,
        ensemble=None,
        epsilon=16 / 255,
        alpha=1 / 255,
        iters=300,
        theta=10,
        n=10,
        w_g=1.0,
        w_l=0.2,
        lam=0.1,
        fgr=None,
        mu=1.0,
        temperature=1.0,
        optimizer="mi-fgsm",
    ):
        self.ensemble = ensemble
        self.epsilon = epsilon
        self.alpha = alpha
        self.iters = iters
        self.theta = theta
        self.n = n
        self.w_g = w_g
        self.w_l = w_l
        self.lam = lam
        self.fgr = fgr
        self.mu = mu
        self.temperature = temperature
        self.optimizer = optimizer

    def _config(self) -> AttackConfig:
        params = self.get_params()
        params.pop("ensemble")
        params["fgr"] = params["fgr"] if params["fgr"] is not None else RadialFilter()
        return AttackConfig(**params)

    def fit(self, X, y):
        X = check_images(X, "X")
        y = check_images(y, "y")
        if X.shape != y.shape:
            raise DomainError(f"X {X.shape} and y {y.shape} differ in shape")
        config = self._config()
        ensemble = self.ensemble if self.ensemble is not None else default_ensemble(X.shape[1:])
        deltas, traces = [], []
        for src, tgt in zip(X, y):
            adv, trace = run_attack(src, tgt, config, ensemble)
            deltas.append(adv - src)
            traces.append(trace)
        self.ensemble_ = list(ensemble)
        self.perturbations_ = np.stack(deltas)
        self.traces_ = traces
        return self

    def transform(self, X):
        check_is_fitted(self, "perturbations_")
        X = check_images(X, "X")
        if X.shape != self.perturbations_.shape:
            raise DomainError(f"X {X.shape} does not match fitted perturbations {self.perturbations_.shape}")
        return np.stack([adversarial_image(x, d, self.epsilon) for x, d in zip(X, self.perturbations_)])
