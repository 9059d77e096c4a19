"""Frequency-domain feature alignment and gradient regularization for targeted transfer attacks."""

from .alignment import (
    HighFreqSelection,
    TransportPlan,
    cost_matrix,
    ot_loss,
    per_encoder_loss,
    select_high_freq,
    sinkhorn,
)
from .attack import (
    AttackConfig,
    AttackState,
    FrequencyAlignmentAttack,
    default_ensemble,
    dynamic_weights,
    run_attack,
    step,
)
from .defenses import DefenseSpec, ImageDefense, defend
from .encoders import EncoderOutput, EncoderSpec, PatchEncoder, forward, input_gradient
from .evaluation import TransferReport, energy_map, holdout_similarity, transfer_report
from .spectral import (
    FrequencyGradientRegularizer,
    RadialFilter,
    SpectralStack,
    TokenDCT,
    apply_fgr,
    dct2,
    dct_tokens,
    idct2,
    idct_tokens,
    radial_distance,
)
from .validation import DegenerateFeatureWarning, DomainError, OptimizationWarning

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackState",
    "DefenseSpec",
    "DegenerateFeatureWarning",
    "DomainError",
    "EncoderOutput",
    "EncoderSpec",
    "FrequencyAlignmentAttack",
    "FrequencyGradientRegularizer",
    "HighFreqSelection",
    "ImageDefense",
    "OptimizationWarning",
    "PatchEncoder",
    "RadialFilter",
    "SpectralStack",
    "TokenDCT",
    "TransferReport",
    "TransportPlan",
    "apply_fgr",
    "cost_matrix",
    "dct2",
    "dct_tokens",
    "default_ensemble",
    "defend",
    "dynamic_weights",
    "energy_map",
    "forward",
    "holdout_similarity",
    "idct2",
    "idct_tokens",
    "input_gradient",
    "ot_loss",
    "per_encoder_loss",
    "radial_distance",
    "run_attack",
    "select_high_freq",
    "sinkhorn",
    "step",
    "transfer_report",
]
