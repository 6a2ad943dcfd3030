"""Two-view training with a controllable feature-similarity penalty.

A training library and experiment CLI built on a self-contained
reverse-mode autodiff core: paired augmented views share one set of model
weights, and a signed similarity term between their pre-logit features is
added to the supervised loss. Variants cover feature-space mixing,
sharpness-aware two-step updates, and confidence-masked pseudo-labeling,
plus a numerical verifier relating the Gaussian-noise penalty to a
Jacobian regularizer.
"""

from .augment import AugmentSpec, ImageBatch, ViewPair, apply, make_views, mixup_batch
from .errors import (
    ConfigurationError,
    ContractViolation,
    FormatError,
    NumericError,
    TiedAugError,
)
from .losses import (
    SimilarityKind,
    TiedLossBreakdown,
    TiedLossConfig,
    cross_entropy,
    similarity_penalty,
    tied_loss,
    tied_mixup_loss,
)
from .models import LinearModel, Model, ModelOutput, ModelSpec, build, load_checkpoint, save_checkpoint
from .optim import SamConfig, Sgd, SgdConfig, learning_rate, sam_step
from .semisup import FixMatchConfig, SemiBatch, tied_fixmatch_loss
from .tensor import Tensor, backward, grad_check, no_grad, param_grad_check

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec",
    "ConfigurationError",
    "ContractViolation",
    "FixMatchConfig",
    "FormatError",
    "ImageBatch",
    "LinearModel",
    "Model",
    "ModelOutput",
    "ModelSpec",
    "NumericError",
    "SamConfig",
    "SemiBatch",
    "Sgd",
    "SgdConfig",
    "SimilarityKind",
    "Tensor",
    "TiedAugError",
    "TiedLossBreakdown",
    "TiedLossConfig",
    "ViewPair",
    "apply",
    "backward",
    "build",
    "cross_entropy",
    "grad_check",
    "learning_rate",
    "load_checkpoint",
    "make_views",
    "mixup_batch",
    "no_grad",
    "param_grad_check",
    "sam_step",
    "save_checkpoint",
    "similarity_penalty",
    "tied_fixmatch_loss",
    "tied_loss",
    "tied_mixup_loss",
]
