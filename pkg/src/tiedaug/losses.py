"""The two-view training objective and its similarity-function family.

The total loss is ``supervised + w * S`` where S is a sign-normalized
dissimilarity between the two views' pre-logit features: smaller S always
means more similar, for every kind. Positive tied weight w therefore
encourages invariance for L1, L2 and cosine alike (the cosine kind absorbs
the usual negated-weight convention internally, so a config that wants the
legacy convention maps w_legacy = -w). Negative w enforces dissimilarity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .augment import mix
from .errors import ConfigurationError, ContractViolation
from .models import Model, ModelOutput
from .tensor import Tensor

SIMILARITY_KINDS = ("l2", "l1", "cosine")


@dataclass(frozen=True)
class SimilarityKind:
    """One of l2 / l1 / cosine, with the cosine denominator guard."""

    kind: str = "l2"
    epsilon: float = 1e-12

    def validate(self) -> None:
        if self.kind not in SIMILARITY_KINDS:
            raise ConfigurationError(f"unknown similarity kind '{self.kind}'")
        if self.epsilon <= 0:
            raise ConfigurationError(f"similarity epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class TiedLossConfig:
    """Tied weight (any sign), similarity kind, and supervised-branch mode."""

    tied_weight: float = 4.0
    similarity: SimilarityKind = SimilarityKind()
    supervised_branches: str = "both"

    def validate(self) -> None:
        self.similarity.validate()
        if self.supervised_branches not in ("both", "first_only"):
            raise ConfigurationError(
                f"supervised_branches must be 'both' or 'first_only', got '{self.supervised_branches}'"
            )

    def with_weight(self, w: float) -> "TiedLossConfig":
        return replace(self, tied_weight=w)


@dataclass
class TiedLossBreakdown:
    """Differentiable total plus the logged components.

    ``total.item() == supervised_part + tied_weight * similarity_penalty``
    holds to float exactness; ``feature_distance_l2`` is the mean row-wise
    Euclidean feature distance and is logged for every similarity kind.
    """

    total: Tensor
    ce1: float
    ce2: float | None
    similarity_penalty: float
    feature_distance_l2: float


def onehot(labels: np.ndarray, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ContractViolation(f"labels must be a vector, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        bad = int(labels[(labels < 0) | (labels >= classes)][0])
        raise ContractViolation(f"label {bad} out of range [0, {classes})")
    out = np.zeros((labels.shape[0], classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under row-wise softmax."""
    n, classes = logits.shape
    if len(labels) != n:
        raise ContractViolation(f"{len(labels)} labels for a batch of {n}")
    picked = T.multiply(T.log_softmax(logits), Tensor(onehot(labels, classes)))
    return T.mul_scalar(T.tsum(picked), -1.0 / n)


def similarity_penalty(kind: SimilarityKind, v1: Tensor, v2: Tensor) -> Tensor:
    """Sign-normalized dissimilarity S(v1, v2); smaller means more similar.

    l2: mean over the batch of the squared row distance. l1: mean of the
    row-wise L1 distance. cosine: mean of -cos(angle), with each row norm
    guarded below by epsilon so zero features cannot produce NaN.
    """
    kind.validate()
    if v1.data.ndim != 2 or v1.shape != v2.shape:
        raise ContractViolation(f"similarity_penalty: shape mismatch {v1.shape} vs {v2.shape}")
    n = v1.shape[0]
    if kind.kind == "l2":
        return T.mul_scalar(T.tsum(T.square(T.subtract(v1, v2))), 1.0 / n)
    if kind.kind == "l1":
        return T.mul_scalar(T.tsum(T.absolute(T.subtract(v1, v2))), 1.0 / n)
    # cosine: guard max(|v|, eps) is computed as sqrt(max(|v|^2, eps^2)) so
    # the sqrt pullback never sees zero.
    eps_sq = kind.epsilon * kind.epsilon
    dot = T.rowsum(T.multiply(v1, v2))
    n1 = T.sqrt(T.maximum_scalar(T.rowsum(T.square(v1)), eps_sq))
    n2 = T.sqrt(T.maximum_scalar(T.rowsum(T.square(v2)), eps_sq))
    cos = T.divide(dot, T.multiply(n1, n2))
    return T.mul_scalar(T.tmean(cos), -1.0)


def _mean_l2_distance(v1: np.ndarray, v2: np.ndarray) -> float:
    d = v1 - v2
    return float(np.mean(np.sqrt((d * d).sum(axis=1))))


def tied_loss(out1: ModelOutput, out2: ModelOutput, labels: np.ndarray,
              cfg: TiedLossConfig) -> TiedLossBreakdown:
    """Supervised loss over the two views plus the weighted similarity term.

    The supervised part is the mean of the two cross-entropies, or the first
    branch's alone under ``first_only``.
    """
    cfg.validate()
    if out1.features.shape != out2.features.shape:
        raise ContractViolation(
            f"view features disagree: {out1.features.shape} vs {out2.features.shape}"
        )
    ce1 = cross_entropy(out1.logits, labels)
    if cfg.supervised_branches == "both":
        ce2 = cross_entropy(out2.logits, labels)
        supervised = T.mul_scalar(T.add(ce1, ce2), 0.5)
        ce2_value = ce2.item()
    else:
        supervised = ce1
        ce2_value = None
    penalty = similarity_penalty(cfg.similarity, out1.features, out2.features)
    total = T.add(supervised, T.mul_scalar(penalty, cfg.tied_weight))
    return TiedLossBreakdown(
        total=total,
        ce1=ce1.item(),
        ce2=ce2_value,
        similarity_penalty=penalty.item(),
        feature_distance_l2=_mean_l2_distance(out1.features.data, out2.features.data),
    )


def tied_mixup_loss(model: Model, x1: np.ndarray, y1: np.ndarray,
                    x2: np.ndarray, y2: np.ndarray, lam: float, w: float) -> TiedLossBreakdown:
    """Mixed-example training with a feature-space linearity penalty.

    Three forwards: the two clean batches and their convex mix. The
    supervised part is the lam-weighted cross-entropy of the mixed batch
    against both label vectors; the penalty is the mean squared distance
    between the mixed batch's features and the same convex mix of the clean
    features, so it vanishes identically for affine feature maps.
    """
    if not 0.0 <= lam <= 1.0:
        raise ContractViolation(f"lam must be in [0,1], got {lam}")
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise ContractViolation(f"tied_mixup_loss: shape mismatch {x1.shape} vs {x2.shape}")
    out1 = model.forward(Tensor(x1))
    out2 = model.forward(Tensor(x2))
    out_mix = model.forward(Tensor(mix(x1, x2, lam)))

    ce1 = cross_entropy(out_mix.logits, y1)
    ce2 = cross_entropy(out_mix.logits, y2)
    supervised = T.add(T.mul_scalar(ce1, lam), T.mul_scalar(ce2, 1.0 - lam))

    mixed_features = T.add(T.mul_scalar(out1.features, lam), T.mul_scalar(out2.features, 1.0 - lam))
    diff = T.subtract(mixed_features, out_mix.features)
    penalty = T.mul_scalar(T.tsum(T.square(diff)), 1.0 / x1.shape[0])
    total = T.add(supervised, T.mul_scalar(penalty, w))
    return TiedLossBreakdown(
        total=total,
        ce1=ce1.item(),
        ce2=ce2.item(),
        similarity_penalty=penalty.item(),
        feature_distance_l2=_mean_l2_distance(mixed_features.data, out_mix.features.data),
    )
