"""Pseudo-labeling with confidence masking, plus the masked feature-similarity
term over the weak/strong unlabeled views.

The pseudo-label branch is gradient-free by construction: confidences,
argmax labels and the mask are computed from plain arrays, never on the
autodiff graph. The weak-view features themselves do carry gradient into
the similarity term; only the label is detached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import augment
from . import tensor as T
from .augment import AugmentSpec, ImageBatch
from .errors import ConfigurationError, ContractViolation
from .losses import onehot
from .models import Model
from .tensor import Tensor


@dataclass(frozen=True)
class FixMatchConfig:
    """Confidence threshold, unlabeled weight/ratio, tied weight, and the
    weak/strong augmentation pair (labeled data uses the weak one)."""

    tau: float = 0.95
    lambda_u: float = 1.0
    mu: int = 7
    tied_weight: float = 1.0
    weak_spec: AugmentSpec = field(default_factory=lambda: AugmentSpec(kind="crop_flip"))
    strong_spec: AugmentSpec = field(
        default_factory=lambda: AugmentSpec(kind="randaugment", layers=2, magnitude=10.0, prob=0.5)
    )

    def validate(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"tau must be in (0,1], got {self.tau}")
        if self.lambda_u < 0:
            raise ConfigurationError(f"lambda_u must be >= 0, got {self.lambda_u}")
        if not isinstance(self.mu, int) or self.mu < 1:
            raise ConfigurationError(f"mu must be an integer >= 1, got {self.mu}")
        for spec in (self.weak_spec, self.strong_spec):
            spec.validate()
            if spec.kind == "mixup":
                raise ConfigurationError("mixup cannot serve as a weak/strong spec")


@dataclass
class SemiBatch:
    """A labeled batch of size B and an unlabeled batch of size mu*B."""

    labeled: ImageBatch
    unlabeled: ImageBatch

    def validate(self, mu: int) -> None:
        if self.unlabeled.size != mu * self.labeled.size:
            raise ContractViolation(
                f"unlabeled batch of {self.unlabeled.size} does not match "
                f"mu={mu} x labeled batch of {self.labeled.size}"
            )


@dataclass
class FixMatchBreakdown:
    """total = loss_supervised + lambda_u * loss_unlabeled + w * similarity_masked."""

    total: Tensor
    loss_supervised: float
    loss_unlabeled: float
    similarity_masked: float
    mask_rate: float
    feature_distance_l2: float


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def tied_fixmatch_loss(model: Model, batch: SemiBatch, cfg: FixMatchConfig,
                       rng: np.random.Generator) -> FixMatchBreakdown:
    """Supervised CE on weakly augmented labeled data, masked pseudo-label CE
    on the strong unlabeled view, and the masked feature-similarity term.

    Augmentation draws consume ``rng`` in a fixed order: weak labeled, weak
    unlabeled, strong unlabeled. Pseudo-labels come from the weak view's
    softmax computed off-graph; examples with max confidence below tau are
    dropped from both the pseudo-label loss and the similarity term, which
    are means over the surviving examples (both 0 when nothing survives).
    """
    cfg.validate()
    batch.validate(cfg.mu)

    weak_labeled = augment.apply(cfg.weak_spec, batch.labeled, rng)
    weak_unlabeled = augment.apply(cfg.weak_spec, batch.unlabeled, rng)
    strong_unlabeled = augment.apply(cfg.strong_spec, batch.unlabeled, rng)

    out_labeled = model.forward(Tensor(weak_labeled.pixels))
    n_classes = out_labeled.logits.shape[1]
    picked = T.multiply(
        T.log_softmax(out_labeled.logits), Tensor(onehot(weak_labeled.labels, n_classes))
    )
    loss_sup = T.mul_scalar(T.tsum(picked), -1.0 / weak_labeled.size)

    out_weak = model.forward(Tensor(weak_unlabeled.pixels))
    out_strong = model.forward(Tensor(strong_unlabeled.pixels))

    confidence_probs = _softmax_rows(out_weak.logits.data)
    pseudo = confidence_probs.argmax(axis=1)
    mask = confidence_probs.max(axis=1) >= cfg.tau
    count = int(mask.sum())
    mask_rate = count / batch.unlabeled.size

    if count:
        masked_onehot = onehot(pseudo, n_classes) * mask[:, None]
        lu = T.mul_scalar(
            T.tsum(T.multiply(T.log_softmax(out_strong.logits), Tensor(masked_onehot))),
            -1.0 / count,
        )
        feat_dim = out_weak.features.shape[1]
        mask_features = np.repeat(mask[:, None].astype(np.float64), feat_dim, axis=1)
        sq_diff = T.square(T.subtract(out_weak.features, out_strong.features))
        s_masked = T.mul_scalar(T.tsum(T.multiply(sq_diff, Tensor(mask_features))), 1.0 / count)
        d = out_weak.features.data[mask] - out_strong.features.data[mask]
        mean_distance = float(np.mean(np.sqrt((d * d).sum(axis=1))))
    else:
        lu = Tensor(0.0)
        s_masked = Tensor(0.0)
        mean_distance = 0.0

    total = T.add(
        loss_sup, T.add(T.mul_scalar(lu, cfg.lambda_u), T.mul_scalar(s_masked, cfg.tied_weight))
    )
    return FixMatchBreakdown(
        total=total,
        loss_supervised=loss_sup.item(),
        loss_unlabeled=lu.item(),
        similarity_masked=s_masked.item(),
        mask_rate=mask_rate,
        feature_distance_l2=mean_distance,
    )
