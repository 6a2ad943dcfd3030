"""Randomized finite-difference sweep over every differentiable loss.

Each draw builds a small smooth (tanh) model, freezes a batch and any
stochastic inputs, and compares autodiff parameter gradients against
central differences. Stochastic pieces are re-derived from a fixed seed on
every loss evaluation so the finite-difference closure is deterministic;
the confidence threshold for the pseudo-labeling draws is placed in the
widest gap of the base confidences so a 1e-5 parameter nudge cannot flip
the mask.
"""

from __future__ import annotations

import numpy as np

from .augment import AugmentSpec, ImageBatch
from .losses import SimilarityKind, TiedLossConfig, cross_entropy, tied_loss, tied_mixup_loss
from .models import ModelSpec, build
from .semisup import FixMatchConfig, SemiBatch, tied_fixmatch_loss, _softmax_rows
from .tensor import Tensor, param_grad_check


def _small_mlp(rng: np.random.Generator, input_dim=6, classes=3):
    spec = ModelSpec(
        kind="mlp",
        input_dim=input_dim,
        hidden=(7,),
        feature_dim=5,
        classes=classes,
        activation="tanh",
    )
    return build(spec, rng_seed=int(rng.integers(1 << 30)))


def run_grad_sweep(trials: int = 24, step: float = 1e-5, seed: int = 0) -> list[tuple[str, float]]:
    """At least ``trials`` draws spanning the tied, mixup and pseudo-label
    losses; returns (draw name, max relative error) pairs."""
    rng = np.random.default_rng(seed)
    results: list[tuple[str, float]] = []

    results.append(("softmax_cross_entropy", _check_cross_entropy(rng, step)))

    for kind in ("l2", "l1", "cosine"):
        for weight in (-4.0, 0.0, 4.0):
            results.append(
                (f"tied_{kind}_w{weight:g}", _check_tied(rng, kind, weight, "both", step))
            )
    results.append(("tied_l2_w4_first_only", _check_tied(rng, "l2", 4.0, "first_only", step)))

    n_extra = max(trials - len(results), 8)
    for i in range(n_extra // 2):
        lam = float(rng.uniform(0.1, 0.9))
        weight = float(rng.choice([-2.0, 1.0, 5.0]))
        results.append((f"tied_mixup_{i}", _check_mixup(rng, lam, weight, step)))
    while len(results) < trials:
        i = len(results)
        weight = float(rng.choice([0.0, 1.0, -1.0, 3.0]))
        results.append((f"tied_fixmatch_{i}", _check_fixmatch(rng, weight, step)))
    return results


def _check_cross_entropy(rng, step) -> float:
    model = _small_mlp(rng)
    x = rng.normal(0.0, 1.0, size=(5, 6))
    labels = rng.integers(0, 3, size=5)
    return param_grad_check(
        lambda: cross_entropy(model.forward(Tensor(x)).logits, labels), model.parameters(), step
    )


def _check_tied(rng, kind, weight, branches, step) -> float:
    model = _small_mlp(rng)
    x1 = rng.normal(0.0, 1.0, size=(5, 6))
    x2 = x1 + rng.normal(0.0, 0.3, size=x1.shape)
    labels = rng.integers(0, 3, size=5)
    cfg = TiedLossConfig(
        tied_weight=weight, similarity=SimilarityKind(kind=kind), supervised_branches=branches
    )

    def loss_fn():
        return tied_loss(model.forward(Tensor(x1)), model.forward(Tensor(x2)), labels, cfg).total

    return param_grad_check(loss_fn, model.parameters(), step)


def _check_mixup(rng, lam, weight, step) -> float:
    model = _small_mlp(rng)
    x1 = rng.normal(0.0, 1.0, size=(4, 6))
    x2 = rng.normal(0.0, 1.0, size=(4, 6))
    y1 = rng.integers(0, 3, size=4)
    y2 = rng.integers(0, 3, size=4)

    def loss_fn():
        return tied_mixup_loss(model, x1, y1, x2, y2, lam, weight).total

    return param_grad_check(loss_fn, model.parameters(), step)


def _check_fixmatch(rng, weight, step) -> float:
    model = _small_mlp(rng)
    labeled = ImageBatch(rng.uniform(0.2, 0.8, size=(2, 1, 1, 6)), rng.integers(0, 3, size=2))
    unlabeled = ImageBatch(rng.uniform(0.2, 0.8, size=(6, 1, 1, 6)), np.zeros(6, dtype=np.int64))
    batch = SemiBatch(labeled=labeled, unlabeled=unlabeled)
    aug_seed = int(rng.integers(1 << 30))

    base = FixMatchConfig(
        tau=0.5,
        lambda_u=1.0,
        mu=3,
        tied_weight=weight,
        weak_spec=AugmentSpec(kind="identity"),
        strong_spec=AugmentSpec(kind="gaussian_noise", sigma=0.3),
    )
    cfg = FixMatchConfig(
        tau=_safe_tau(model, unlabeled),
        lambda_u=base.lambda_u,
        mu=base.mu,
        tied_weight=weight,
        weak_spec=base.weak_spec,
        strong_spec=base.strong_spec,
    )

    def loss_fn():
        # fixed augmentation stream: the draw must not change between
        # finite-difference evaluations
        return tied_fixmatch_loss(model, batch, cfg, np.random.default_rng(aug_seed)).total

    return param_grad_check(loss_fn, model.parameters(), step)


def _safe_tau(model, unlabeled: ImageBatch) -> float:
    """Threshold in the widest confidence gap, so the mask is FD-stable."""
    from . import tensor as T

    with T.no_grad():
        logits = model.forward(Tensor(unlabeled.pixels)).logits.data
    conf = np.sort(_softmax_rows(logits).max(axis=1))
    candidates = np.concatenate([conf, [1.0]])
    gaps = np.diff(candidates)
    k = int(np.argmax(gaps))
    if gaps[k] <= 1e-6:
        return 0.5
    return float((candidates[k] + candidates[k + 1]) / 2.0)
