"""Experiment orchestration: seeded replicas, per-epoch metrics, checkpoints.

Every metric value is fully determined by (config, seed); the only
nondeterministic column in the metrics CSV is wall_ms, which records real
elapsed time. Seeds run sequentially and are written in seed order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment
from . import tensor as T
from .augment import ImageBatch, make_views
from .config import ExperimentConfig
from .datasets import generate, load_label_budget, save_label_budget, subset_labels
from .errors import ConfigurationError, NumericError
from .losses import tied_loss, tied_mixup_loss
from .models import Model, ModelOutput, build, load_checkpoint, save_checkpoint
from .optim import Sgd, sam_step
from .semisup import SemiBatch, tied_fixmatch_loss
from .tensor import Tensor

METRICS_FIELDS = (
    "seed",
    "epoch",
    "train_total",
    "ce1",
    "ce2",
    "similarity_penalty",
    "feature_distance_l2",
    "mask_rate",
    "test_accuracy",
    "wall_ms",
)


@dataclass
class MetricsRow:
    seed: int
    epoch: int
    train_total: float
    ce1: float
    ce2: float
    similarity_penalty: float
    feature_distance_l2: float
    mask_rate: float
    test_accuracy: float
    wall_ms: float

    def to_csv_line(self) -> str:
        cells = [str(self.seed), str(self.epoch)]
        cells += [
            format(v, ".17g")
            for v in (
                self.train_total,
                self.ce1,
                self.ce2,
                self.similarity_penalty,
                self.feature_distance_l2,
                self.mask_rate,
                self.test_accuracy,
                self.wall_ms,
            )
        ]
        return ",".join(cells)


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(METRICS_FIELDS) + "\n")
        for row in rows:
            fh.write(row.to_csv_line() + "\n")


def evaluate(model: Model, batch: ImageBatch, chunk: int = 256) -> float:
    """Argmax-logits accuracy; deterministic for a given model and split."""
    if batch.size == 0:
        raise ConfigurationError("cannot evaluate on an empty split")
    hits = 0
    with T.no_grad():
        for start in range(0, batch.size, chunk):
            piece = batch.pixels[start:start + chunk]
            logits = model.forward(Tensor(piece)).logits.data
            hits += int((logits.argmax(axis=1) == batch.labels[start:start + chunk]).sum())
    return hits / batch.size


def _forward_views(model: Model, view1: ImageBatch, view2: ImageBatch,
                   forward_mode: str, dtype) -> tuple[ModelOutput, ModelOutput]:
    if forward_mode == "separate":
        return (
            model.forward(Tensor(view1.pixels, dtype=dtype)),
            model.forward(Tensor(view2.pixels, dtype=dtype)),
        )
    n = view1.size
    both = model.forward(
        Tensor(np.concatenate([view1.pixels, view2.pixels], axis=0), dtype=dtype)
    )
    out1 = ModelOutput(
        features=T.slice_rows(both.features, 0, n), logits=T.slice_rows(both.logits, 0, n)
    )
    out2 = ModelOutput(
        features=T.slice_rows(both.features, n, 2 * n), logits=T.slice_rows(both.logits, n, 2 * n)
    )
    return out1, out2


@dataclass
class TrainResult:
    metrics_path: Path
    rows: list[MetricsRow]
    checkpoint_paths: dict[int, Path]
    final_accuracy: dict[int, float]


def train(cfg: ExperimentConfig, out_dir) -> TrainResult:
    """Run every seed of the configured experiment and persist the results.

    Writes ``metrics.csv`` (one row per seed and epoch, merged in seed
    order), one ``model_seed<seed>.ckpt`` per seed, and ``labels.txt`` when
    a label budget is drawn here.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    train_split, test_split = generate(cfg.dataset)
    dtype = np.float64 if cfg.precision == "f64" else np.float32

    labeled_idx = unlabeled_idx = None
    if cfg.mode == "fixmatch":
        if cfg.fixmatch_label_file is not None:
            labeled_idx = load_label_budget(cfg.fixmatch_label_file)
            if labeled_idx.size and (labeled_idx.min() < 0 or labeled_idx.max() >= train_split.size):
                raise ConfigurationError(
                    f"label budget index out of range for a training split of {train_split.size}"
                )
            mask = np.ones(train_split.size, dtype=bool)
            mask[labeled_idx] = False
            unlabeled_idx = np.flatnonzero(mask)
        else:
            budget_rng = np.random.default_rng([cfg.dataset.split_seed, 1])
            labeled_idx, unlabeled_idx = subset_labels(
                train_split, cfg.dataset.labels_per_class, budget_rng
            )
            save_label_budget(out / "labels.txt", labeled_idx)

    steps_per_epoch = _steps_per_epoch(cfg, train_split.size, labeled_idx, unlabeled_idx)
    sgd_cfg = cfg.optimizer
    if sgd_cfg.schedule == "cosine" and sgd_cfg.total_steps == 0:
        from dataclasses import replace

        sgd_cfg = replace(sgd_cfg, total_steps=cfg.epochs * steps_per_epoch)

    rows: list[MetricsRow] = []
    checkpoints: dict[int, Path] = {}
    final_acc: dict[int, float] = {}
    for seed in cfg.seeds:
        seed_rows = _train_one_seed(
            cfg, seed, train_split, test_split, labeled_idx, unlabeled_idx,
            steps_per_epoch, sgd_cfg, dtype, out, checkpoints, final_acc,
        )
        rows.extend(seed_rows)

    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, rows)
    return TrainResult(
        metrics_path=metrics_path, rows=rows, checkpoint_paths=checkpoints, final_accuracy=final_acc
    )


def _steps_per_epoch(cfg, n_train, labeled_idx, unlabeled_idx) -> int:
    if cfg.mode == "fixmatch":
        per_step = cfg.fixmatch.mu * cfg.batch_size
        steps = unlabeled_idx.size // per_step
        if steps < 1:
            raise ConfigurationError(
                f"{unlabeled_idx.size} unlabeled examples cannot fill one batch of mu*B = {per_step}"
            )
        if labeled_idx.size < cfg.batch_size:
            raise ConfigurationError(
                f"label budget {labeled_idx.size} is smaller than the batch size {cfg.batch_size}"
            )
        return steps
    steps = n_train // cfg.batch_size
    if steps < 1:
        raise ConfigurationError(f"batch size {cfg.batch_size} exceeds the training split of {n_train}")
    return steps


def _train_one_seed(cfg, seed, train_split, test_split, labeled_idx, unlabeled_idx,
                    steps_per_epoch, sgd_cfg, dtype, out, checkpoints, final_acc):
    rng = np.random.default_rng(seed)
    model = build(cfg.model_spec(), rng_seed=seed, dtype=dtype)
    opt = Sgd(model.parameters(), sgd_cfg)
    step_index = 0
    rows = []
    for epoch in range(cfg.epochs):
        tick = time.perf_counter()
        sums = np.zeros(5)  # total, ce1, ce2, similarity, feature_distance
        mask_sum = 0.0
        if cfg.mode == "fixmatch":
            unlabeled_order = rng.permutation(unlabeled_idx)
        else:
            order = rng.permutation(train_split.size)
        for step in range(steps_per_epoch):
            if cfg.mode == "fixmatch":
                per_step = cfg.fixmatch.mu * cfg.batch_size
                unlabeled_pick = unlabeled_order[step * per_step:(step + 1) * per_step]
                breakdown = _fixmatch_step(
                    cfg, model, opt, train_split, labeled_idx, unlabeled_pick, rng, step_index
                )
                sums += (
                    breakdown.total.item(),
                    breakdown.loss_supervised,
                    breakdown.loss_unlabeled,
                    breakdown.similarity_masked,
                    breakdown.feature_distance_l2,
                )
                mask_sum += breakdown.mask_rate
            else:
                batch = train_split.take(order[step * cfg.batch_size:(step + 1) * cfg.batch_size])
                if cfg.mode == "mixup":
                    breakdown = _mixup_step(cfg, model, opt, batch, rng, step_index)
                else:
                    breakdown = _tied_step(cfg, model, opt, batch, rng, dtype, step_index)
                sums += (
                    breakdown.total.item(),
                    breakdown.ce1,
                    breakdown.ce2 if breakdown.ce2 is not None else math.nan,
                    breakdown.similarity_penalty,
                    breakdown.feature_distance_l2,
                )
            if not math.isfinite(sums[0]):
                raise NumericError(f"non-finite training loss at seed {seed}, epoch {epoch}, step {step}")
            step_index += 1
        accuracy = evaluate(model, test_split)
        wall_ms = (time.perf_counter() - tick) * 1000.0
        rows.append(
            MetricsRow(
                seed=seed,
                epoch=epoch,
                train_total=sums[0] / steps_per_epoch,
                ce1=sums[1] / steps_per_epoch,
                ce2=sums[2] / steps_per_epoch,
                similarity_penalty=sums[3] / steps_per_epoch,
                feature_distance_l2=sums[4] / steps_per_epoch,
                mask_rate=(mask_sum / steps_per_epoch) if cfg.mode == "fixmatch" else math.nan,
                test_accuracy=accuracy,
                wall_ms=wall_ms,
            )
        )
    path = out / f"model_seed{seed}.ckpt"
    save_checkpoint(model, path)
    checkpoints[seed] = path
    final_acc[seed] = rows[-1].test_accuracy
    return rows


def _tied_step(cfg, model, opt, batch, rng, dtype, step_index):
    views = make_views(cfg.spec1, cfg.spec2, batch, cfg.crop_mode, rng)

    def loss_fn(negate: bool):
        tied_cfg = cfg.tied.with_weight(-cfg.tied.tied_weight) if negate else cfg.tied
        out1, out2 = _forward_views(model, views.view1, views.view2, cfg.forward_mode, dtype)
        return tied_loss(out1, out2, batch.labels, tied_cfg)

    if cfg.sam is not None:
        return sam_step(model, loss_fn, cfg.sam, opt, step_index)
    model.zero_grads()
    breakdown = loss_fn(False)
    T.backward(breakdown.total)
    opt.step(step_index)
    return breakdown


def _mixup_step(cfg, model, opt, batch, rng, step_index):
    base = augment.apply(cfg.spec1, batch, rng)
    _, y1, y2, lam, perm = augment.mixup_batch(base, cfg.mixup.alpha, rng)
    model.zero_grads()
    breakdown = tied_mixup_loss(
        model, base.pixels, y1, base.pixels[perm], y2, lam, cfg.mixup.weight
    )
    T.backward(breakdown.total)
    opt.step(step_index)
    return breakdown


def _fixmatch_step(cfg, model, opt, train_split, labeled_idx, unlabeled_pick, rng, step_index):
    labeled_pick = rng.choice(labeled_idx, size=cfg.batch_size, replace=False)
    semi = SemiBatch(labeled=train_split.take(labeled_pick), unlabeled=train_split.take(unlabeled_pick))
    model.zero_grads()
    breakdown = tied_fixmatch_loss(model, semi, cfg.fixmatch, rng)
    T.backward(breakdown.total)
    opt.step(step_index)
    return breakdown


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint_path, split: str = "test") -> float:
    """Rebuild the configured model, load the checkpoint, score the split."""
    cfg.validate()
    train_split, test_split = generate(cfg.dataset)
    model = build(cfg.model_spec(), rng_seed=cfg.seeds[0])
    load_checkpoint(model, checkpoint_path)
    return evaluate(model, train_split if split == "train" else test_split)
