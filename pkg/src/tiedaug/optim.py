"""SGD with momentum/weight decay, learning-rate schedules, and the two-step
sharpness-aware optimizer, including its tied-weight-negating first step."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractViolation
from .tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 0.0
    schedule: str = "constant"
    total_steps: int = 0  # resolved by the training loop for cosine
    milestones: tuple[int, ...] = ()
    factor: float = 0.1

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.schedule not in ("constant", "cosine", "step"):
            raise ConfigurationError(f"unknown schedule '{self.schedule}'")
        if self.schedule == "cosine" and self.total_steps < 0:
            # 0 means "resolve from epochs * steps per epoch" at training time
            raise ConfigurationError("cosine schedule needs total_steps >= 0")
        if self.schedule == "step" and self.factor <= 0:
            raise ConfigurationError(f"step schedule factor must be > 0, got {self.factor}")


def learning_rate(cfg: SgdConfig, step_index: int) -> float:
    """Scheduled rate at a given step (0-based)."""
    if cfg.schedule == "constant":
        return cfg.lr
    if cfg.schedule == "cosine":
        if cfg.total_steps < 1:
            raise ConfigurationError("cosine schedule was never resolved to total_steps >= 1")
        t = min(step_index, cfg.total_steps)
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t / cfg.total_steps))
    return cfg.lr * cfg.factor ** sum(1 for m in cfg.milestones if step_index >= m)


class Sgd:
    """Plain SGD with optional (Nesterov) momentum and decoupled weight decay.

    Per step: p -= lr_t * wd * p, then v = beta*v + g and
    p -= lr_t * (g + beta*v) under Nesterov (or lr_t * v without).
    """

    def __init__(self, params: Sequence[Tensor], cfg: SgdConfig):
        cfg.validate()
        self.params = list(params)
        self.cfg = cfg
        self._velocity: list[np.ndarray | None] = [None] * len(self.params)

    def step(self, step_index: int) -> None:
        cfg = self.cfg
        lr = learning_rate(cfg, step_index)
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractViolation(f"sgd step: parameter {i} has no gradient")
            if cfg.weight_decay:
                p.data -= lr * cfg.weight_decay * p.data
            g = p.grad
            if cfg.momentum:
                v = self._velocity[i]
                v = g.copy() if v is None else cfg.momentum * v + g
                self._velocity[i] = v
                update = g + cfg.momentum * v if cfg.nesterov else v
            else:
                update = g
            p.data -= lr * update


def sgd_step(params: Sequence[Tensor], cfg: SgdConfig, step_index: int = 0) -> None:
    """One stateless step (momentum starts cold); training loops keep an Sgd."""
    Sgd(params, cfg).step(step_index)


@dataclass(frozen=True)
class SamConfig:
    rho: float = 0.05
    tied_first_step: str = "standard"

    def validate(self) -> None:
        if self.rho <= 0:
            raise ConfigurationError(f"sam rho must be > 0, got {self.rho}")
        if self.tied_first_step not in ("standard", "negated"):
            raise ConfigurationError(
                f"tied_first_step must be 'standard' or 'negated', got '{self.tied_first_step}'"
            )


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def sam_step(model, loss_fn: Callable[[bool], object], cfg: SamConfig,
             sgd: Sgd, step_index: int = 0):
    """Two-step sharpness-aware update; returns the second step's breakdown.

    ``loss_fn(negate_tied)`` must rebuild the loss on the same batch/views
    each call. Step 1 ascends rho along the normalized gradient (with the
    tied weight negated when configured); step 2 takes the gradient at the
    perturbed point, restores the weights bitwise, and applies the SGD
    update with the step-2 gradient. Weight decay stays out of the
    perturbation: it is applied only inside the final update.
    """
    cfg.validate()
    params = model.parameters()

    model.zero_grads()
    first = loss_fn(cfg.tied_first_step == "negated")
    T.backward(first.total)
    norm = global_grad_norm(params)

    saved = None
    if norm == 0.0:
        logger.warning("degenerate SAM step: zero gradient norm, skipping perturbation")
    else:
        saved = [p.data.copy() for p in params]
        scale = cfg.rho / norm
        for p in params:
            if p.grad is not None:
                p.data = p.data + scale * p.grad

    model.zero_grads()
    second = loss_fn(False)
    T.backward(second.total)

    if saved is not None:
        for p, orig in zip(params, saved):
            p.data = orig

    sgd.step(step_index)
    return second
