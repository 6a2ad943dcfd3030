"""Numerical verification that the Gaussian-noise similarity penalty behaves
like a Jacobian (Tikhonov) regularizer to first order, and that the cosine
variant's deviation from 1 shrinks at second order in the noise scale.

The plain Monte-Carlo estimator is kept exactly as advertised (unbiased mean
over fresh draws). The sweep report additionally uses three standard
variance-reduction devices — common random numbers across the noise scales,
antithetic pairs, and an exact-mean Jacobian control variate — all of which
preserve unbiasedness. Without them the reported gap would be dominated by
sampling noise at small scales and the first-order convergence would not be
observable at any affordable sample count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractViolation, NumericError
from .models import Model
from .tensor import Tensor

SMOOTHNESS_ERROR = "Taylor check requires smooth activations (tanh), got a relu model"


def _require_smooth(model: Model) -> None:
    if not model.smooth:
        raise ConfigurationError(SMOOTHNESS_ERROR)


def _features(model: Model, x: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return model.forward(Tensor(x)).features.data


def jacobian(model: Model, x: np.ndarray) -> np.ndarray:
    """Feature Jacobian at one input, F x n, via one backward per feature."""
    _require_smooth(model)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    xt = Tensor(x[None, :], requires_grad=True)
    feats = model.forward(xt).features
    n_features = feats.shape[1]
    out = np.empty((n_features, x.size))
    for f in range(n_features):
        pick = np.zeros((1, n_features))
        pick[0, f] = 1.0
        xt.zero_grad()
        T.backward(T.tsum(T.multiply(feats, Tensor(pick))))
        out[f] = xt.grad[0]
    model.zero_grads()
    return out


def jacobian_frobenius_sq(model: Model, x: np.ndarray) -> float:
    """Squared Frobenius norm of the feature Jacobian at x."""
    j = jacobian(model, x)
    return float((j * j).sum())


def mc_tied_gaussian_penalty(model: Model, x: np.ndarray, sigma: float,
                             samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Unbiased Monte-Carlo mean of the squared feature displacement under
    additive N(0, sigma) input noise, with its standard error.

    The noise here is never clamped: this estimates the exact additive
    model, not the [0,1]-clipped training augmentation.
    """
    if sigma <= 0:
        raise ContractViolation(f"sigma must be > 0, got {sigma}")
    if samples < 2:
        raise ContractViolation(f"need at least 2 samples, got {samples}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    base = _features(model, x[None, :])
    eps = rng.normal(0.0, sigma, size=(samples, x.size))
    moved = _features(model, x[None, :] + eps)
    vals = ((moved - base) ** 2).sum(axis=1)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(samples))


@dataclass(frozen=True)
class TaylorCheckConfig:
    """Probe inputs (P x n), noise scales, total sample draws, and base seed."""

    model: Model
    probes: np.ndarray
    sigmas: tuple[float, ...] = (1e-3, 3e-3, 1e-2, 3e-2)
    samples: int = 20000
    seed: int = 0

    def validate(self) -> None:
        probes = np.asarray(self.probes)
        if probes.ndim != 2 or probes.shape[0] < 1:
            raise ConfigurationError(f"probes must be a P x n array, got shape {probes.shape}")
        if any(s <= 0 for s in self.sigmas) or not self.sigmas:
            raise ConfigurationError(f"sigmas must be positive, got {self.sigmas}")
        if self.samples < 2:
            raise ConfigurationError(f"samples must be >= 2, got {self.samples}")


@dataclass
class TaylorRow:
    probe_index: int
    sigma: float
    mc_estimate: float
    std_error: float
    taylor_prediction: float
    relative_gap: float


@dataclass
class TaylorCheckReport:
    rows: list[TaylorRow]

    def for_probe(self, probe_index: int) -> list[TaylorRow]:
        return [r for r in self.rows if r.probe_index == probe_index]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["probe_index", "sigma", "mc_estimate", "std_error", "taylor_prediction", "relative_gap"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.probe_index]
                    + [format(v, ".17g") for v in
                       (r.sigma, r.mc_estimate, r.std_error, r.taylor_prediction, r.relative_gap)]
                )


def taylor_check(cfg: TaylorCheckConfig) -> TaylorCheckReport:
    """Per probe and noise scale: variance-reduced MC estimate of the penalty,
    the first-order prediction sigma^2 * |J|_F^2, and their relative gap.

    Draws are shared across the scales (scaled common normals), paired
    antithetically (cancels the odd-order remainder), and centered with the
    per-draw Jacobian quadratic as a control variate whose mean is the
    prediction itself. The estimator stays unbiased, and what remains of
    the gap is the genuine higher-order Taylor remainder, so it shrinks to
    zero with the noise scale.
    """
    cfg.validate()
    _require_smooth(cfg.model)
    probes = np.asarray(cfg.probes, dtype=np.float64)
    pairs = cfg.samples // 2
    rows: list[TaylorRow] = []
    for p_idx in range(probes.shape[0]):
        x = probes[p_idx]
        jac = jacobian(cfg.model, x)
        pred_unit = float((jac * jac).sum())
        if pred_unit == 0.0:
            raise NumericError(f"probe {p_idx} has a zero feature Jacobian; relative gap undefined")
        rng = np.random.default_rng([cfg.seed, p_idx])
        u = rng.normal(0.0, 1.0, size=(pairs, x.size))
        ju_sq = ((u @ jac.T) ** 2).sum(axis=1)
        base = _features(cfg.model, x[None, :])
        for sigma in cfg.sigmas:
            up = _features(cfg.model, x[None, :] + sigma * u)
            dn = _features(cfg.model, x[None, :] - sigma * u)
            d_up = ((up - base) ** 2).sum(axis=1)
            d_dn = ((dn - base) ** 2).sum(axis=1)
            sig_sq = sigma * sigma
            per_pair = 0.5 * (d_up + d_dn) - sig_sq * ju_sq + sig_sq * pred_unit
            mc = float(per_pair.mean())
            se = float(per_pair.std(ddof=1) / np.sqrt(pairs))
            pred = sig_sq * pred_unit
            rows.append(
                TaylorRow(
                    probe_index=p_idx,
                    sigma=float(sigma),
                    mc_estimate=mc,
                    std_error=se,
                    taylor_prediction=pred,
                    relative_gap=abs(mc - pred) / pred,
                )
            )
    return TaylorCheckReport(rows)


@dataclass
class CosineRow:
    sigma: float
    mc_cosine_mean: float
    residual: float


@dataclass
class CosineExpansionReport:
    rows: list[CosineRow]
    predicted_constant_term: float
    residual_slope: float | None

    @property
    def residuals(self) -> list[float]:
        return [r.residual for r in self.rows]


def cosine_expansion_check(model: Model, x: np.ndarray, sigmas: Sequence[float],
                           samples: int, seed: int = 0) -> CosineExpansionReport:
    """Mean feature-cosine under input noise across a scale sweep.

    The zeroth-order prediction is exactly 1; the report carries the
    residual 1 - E[cos] per scale and the log-log slope of residual vs
    scale (second-order behavior puts the slope near 2). Scale 0 is allowed
    and contributes an exact-1 row that is excluded from the fit.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    base = _features(model, x[None, :])[0]
    base_norm = float(np.sqrt((base * base).sum()))
    if base_norm < 1e-6:
        raise ContractViolation(f"feature norm {base_norm:.3g} at the probe is below 1e-6")
    if samples < 2:
        raise ContractViolation(f"need at least 2 samples, got {samples}")
    if any(s < 0 for s in sigmas) or len(sigmas) == 0:
        raise ContractViolation(f"sigmas must be >= 0, got {tuple(sigmas)}")

    pairs = samples // 2
    rng = np.random.default_rng(seed)
    u = rng.normal(0.0, 1.0, size=(pairs, x.size))
    rows: list[CosineRow] = []
    for sigma in sigmas:
        if sigma == 0.0:
            # Identical bits, angle zero by definition.
            rows.append(CosineRow(sigma=0.0, mc_cosine_mean=1.0, residual=0.0))
            continue
        moved = np.concatenate(
            [_features(model, x[None, :] + sigma * u), _features(model, x[None, :] - sigma * u)]
        )
        norms = np.sqrt((moved * moved).sum(axis=1))
        cos = (moved @ base) / np.maximum(norms * base_norm, 1e-300)
        mean_cos = float(cos.mean())
        rows.append(CosineRow(sigma=float(sigma), mc_cosine_mean=mean_cos, residual=1.0 - mean_cos))

    fit = [(r.sigma, r.residual) for r in rows if r.sigma > 0]
    slope = None
    if len(fit) >= 2:
        if any(res <= 0 for _, res in fit):
            raise NumericError("non-positive cosine residual; increase samples or scales")
        slope = float(np.polyfit(np.log([s for s, _ in fit]), np.log([r for _, r in fit]), 1)[0])
    return CosineExpansionReport(rows=rows, predicted_constant_term=1.0, residual_slope=slope)
