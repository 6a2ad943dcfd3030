"""Seeded stochastic augmentations producing paired training views.

All operators are pure functions of (spec, batch, rng): the same seed and
batch give bitwise-identical outputs, and every kind except mixup leaves
labels untouched. Pixels stay in [0, 1]; additive Gaussian noise is clamped
back into range here (the numerical verifier draws its own unclamped noise
because it studies the exact additive model).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractViolation

AUGMENT_KINDS = ("identity", "crop_flip", "gaussian_noise", "randaugment", "mixup")
RANDAUGMENT_OPS = ("brightness", "contrast", "invert", "translate_x", "translate_y", "cutout")
CUTOUT_FILL = 0.5  # mid-gray stand-in for the dataset mean


@dataclass
class ImageBatch:
    """A batch of images (N x C x H x W, values in [0,1]) with integer labels."""

    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pixels.ndim != 4:
            raise ContractViolation(f"pixels must be N x C x H x W, got shape {self.pixels.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.pixels.shape[0]:
            raise ContractViolation(
                f"labels shape {self.labels.shape} does not match batch of {self.pixels.shape[0]}"
            )

    @property
    def size(self) -> int:
        return int(self.pixels.shape[0])

    def take(self, indices) -> "ImageBatch":
        return ImageBatch(self.pixels[indices], self.labels[indices])


@dataclass(frozen=True)
class AugmentSpec:
    """One augmentation operator and its parameters.

    crop_flip: zero-pad by ``pad`` then random crop back to H x W, then
    horizontal flip with probability ``flip_prob``. gaussian_noise: add
    N(0, sigma) per pixel, clamp to [0,1]. randaugment: ``layers`` ops drawn
    uniformly from the reduced op set, each applied with probability
    ``prob``, strength scaled linearly by ``magnitude``/30.
    """

    kind: str
    pad: int = 2
    flip_prob: float = 0.5
    sigma: float = 0.1
    layers: int = 2
    magnitude: float = 10.0
    prob: float = 1.0
    alpha: float = 0.2

    def validate(self) -> None:
        if self.kind not in AUGMENT_KINDS:
            raise ConfigurationError(f"unknown augmentation kind '{self.kind}'")
        if self.pad < 0:
            raise ConfigurationError(f"pad must be >= 0, got {self.pad}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigurationError(f"flip_prob must be in [0,1], got {self.flip_prob}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.layers < 1:
            raise ConfigurationError(f"randaugment layers must be >= 1, got {self.layers}")
        if not 0.0 <= self.magnitude <= 30.0:
            raise ConfigurationError(f"magnitude must be in [0,30], got {self.magnitude}")
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigurationError(f"prob must be in [0,1], got {self.prob}")
        if self.alpha <= 0:
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")


IDENTITY = AugmentSpec(kind="identity")


@dataclass
class ViewPair:
    view1: ImageBatch
    view2: ImageBatch
    crop_mode: str


def apply(spec: AugmentSpec, batch: ImageBatch, rng: np.random.Generator) -> ImageBatch:
    """Apply one augmentation operator to a batch; labels pass through."""
    spec.validate()
    if spec.kind == "mixup":
        raise ConfigurationError("mixup is not a view augmentation; use mixup_batch / tied_mixup_loss")
    return _apply(spec, batch, rng, crop_uniforms=None)


def _apply(spec, batch, rng, crop_uniforms) -> ImageBatch:
    if spec.kind == "identity":
        return batch
    if spec.kind == "crop_flip":
        return ImageBatch(_crop_flip(spec, batch.pixels, rng, crop_uniforms), batch.labels)
    if spec.kind == "gaussian_noise":
        noisy = batch.pixels + rng.normal(0.0, spec.sigma, size=batch.pixels.shape)
        return ImageBatch(np.clip(noisy, 0.0, 1.0), batch.labels)
    if spec.kind == "randaugment":
        return ImageBatch(_randaugment(spec, batch.pixels, rng), batch.labels)
    raise ConfigurationError(f"unknown augmentation kind '{spec.kind}'")


def _crop_flip(spec, pixels, rng, crop_uniforms) -> np.ndarray:
    n, _, h, w = pixels.shape
    if spec.pad >= min(h, w):
        raise ConfigurationError(f"crop_flip pad {spec.pad} must be smaller than min(H,W)={min(h, w)}")
    # Three unit uniforms per image (row offset, column offset, flip); in
    # shared-crop mode the caller draws them once and both views reuse them.
    u = rng.random((n, 3)) if crop_uniforms is None else crop_uniforms
    p = spec.pad
    oy = np.floor(u[:, 0] * (2 * p + 1)).astype(np.int64)
    ox = np.floor(u[:, 1] * (2 * p + 1)).astype(np.int64)
    flip = u[:, 2] < spec.flip_prob
    padded = np.pad(pixels, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.empty_like(pixels)
    for i in range(n):
        crop = padded[i, :, oy[i]:oy[i] + h, ox[i]:ox[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def _randaugment(spec, pixels, rng) -> np.ndarray:
    out = pixels.copy()
    strength = spec.magnitude / 30.0
    for i in range(out.shape[0]):
        for _ in range(spec.layers):
            op = RANDAUGMENT_OPS[int(rng.integers(len(RANDAUGMENT_OPS)))]
            if rng.random() >= spec.prob:
                continue
            out[i] = _apply_image_op(op, out[i], strength, rng)
    return out


def _apply_image_op(op: str, img: np.ndarray, strength: float, rng) -> np.ndarray:
    _, h, w = img.shape
    if op == "brightness":
        sign = 1.0 if rng.random() < 0.5 else -1.0
        img = img + sign * 0.9 * strength
    elif op == "contrast":
        sign = 1.0 if rng.random() < 0.5 else -1.0
        mean = img.mean()
        img = mean + (img - mean) * (1.0 + sign * 0.9 * strength)
    elif op == "invert":
        img = 1.0 - img
    elif op == "translate_x":
        img = _translate(img, int(round(strength * w / 3.0)) * (1 if rng.random() < 0.5 else -1), axis=2)
    elif op == "translate_y":
        img = _translate(img, int(round(strength * h / 3.0)) * (1 if rng.random() < 0.5 else -1), axis=1)
    elif op == "cutout":
        img = cutout(img, max(1, int(round(strength * min(h, w) / 2.0))), rng)
    return np.clip(img, 0.0, 1.0)


def _translate(img: np.ndarray, shift: int, axis: int) -> np.ndarray:
    if shift == 0:
        return img
    out = np.zeros_like(img)
    src = [slice(None)] * 3
    dst = [slice(None)] * 3
    if shift > 0:
        dst[axis], src[axis] = slice(shift, None), slice(None, -shift)
    else:
        dst[axis], src[axis] = slice(None, shift), slice(-shift, None)
    out[tuple(dst)] = img[tuple(src)]
    return out


def cutout(img: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
    """Fill one fully-contained side x side square with mid-gray."""
    _, h, w = img.shape
    side = min(side, h, w)
    ty = int(rng.integers(h - side + 1))
    tx = int(rng.integers(w - side + 1))
    out = img.copy()
    out[:, ty:ty + side, tx:tx + side] = CUTOUT_FILL
    return out


def make_views(spec1: AugmentSpec, spec2: AugmentSpec, batch: ImageBatch,
               crop_mode: str, rng: np.random.Generator) -> ViewPair:
    """Two stochastic views of one batch.

    With crop_mode='shared' the crop offsets and flip decisions are drawn
    once and reused by both views' crop_flip stage; every other source of
    randomness stays per-view. Draw order is fixed: shared crop uniforms
    (if any), then view 1, then view 2.
    """
    if crop_mode not in ("shared", "independent"):
        raise ConfigurationError(f"crop_mode must be 'shared' or 'independent', got '{crop_mode}'")
    for spec in (spec1, spec2):
        spec.validate()
        if spec.kind == "mixup":
            raise ConfigurationError("mixup is not view-pair compatible; use tied_mixup_loss")
    shared = None
    if crop_mode == "shared" and ("crop_flip" in (spec1.kind, spec2.kind)):
        shared = rng.random((batch.size, 3))
    view1 = _apply(spec1, batch, rng, crop_uniforms=shared)
    view2 = _apply(spec2, batch, rng, crop_uniforms=shared)
    return ViewPair(view1=view1, view2=view2, crop_mode=crop_mode)


def mix(x1: np.ndarray, x2: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * x1 + (1 - lam) * x2."""
    return lam * x1 + (1.0 - lam) * x2


def mixup_batch(batch: ImageBatch, alpha: float, rng: np.random.Generator):
    """Mix each example with a random partner.

    Returns (x_hat, y1, y2, lam, permutation): lam ~ Beta(alpha, alpha), the
    partner index is a uniform random permutation (self-pairing is possible
    and harmless), and both label vectors come back for the mixed
    cross-entropy.
    """
    if alpha <= 0:
        raise ConfigurationError(f"mixup alpha must be > 0, got {alpha}")
    if batch.size < 2:
        raise ContractViolation(f"mixup needs at least 2 examples, got {batch.size}")
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(batch.size)
    x_hat = mix(batch.pixels, batch.pixels[perm], lam)
    return x_hat, batch.labels.copy(), batch.labels[perm], lam, perm
