"""Desk-scale data: synthetic generators, a raw binary reader/writer, and
deterministic label-budget subsetting.

Binary format, bit-exact: records of [1 label byte][C*H*W pixel bytes],
pixels scaled to [0,1] by /255. The label-budget file is plain text with
one integer training index per line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import ImageBatch
from .errors import ConfigurationError, FormatError


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic generator or binary-file source plus split parameters.

    blobs: ``classes`` Gaussian clusters in R^``dim``, stored as N x 1 x 1 x
    dim images. striped_images: sinusoidal stripe patterns whose frequency
    is class-dependent, with per-image random phase and pixel noise.
    binary_file: records read from ``path``. Splits are a deterministic
    80/20 shuffle by ``split_seed``.
    """

    kind: str
    size: int = 1000
    classes: int = 4
    dim: int = 16
    channels: int = 1
    height: int = 8
    width: int = 8
    noise: float = 0.1
    split_seed: int = 0
    labels_per_class: int | None = None
    path: str | None = None

    def validate(self) -> None:
        if self.kind not in ("blobs", "striped_images", "binary_file"):
            raise ConfigurationError(f"unknown dataset kind '{self.kind}'")
        if self.classes < 2:
            raise ConfigurationError(f"classes must be >= 2, got {self.classes}")
        if self.kind != "binary_file":
            if self.size < self.classes:
                raise ConfigurationError(f"size {self.size} must be >= classes {self.classes}")
            if self.noise < 0:
                raise ConfigurationError(f"noise must be >= 0, got {self.noise}")
        if self.kind == "blobs" and self.dim < 1:
            raise ConfigurationError(f"blobs dim must be >= 1, got {self.dim}")
        if self.kind == "striped_images":
            if self.channels < 1 or self.height < 1 or self.width < 1:
                raise ConfigurationError(
                    f"invalid image dims {self.channels}x{self.height}x{self.width}"
                )
        if self.kind == "binary_file" and not self.path:
            raise ConfigurationError("binary_file dataset needs a path")
        if self.labels_per_class is not None and self.labels_per_class < 1:
            raise ConfigurationError(f"labels_per_class must be >= 1, got {self.labels_per_class}")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        if self.kind == "blobs":
            return (1, 1, self.dim)
        return (self.channels, self.height, self.width)

    @property
    def input_size(self) -> int:
        c, h, w = self.image_shape
        return c * h * w


def _balanced_labels(n: int, classes: int) -> np.ndarray:
    # size N split as evenly as possible: first N mod C classes get one extra
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    return np.repeat(np.arange(classes, dtype=np.int64), counts)


def generate(spec: DatasetSpec, rng: np.random.Generator | None = None) -> tuple[ImageBatch, ImageBatch]:
    """Synthesize the full dataset and return the deterministic 80/20 split."""
    spec.validate()
    if spec.kind == "binary_file":
        raise ConfigurationError("generate() is for synthetic kinds; use read_binary for files")
    rng = rng if rng is not None else np.random.default_rng(spec.split_seed)
    labels = _balanced_labels(spec.size, spec.classes)
    if spec.kind == "blobs":
        centers = rng.uniform(0.25, 0.75, size=(spec.classes, spec.dim))
        pixels = centers[labels] + rng.normal(0.0, spec.noise, size=(spec.size, spec.dim))
        pixels = np.clip(pixels, 0.0, 1.0).reshape(spec.size, 1, 1, spec.dim)
    else:
        pixels = _striped_images(spec, labels, rng)
    full = ImageBatch(pixels, labels)
    order = rng.permutation(spec.size)
    cut = int(round(spec.size * 0.8))
    return full.take(order[:cut]), full.take(order[cut:])


def _striped_images(spec: DatasetSpec, labels: np.ndarray, rng) -> np.ndarray:
    # class c -> c+1 full stripe cycles across the width; bounded phase jitter
    # keeps frequency (not phase coverage) the class-relevant factor
    xs = np.arange(spec.width) / spec.width
    phases = rng.uniform(0.0, 0.5 * np.pi, size=spec.size)
    freq = labels + 1.0
    rows = 0.5 + 0.35 * np.sin(2.0 * np.pi * freq[:, None] * xs[None, :] + phases[:, None])
    imgs = np.repeat(rows[:, None, None, :], spec.height, axis=2)
    imgs = np.repeat(imgs, spec.channels, axis=1)
    imgs = imgs + rng.normal(0.0, spec.noise, size=imgs.shape)
    return np.clip(imgs, 0.0, 1.0)


def subset_labels(train: ImageBatch, per_class: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced label budget: exactly per_class labeled indices per
    class, the rest unlabeled; disjoint and deterministic by the rng state."""
    labels = train.labels
    labeled: list[np.ndarray] = []
    for c in range(int(labels.max()) + 1 if labels.size else 0):
        members = np.flatnonzero(labels == c)
        if members.size < per_class:
            raise ConfigurationError(
                f"class {c} has {members.size} examples, fewer than the budget {per_class}"
            )
        labeled.append(rng.choice(members, size=per_class, replace=False))
    labeled_idx = np.sort(np.concatenate(labeled)) if labeled else np.empty(0, dtype=np.int64)
    mask = np.ones(train.size, dtype=bool)
    mask[labeled_idx] = False
    return labeled_idx.astype(np.int64), np.flatnonzero(mask).astype(np.int64)


def save_label_budget(path, indices: np.ndarray) -> None:
    with open(path, "w") as fh:
        for i in indices:
            fh.write(f"{int(i)}\n")


def load_label_budget(path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise FormatError(f"{path}:{line_no}: not an integer index: '{line}'") from None
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# Raw binary dataset I/O
# ---------------------------------------------------------------------------


def read_binary(path, dims: tuple[int, int, int], classes: int) -> ImageBatch:
    """Parse [label byte][C*H*W pixel bytes] records; pixels scale by /255."""
    c, h, w = dims
    record = 1 + c * h * w
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) % record:
        raise FormatError(
            f"{path}: truncated record at byte {len(blob) - len(blob) % record} "
            f"(file length {len(blob)} is not a multiple of record size {record})"
        )
    n = len(blob) // record
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, record) if n else np.empty((0, record), np.uint8)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        raise FormatError(f"{path}: record {int(bad[0])} has label {int(labels[bad[0]])} >= {classes} classes")
    pixels = raw[:, 1:].astype(np.float64).reshape(n, c, h, w) / 255.0
    return ImageBatch(pixels, labels)


def write_binary(batch: ImageBatch, path) -> None:
    """Inverse of read_binary; pixels are quantized to the nearest /255 step."""
    n = batch.size
    c, h, w = batch.pixels.shape[1:]
    raw = np.empty((n, 1 + c * h * w), dtype=np.uint8)
    raw[:, 0] = batch.labels
    raw[:, 1:] = np.round(batch.pixels.reshape(n, -1) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(raw.tobytes())
