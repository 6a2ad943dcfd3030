"""Two-headed models: every forward returns (features, logits).

The feature head is exactly the pre-logit layer, so logits are always an
affine function of features. There are no normalization layers and no
cross-example operations, which keeps separate and concatenated batch
forwards numerically equivalent.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractViolation, FormatError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"TIEDCKPT1"

_ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh}


@dataclass
class ModelOutput:
    """Pre-logit features (N x F) and class logits (N x C) of one forward."""

    features: Tensor
    logits: Tensor


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description for :func:`build`.

    mlp: ``input_dim`` -> each of ``hidden`` -> ``feature_dim``, activation
    after every dense layer; the post-activation feature layer feeds the
    logits head.

    small_conv: two conv blocks (3x3 conv -> activation -> 2x2 average
    pool) on ``in_channels`` x ``height`` x ``width`` input with
    ``channels`` filters, then one dense hidden layer of ``feature_dim``.
    """

    kind: str
    feature_dim: int
    classes: int
    activation: str = "tanh"
    input_dim: int = 0
    hidden: tuple[int, ...] = ()
    in_channels: int = 0
    height: int = 0
    width: int = 0
    channels: tuple[int, int] = (4, 8)

    def validate(self) -> None:
        if self.kind not in ("mlp", "small_conv"):
            raise ConfigurationError(f"unknown model kind '{self.kind}'")
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation '{self.activation}'")
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.classes < 2:
            raise ConfigurationError(f"classes must be >= 2, got {self.classes}")
        if self.kind == "mlp":
            if self.input_dim < 1:
                raise ConfigurationError(f"mlp input_dim must be >= 1, got {self.input_dim}")
            if any(h < 1 for h in self.hidden):
                raise ConfigurationError(f"mlp hidden widths must be positive, got {self.hidden}")
        else:
            if self.in_channels < 1 or self.height < 1 or self.width < 1:
                raise ConfigurationError(
                    f"small_conv input dims must be positive, got "
                    f"{self.in_channels}x{self.height}x{self.width}"
                )
            if len(self.channels) != 2 or any(c < 1 for c in self.channels):
                raise ConfigurationError(f"small_conv needs two positive channel counts, got {self.channels}")
            if self.height % 4 or self.width % 4:
                raise ConfigurationError(
                    f"small_conv pools twice, so height and width must be multiples of 4, "
                    f"got {self.height}x{self.width}"
                )


class Model:
    """Base for parameterized models; parameters keep declaration order."""

    def __init__(self, spec: ModelSpec | None):
        self.spec = spec
        self._params: list[tuple[str, Tensor]] = []

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True, dtype=data.dtype)
        self._params.append((name, t))
        return t

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self._params]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self._params)

    def zero_grads(self) -> None:
        for _, t in self._params:
            t.zero_grad()

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    @property
    def smooth(self) -> bool:
        """True when the forward pass is differentiable everywhere."""
        return self.spec is None or self.spec.activation == "tanh"

    def forward(self, x: Tensor) -> ModelOutput:
        raise NotImplementedError


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Mlp(Model):
    def __init__(self, spec: ModelSpec, rng_seed: int, dtype=np.float64):
        super().__init__(spec)
        rng = np.random.default_rng(rng_seed)
        dims = [spec.input_dim, *spec.hidden, spec.feature_dim]
        self._layers: list[tuple[Tensor, Tensor]] = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = self._param(f"dense{i}.weight", _uniform_fan_in(rng, d_in, (d_in, d_out), dtype))
            b = self._param(f"dense{i}.bias", _uniform_fan_in(rng, d_in, (d_out,), dtype))
            self._layers.append((w, b))
        self.head_weight = self._param(
            "head.weight", _uniform_fan_in(rng, spec.feature_dim, (spec.feature_dim, spec.classes), dtype)
        )
        self.head_bias = self._param("head.bias", _uniform_fan_in(rng, spec.feature_dim, (spec.classes,), dtype))
        self._act = _ACTIVATIONS[spec.activation]

    def forward(self, x: Tensor) -> ModelOutput:
        if x.data.ndim == 4:
            # Accept image-shaped batches of flat data (N x 1 x 1 x d).
            x = T.reshape(x, (x.shape[0], -1))
        if x.data.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ContractViolation(f"mlp expects N x {self.spec.input_dim} input, got shape {x.shape}")
        h = x
        for w, b in self._layers:
            h = self._act(T.add_bias(T.matmul(h, w), b))
        logits = T.add_bias(T.matmul(h, self.head_weight), self.head_bias)
        return ModelOutput(features=h, logits=logits)


class SmallConv(Model):
    """Two conv blocks (conv -> activation -> 2x2 avg pool) + one dense hidden layer."""

    def __init__(self, spec: ModelSpec, rng_seed: int, dtype=np.float64):
        super().__init__(spec)
        rng = np.random.default_rng(rng_seed)
        c1, c2 = spec.channels
        k = 3
        self.conv1_w = self._param(
            "conv1.weight", _uniform_fan_in(rng, spec.in_channels * k * k, (c1, spec.in_channels, k, k), dtype)
        )
        self.conv1_b = self._param("conv1.bias", _uniform_fan_in(rng, spec.in_channels * k * k, (c1,), dtype))
        self.conv2_w = self._param("conv2.weight", _uniform_fan_in(rng, c1 * k * k, (c2, c1, k, k), dtype))
        self.conv2_b = self._param("conv2.bias", _uniform_fan_in(rng, c1 * k * k, (c2,), dtype))
        flat = c2 * (spec.height // 4) * (spec.width // 4)
        self._flat = flat
        self.dense_w = self._param("dense.weight", _uniform_fan_in(rng, flat, (flat, spec.feature_dim), dtype))
        self.dense_b = self._param("dense.bias", _uniform_fan_in(rng, flat, (spec.feature_dim,), dtype))
        self.head_weight = self._param(
            "head.weight", _uniform_fan_in(rng, spec.feature_dim, (spec.feature_dim, spec.classes), dtype)
        )
        self.head_bias = self._param("head.bias", _uniform_fan_in(rng, spec.feature_dim, (spec.classes,), dtype))
        self._act = _ACTIVATIONS[spec.activation]

    def forward(self, x: Tensor) -> ModelOutput:
        s = self.spec
        if x.data.ndim != 4 or x.shape[1:] != (s.in_channels, s.height, s.width):
            raise ContractViolation(
                f"small_conv expects N x {s.in_channels} x {s.height} x {s.width} input, got shape {x.shape}"
            )
        h = T.avgpool2(self._act(T.conv2d(x, self.conv1_w, self.conv1_b)))
        h = T.avgpool2(self._act(T.conv2d(h, self.conv2_w, self.conv2_b)))
        h = T.reshape(h, (x.shape[0], self._flat))
        features = self._act(T.add_bias(T.matmul(h, self.dense_w), self.dense_b))
        logits = T.add_bias(T.matmul(features, self.head_weight), self.head_bias)
        return ModelOutput(features=features, logits=logits)


class LinearModel(Model):
    """Affine feature map with an affine logits head (no activations).

    Used by the numerical verifier, where exact Jacobians and exact
    feature-space linearity are needed; not reachable through ModelSpec.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray,
                 head_weight: np.ndarray, head_bias: np.ndarray):
        super().__init__(None)
        self.weight = self._param("linear.weight", np.asarray(weight, dtype=np.float64))
        self.bias = self._param("linear.bias", np.asarray(bias, dtype=np.float64))
        self.head_weight = self._param("head.weight", np.asarray(head_weight, dtype=np.float64))
        self.head_bias = self._param("head.bias", np.asarray(head_bias, dtype=np.float64))
        self.input_dim = self.weight.shape[0]
        self.feature_dim = self.weight.shape[1]

    @classmethod
    def random(cls, input_dim: int, feature_dim: int, classes: int = 2,
               seed: int = 0, scale: float = 1.0) -> "LinearModel":
        rng = np.random.default_rng(seed)
        return cls(
            rng.normal(0.0, scale, (input_dim, feature_dim)),
            rng.normal(0.0, scale, (feature_dim,)),
            rng.normal(0.0, scale, (feature_dim, classes)),
            rng.normal(0.0, scale, (classes,)),
        )

    def forward(self, x: Tensor) -> ModelOutput:
        if x.data.ndim == 4:
            x = T.reshape(x, (x.shape[0], -1))
        if x.data.ndim != 2 or x.shape[1] != self.input_dim:
            raise ContractViolation(f"linear model expects N x {self.input_dim} input, got shape {x.shape}")
        features = T.add_bias(T.matmul(x, self.weight), self.bias)
        logits = T.add_bias(T.matmul(features, self.head_weight), self.head_bias)
        return ModelOutput(features=features, logits=logits)


def build(spec: ModelSpec, rng_seed: int, dtype=np.float64) -> Model:
    """Construct a model with fan-in scaled-uniform init; same seed, same bits."""
    spec.validate()
    if spec.kind == "mlp":
        return Mlp(spec, rng_seed, dtype)
    return SmallConv(spec, rng_seed, dtype)


# ---------------------------------------------------------------------------
# Checkpoints: magic, then per parameter in declaration order:
# u32 LE name length, name bytes, u32 rank, u32 extents, raw f64 LE values.
# ---------------------------------------------------------------------------


def save_checkpoint(model: Model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, t in model.named_parameters():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(model: Model, path) -> None:
    """Fill ``model``'s parameters from a checkpoint written for the same spec."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated checkpoint while reading {what} at byte {off}")
        piece = blob[off:off + n]
        off += n
        return piece

    for name, t in model.named_parameters():
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        stored = take(name_len, "name").decode("utf-8")
        if stored != name:
            raise FormatError(f"{path}: parameter mismatch, checkpoint has '{stored}' where model has '{name}'")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
        if shape != t.data.shape:
            raise FormatError(f"{path}: shape mismatch for '{name}': checkpoint {shape} vs model {t.data.shape}")
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(take(8 * count, f"values of '{name}'"), dtype="<f8").reshape(shape)
        t.data = values.astype(t.data.dtype)
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after last parameter")
