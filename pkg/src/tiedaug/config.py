"""Flat ``section.key = value`` experiment configuration.

One assignment per line; ``#`` starts a comment; unknown or duplicate keys
are errors so typos cannot silently fall back to defaults. The full key
list is documented in the README.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .augment import AugmentSpec, IDENTITY
from .datasets import DatasetSpec
from .errors import ConfigurationError
from .losses import SimilarityKind, TiedLossConfig
from .models import ModelSpec
from .optim import SamConfig, SgdConfig
from .semisup import FixMatchConfig


def parse_flat(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or "." not in key:
            raise ConfigurationError(f"{source}:{lineno}: key must look like 'section.key', got '{key}'")
        if key in out:
            raise ConfigurationError(f"{source}:{lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def _to_int(v: str) -> int:
    try:
        return int(v)
    except ValueError:
        raise ConfigurationError(f"expected an integer, got '{v}'") from None


def _to_float(v: str) -> float:
    try:
        return float(v)
    except ValueError:
        raise ConfigurationError(f"expected a number, got '{v}'") from None


def _to_bool(v: str) -> bool:
    lowered = v.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigurationError(f"expected true/false, got '{v}'")


def _to_ints(v: str) -> tuple[int, ...]:
    if not v:
        return ()
    return tuple(_to_int(part.strip()) for part in v.split(","))


def _to_floats(v: str) -> tuple[float, ...]:
    if not v:
        return ()
    return tuple(_to_float(part.strip()) for part in v.split(","))


class _Section:
    """Typed accessor over one key namespace with consumption tracking."""

    def __init__(self, values: dict[str, str], source: str):
        self.values = values
        self.source = source
        self.seen: set[str] = set()

    def get(self, key: str, convert, default):
        self.seen.add(key)
        if key not in self.values:
            return default
        try:
            return convert(self.values[key])
        except ConfigurationError as exc:
            raise ConfigurationError(f"{self.source}: key '{key}': {exc}") from None

    def has(self, key: str) -> bool:
        return key in self.values

    def reject_unknown(self) -> None:
        unknown = sorted(set(self.values) - self.seen)
        if unknown:
            raise ConfigurationError(f"{self.source}: unknown config key '{unknown[0]}'")


@dataclass(frozen=True)
class MixupConfig:
    alpha: float = 0.2
    weight: float = 50.0

    def validate(self) -> None:
        if self.alpha <= 0:
            raise ConfigurationError(f"mixup alpha must be > 0, got {self.alpha}")


@dataclass
class ExperimentConfig:
    """Everything one reproducible run needs; see README for the key list."""

    mode: str
    dataset: DatasetSpec
    model_kind: str
    model_feature_dim: int
    model_activation: str
    model_hidden: tuple[int, ...]
    model_channels: tuple[int, int]
    spec1: AugmentSpec
    spec2: AugmentSpec
    crop_mode: str
    tied: TiedLossConfig
    optimizer: SgdConfig
    sam: SamConfig | None
    mixup: MixupConfig | None
    fixmatch: FixMatchConfig | None
    fixmatch_label_file: str | None
    epochs: int
    batch_size: int
    seeds: tuple[int, ...]
    forward_mode: str
    precision: str

    def model_spec(self) -> ModelSpec:
        c, h, w = self.dataset.image_shape
        if self.model_kind == "mlp":
            return ModelSpec(
                kind="mlp",
                input_dim=c * h * w,
                hidden=self.model_hidden,
                feature_dim=self.model_feature_dim,
                classes=self.dataset.classes,
                activation=self.model_activation,
            )
        return ModelSpec(
            kind=self.model_kind,
            in_channels=c,
            height=h,
            width=w,
            channels=self.model_channels,
            feature_dim=self.model_feature_dim,
            classes=self.dataset.classes,
            activation=self.model_activation,
        )

    def validate(self) -> None:
        if self.mode not in ("tied", "mixup", "fixmatch"):
            raise ConfigurationError(f"train.mode must be tied/mixup/fixmatch, got '{self.mode}'")
        if self.epochs < 1:
            raise ConfigurationError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"train.batch_size must be >= 1, got {self.batch_size}")
        if not self.seeds:
            raise ConfigurationError("train.seeds must list at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"train.seeds has duplicates: {self.seeds}")
        if self.forward_mode not in ("separate", "concatenated"):
            raise ConfigurationError(
                f"train.forward_mode must be separate/concatenated, got '{self.forward_mode}'"
            )
        if self.precision not in ("f64", "f32"):
            raise ConfigurationError(f"train.precision must be f64/f32, got '{self.precision}'")
        self.dataset.validate()
        self.model_spec().validate()
        self.spec1.validate()
        self.spec2.validate()
        if self.crop_mode not in ("shared", "independent"):
            raise ConfigurationError(f"augment.crop_mode must be shared/independent, got '{self.crop_mode}'")
        self.tied.validate()
        self.optimizer.validate()
        if self.optimizer.schedule == "cosine" and self.optimizer.total_steps < 0:
            raise ConfigurationError("optimizer.total_steps cannot be negative")

        if self.mode != "tied":
            if self.sam is not None:
                raise ConfigurationError("sam composes only with train.mode = tied")
            if self.forward_mode != "separate":
                raise ConfigurationError("train.forward_mode = concatenated applies only to train.mode = tied")
        if self.sam is not None:
            self.sam.validate()

        if self.mode == "mixup":
            if self.mixup is None:
                raise ConfigurationError("train.mode = mixup needs a mixup section")
            self.mixup.validate()
            if self.spec2.kind != "identity":
                raise ConfigurationError(
                    "mixup mode mixes features as the second view; set augment.spec2.kind = identity"
                )
        elif self.mixup is not None:
            raise ConfigurationError("mixup section present but train.mode is not mixup")

        if self.mode == "fixmatch":
            if self.fixmatch is None:
                raise ConfigurationError("train.mode = fixmatch needs a fixmatch section")
            self.fixmatch.validate()
            for name, spec in (("spec1", self.spec1), ("spec2", self.spec2)):
                if spec.kind != "identity":
                    raise ConfigurationError(
                        f"fixmatch mode takes its views from fixmatch.weak/strong; "
                        f"set augment.{name}.kind = identity"
                    )
            if self.dataset.labels_per_class is None and self.fixmatch_label_file is None:
                raise ConfigurationError(
                    "fixmatch mode needs dataset.labels_per_class or fixmatch.label_file"
                )
        elif self.fixmatch is not None:
            raise ConfigurationError("fixmatch section present but train.mode is not fixmatch")


def _augment_spec(section: _Section, prefix: str) -> AugmentSpec:
    base = AugmentSpec(kind=section.get(f"{prefix}.kind", str, "identity"))
    return AugmentSpec(
        kind=base.kind,
        pad=section.get(f"{prefix}.pad", _to_int, base.pad),
        flip_prob=section.get(f"{prefix}.flip_prob", _to_float, base.flip_prob),
        sigma=section.get(f"{prefix}.sigma", _to_float, base.sigma),
        layers=section.get(f"{prefix}.layers", _to_int, base.layers),
        magnitude=section.get(f"{prefix}.magnitude", _to_float, base.magnitude),
        prob=section.get(f"{prefix}.prob", _to_float, base.prob),
        alpha=section.get(f"{prefix}.alpha", _to_float, base.alpha),
    )


def _dataset_spec(section: _Section) -> DatasetSpec:
    defaults = DatasetSpec(kind="blobs")
    return DatasetSpec(
        kind=section.get("dataset.kind", str, None),
        size=section.get("dataset.size", _to_int, defaults.size),
        classes=section.get("dataset.classes", _to_int, defaults.classes),
        dim=section.get("dataset.dim", _to_int, defaults.dim),
        channels=section.get("dataset.channels", _to_int, defaults.channels),
        height=section.get("dataset.height", _to_int, defaults.height),
        width=section.get("dataset.width", _to_int, defaults.width),
        noise=section.get("dataset.noise", _to_float, defaults.noise),
        split_seed=section.get("dataset.split_seed", _to_int, defaults.split_seed),
        labels_per_class=section.get("dataset.labels_per_class", _to_int, None),
        path=section.get("dataset.path", str, None),
    )


def experiment_from_mapping(values: dict[str, str], source: str = "<config>") -> ExperimentConfig:
    section = _Section(values, source)

    dataset = _dataset_spec(section)
    if dataset.kind is None:
        raise ConfigurationError(f"{source}: missing required key 'dataset.kind'")

    model_kind = section.get("model.kind", str, None)
    if model_kind is None:
        raise ConfigurationError(f"{source}: missing required key 'model.kind'")

    tied = TiedLossConfig(
        tied_weight=section.get("tied.weight", _to_float, 4.0),
        similarity=SimilarityKind(
            kind=section.get("tied.similarity", str, "l2"),
            epsilon=section.get("tied.epsilon", _to_float, 1e-12),
        ),
        supervised_branches=section.get("tied.supervised_branches", str, "both"),
    )

    optimizer = SgdConfig(
        lr=section.get("optimizer.lr", _to_float, 0.1),
        momentum=section.get("optimizer.momentum", _to_float, 0.9),
        nesterov=section.get("optimizer.nesterov", _to_bool, True),
        weight_decay=section.get("optimizer.weight_decay", _to_float, 0.0),
        schedule=section.get("optimizer.schedule", str, "constant"),
        total_steps=section.get("optimizer.total_steps", _to_int, 0),
        milestones=section.get("optimizer.milestones", _to_ints, ()),
        factor=section.get("optimizer.factor", _to_float, 0.1),
    )

    sam = None
    if section.get("sam.enabled", _to_bool, False):
        sam = SamConfig(
            rho=section.get("sam.rho", _to_float, 0.05),
            tied_first_step=section.get("sam.tied_first_step", str, "standard"),
        )
    else:
        # consume the keys so they are not "unknown" when enabled = false
        section.get("sam.rho", _to_float, 0.05)
        section.get("sam.tied_first_step", str, "standard")

    mixup = None
    if section.has("mixup.alpha") or section.has("mixup.weight"):
        mixup = MixupConfig(
            alpha=section.get("mixup.alpha", _to_float, 0.2),
            weight=section.get("mixup.weight", _to_float, 50.0),
        )
    section.seen.update(("mixup.alpha", "mixup.weight"))

    fixmatch = None
    fixmatch_keys = ("fixmatch.tau", "fixmatch.lambda_u", "fixmatch.mu", "fixmatch.weight")
    if any(section.has(k) for k in fixmatch_keys) or any(
        k.startswith("fixmatch.") for k in values
    ):
        fixmatch = FixMatchConfig(
            tau=section.get("fixmatch.tau", _to_float, 0.95),
            lambda_u=section.get("fixmatch.lambda_u", _to_float, 1.0),
            mu=section.get("fixmatch.mu", _to_int, 7),
            tied_weight=section.get("fixmatch.weight", _to_float, 1.0),
            weak_spec=_augment_spec(section, "fixmatch.weak")
            if any(k.startswith("fixmatch.weak.") for k in values)
            else AugmentSpec(kind="crop_flip"),
            strong_spec=_augment_spec(section, "fixmatch.strong")
            if any(k.startswith("fixmatch.strong.") for k in values)
            else AugmentSpec(kind="randaugment", layers=2, magnitude=10.0, prob=0.5),
        )
    label_file = section.get("fixmatch.label_file", str, None)

    cfg = ExperimentConfig(
        mode=section.get("train.mode", str, "tied"),
        dataset=dataset,
        model_kind=model_kind,
        model_feature_dim=section.get("model.feature_dim", _to_int, 16),
        model_activation=section.get("model.activation", str, "tanh"),
        model_hidden=section.get("model.hidden", _to_ints, ()),
        model_channels=tuple(section.get("model.channels", _to_ints, (4, 8))),
        spec1=_augment_spec(section, "augment.spec1"),
        spec2=_augment_spec(section, "augment.spec2"),
        crop_mode=section.get("augment.crop_mode", str, "independent"),
        tied=tied,
        optimizer=optimizer,
        sam=sam,
        mixup=mixup,
        fixmatch=fixmatch,
        fixmatch_label_file=label_file,
        epochs=section.get("train.epochs", _to_int, 1),
        batch_size=section.get("train.batch_size", _to_int, 32),
        seeds=section.get("train.seeds", _to_ints, (0,)),
        forward_mode=section.get("train.forward_mode", str, "separate"),
        precision=section.get("train.precision", str, "f64"),
    )
    section.reject_unknown()
    cfg.validate()
    return cfg


def load_experiment_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return experiment_from_mapping(parse_flat(fh.read(), str(path)), str(path))


# ---------------------------------------------------------------------------
# verify-taylor and make-data configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaylorCliConfig:
    model: str = "linear"  # linear | mlp
    input_dim: int = 16
    feature_dim: int = 8
    hidden: tuple[int, ...] = ()
    sigmas: tuple[float, ...] = (1e-3, 3e-3, 1e-2, 3e-2)
    samples: int = 20000
    probes: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.model not in ("linear", "mlp"):
            raise ConfigurationError(f"taylor.model must be linear/mlp, got '{self.model}'")
        if self.input_dim < 1 or self.feature_dim < 1:
            raise ConfigurationError("taylor dims must be positive")
        if self.probes < 1:
            raise ConfigurationError(f"taylor.probes must be >= 1, got {self.probes}")
        if self.samples < 2:
            raise ConfigurationError(f"taylor.samples must be >= 2, got {self.samples}")
        if not self.sigmas or any(s <= 0 for s in self.sigmas):
            raise ConfigurationError(f"taylor.sigmas must be positive, got {self.sigmas}")


def load_taylor_config(path) -> TaylorCliConfig:
    with open(path) as fh:
        values = parse_flat(fh.read(), str(path))
    section = _Section(values, str(path))
    defaults = TaylorCliConfig()
    cfg = TaylorCliConfig(
        model=section.get("taylor.model", str, defaults.model),
        input_dim=section.get("taylor.input_dim", _to_int, defaults.input_dim),
        feature_dim=section.get("taylor.feature_dim", _to_int, defaults.feature_dim),
        hidden=section.get("taylor.hidden", _to_ints, defaults.hidden),
        sigmas=section.get("taylor.sigmas", _to_floats, defaults.sigmas),
        samples=section.get("taylor.samples", _to_int, defaults.samples),
        probes=section.get("taylor.probes", _to_int, defaults.probes),
        seed=section.get("taylor.seed", _to_int, defaults.seed),
    )
    section.reject_unknown()
    cfg.validate()
    return cfg


def load_dataset_config(path) -> DatasetSpec:
    """A config carrying only dataset.* keys, for make-data."""
    with open(path) as fh:
        values = parse_flat(fh.read(), str(path))
    section = _Section(values, str(path))
    spec = _dataset_spec(section)
    if spec.kind is None:
        raise ConfigurationError(f"{path}: missing required key 'dataset.kind'")
    section.reject_unknown()
    spec.validate()
    return spec
