# Standard library
import json
import hashlib
from pathlib import Path
from dataclasses import dataclass, field, fields, asdict, is_dataclass

# Third party
import json_repair

# Local
try:
    from causalpima.errors import ConfigurationError
    from causalpima.constants import (
        PRESETS,
        VARIANCE_FLOOR,
        EDGE_ZERO_TOL,
        GRAD_CLIP_NORM,
        GMM_FIT_MAX_ITERS,
    )
except ImportError:
    from errors import ConfigurationError
    from constants import (
        PRESETS,
        VARIANCE_FLOOR,
        EDGE_ZERO_TOL,
        GRAD_CLIP_NORM,
        GMM_FIT_MAX_ITERS,
    )


#########
# HELPERS
#########


DATASET_KINDS = ("circles", "curves")
DECODER_KINDS = ("shared", "per_cluster", "expert")
PRETRAIN_MODES = ("reconstruction", "vae", "none")
OPTIMIZERS = ("adam", "sgd")


def deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value

    return merged


def build_section(cls, values: dict | None, section: str):
    values = values or {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"[{section}] must be a mapping")

    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigurationError(f"[{section}] unknown keys: {sorted(unknown)}")

    kwargs = {}
    for name, value in values.items():
        nested = NESTED_SECTIONS.get((cls, name))
        if nested is not None:
            value = build_section(nested, value, f"{section}.{name}")
        elif isinstance(value, list):
            value = tuple(value)

        kwargs[name] = value

    try:
        return cls(**kwargs)
    except TypeError as error:
        raise ConfigurationError(f"[{section}] {error}")


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigurationError(message)


######
# MAIN
######


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    shape: tuple[int, ...]
    decoder: str  # "shared", "per_cluster" or "expert"

    @property
    def size(self) -> int:
        size = 1
        for dim in self.shape:
            size *= dim

        return size


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "circles"
    n: int = 1024
    image_size: tuple[int, int] = (16, 16)
    grid_len: int = 100
    noise_std: float = 0.02  # Additive curve noise
    missing_rate: float = 0.0  # Chance that a curve sample drops one modality
    spread_is_std: bool = False  # Read the circle tree's spreads as std, not variance
    split: tuple[float, float, float] = (1.0, 0.0, 0.0)  # Train / validation / test fractions
    flip: bool = False  # Random image flips along each axis in training batches


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int = 2
    arities: tuple[int, ...] = (2, 2, 2)
    encoder_widths: tuple[int, ...] = (64, 32, 16)
    decoder_widths: tuple[int, ...] = (16, 32, 64)
    decoders: dict = field(default_factory=lambda: {"image": "shared"})
    init_beta: float = 1.0

    @property
    def num_clusters(self) -> int:
        total = 1
        for arity in self.arities:
            total *= arity

        return total


@dataclass(frozen=True)
class BetaSchedule:
    beta_init: float = 1.0
    beta_final: float = 1.0
    update_every: int = 1
    total_steps: int | None = None  # Defaults to every optimizer step of the run


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    optimizer: str = "adam"
    grad_clip: float = GRAD_CLIP_NORM
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    xi_noise_std: float = 0.0
    xi_noise_every: int = 1
    extra_a_steps: int = 1
    gmm_iterations: int = 1
    pretrain_mode: str = "reconstruction"
    pretrain_epochs: int = 10
    gmm_fit_iters: int = GMM_FIT_MAX_ITERS
    lambda_b: float = 0.0
    variance_floor: float = VARIANCE_FLOOR
    zero_tol: float = EDGE_ZERO_TOL
    checkpoint_every: int = 10
    allow_zero_lr: bool = False


NESTED_SECTIONS = {(TrainConfig, "beta"): BetaSchedule}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        if not isinstance(values, dict):
            raise ConfigurationError("config must be a mapping")

        values = dict(values)
        preset = values.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigurationError(f"unknown preset {preset!r}")

            values = deep_merge(PRESETS[preset], values)

        unknown = set(values) - {"dataset", "model", "train", "seed"}
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")

        config = cls(
            dataset=build_section(DatasetConfig, values.get("dataset"), "dataset"),
            model=build_section(ModelConfig, values.get("model"), "model"),
            train=build_section(TrainConfig, values.get("train"), "train"),
            seed=values.get("seed", 0),
        )
        config.validate()
        return config

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(self.dataset, self.model, self.train, seed)

    def to_dict(self) -> dict:
        def plain(value):
            if is_dataclass(value):
                return {k: plain(v) for k, v in asdict(value).items()}
            if isinstance(value, (tuple, list)):
                return [plain(v) for v in value]
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            return value

        return plain(self)

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf8")).hexdigest()

    def modalities(self) -> list[ModalitySpec]:
        height, width = self.dataset.image_size
        if self.dataset.kind == "circles":
            shapes = {"image": (height, width, 3)}
        else:
            shapes = {"image": (height, width, 1), "curve": (self.dataset.grid_len,)}

        return [
            ModalitySpec(name, shape, self.model.decoders.get(name, "shared"))
            for name, shape in shapes.items()
        ]

    def validate(self):
        data, model, train = self.dataset, self.model, self.train

        _require(isinstance(self.seed, int) and self.seed >= 0, "seed must be a nonnegative integer")
        _require(data.kind in DATASET_KINDS, f"dataset.kind must be one of {DATASET_KINDS}")
        _require(isinstance(data.n, int) and data.n >= 1, "dataset.n must be >= 1")
        _require(len(data.image_size) == 2, "dataset.image_size must be [H, W]")
        _require(min(data.image_size) >= 8, "dataset.image_size sides must be >= 8")
        _require(data.grid_len >= 2, "dataset.grid_len must be >= 2")
        _require(data.noise_std >= 0, "dataset.noise_std must be >= 0")
        _require(0 <= data.missing_rate < 1, "dataset.missing_rate must be in [0, 1)")
        _require(len(data.split) == 3, "dataset.split must be [train, val, test]")
        _require(all(f >= 0 for f in data.split), "dataset.split fractions must be >= 0")
        _require(abs(sum(data.split) - 1.0) < 1e-9, "dataset.split fractions must sum to 1")
        _require(data.split[0] > 0, "dataset.split needs a nonempty training share")

        _require(model.latent_dim >= 1, "model.latent_dim must be >= 1")
        _require(len(model.arities) >= 1, "model.arities must name at least one node")
        _require(all(c >= 1 for c in model.arities), "model.arities must all be >= 1")
        _require(all(w >= 1 for w in model.encoder_widths), "model.encoder_widths must be positive")
        _require(all(w >= 1 for w in model.decoder_widths), "model.decoder_widths must be positive")
        _require(model.init_beta > 0, "model.init_beta must be > 0")
        for name, kind in model.decoders.items():
            _require(kind in DECODER_KINDS, f"model.decoders.{name} must be one of {DECODER_KINDS}")
        for spec in self.modalities():
            if spec.decoder == "expert":
                _require(len(spec.shape) == 1, f"expert decoder needs a curve modality, not {spec.name}")

        if train.allow_zero_lr:
            _require(train.learning_rate >= 0, "train.learning_rate must be >= 0")
        else:
            _require(train.learning_rate > 0, "train.learning_rate must be > 0")
        for name in (
            "epochs",
            "extra_a_steps",
            "gmm_iterations",
            "pretrain_epochs",
            "gmm_fit_iters",
            "checkpoint_every",
        ):
            _require(getattr(train, name) >= 0, f"train.{name} must be >= 0")
        _require(train.batch_size >= 1, "train.batch_size must be >= 1")
        _require(train.xi_noise_every >= 1, "train.xi_noise_every must be >= 1")
        _require(train.xi_noise_std >= 0, "train.xi_noise_std must be >= 0")
        _require(train.lambda_b >= 0, "train.lambda_b must be >= 0")
        _require(train.grad_clip > 0, "train.grad_clip must be > 0")
        _require(train.variance_floor > 0, "train.variance_floor must be > 0")
        _require(train.zero_tol >= 0, "train.zero_tol must be >= 0")
        _require(train.optimizer in OPTIMIZERS, f"train.optimizer must be one of {OPTIMIZERS}")
        _require(train.pretrain_mode in PRETRAIN_MODES, f"train.pretrain_mode must be one of {PRETRAIN_MODES}")

        beta = train.beta
        _require(beta.beta_final > 0, "train.beta.beta_final must be > 0")
        _require(beta.beta_init >= beta.beta_final, "train.beta.beta_init must be >= beta_final")
        _require(beta.update_every >= 1, "train.beta.update_every must be >= 1")


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ConfigurationError(f"cannot read config {path}: {error}")

    values = json_repair.loads(text) if text.strip() else {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"config {path} is not a mapping")

    if seed is not None:
        values["seed"] = seed

    return ExperimentConfig.from_dict(values)
