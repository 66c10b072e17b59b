# Standard library
import math
import hashlib
import logging
from pathlib import Path
from dataclasses import dataclass, field

# Third party
import numpy as np
import pandas as pd

# Local
try:
    from causalpima import artifacts
    from causalpima.codec import ModalityBatch
    from causalpima.config import DatasetConfig, ModalitySpec
    from causalpima.errors import ContractViolation
    from causalpima.constants import circles as C
    from causalpima.constants import curves as K
except ImportError:
    import artifacts
    from codec import ModalityBatch
    from config import DatasetConfig, ModalitySpec
    from errors import ContractViolation
    from constants import circles as C
    from constants import curves as K

logger = logging.getLogger(__name__)

DATASET_FORMAT = "causalpima-dataset"
SPLIT_NAMES = ("train", "val", "test")


#########
# HELPERS
#########


def _check_count(n: int):
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ContractViolation(f"n must be a positive count, got {n}")


def _check_image_size(image_size) -> tuple[int, int]:
    height, width = (int(d) for d in image_size)
    if height < 8 or width < 8:
        raise ContractViolation(f"image sides must be >= 8, got {(height, width)}")

    return height, width


def _pick(rng: np.random.Generator, options: tuple, probs: tuple) -> str:
    return options[rng.choice(len(options), p=probs)]


def render_circle(
    radius: float, shift: float, hue: str, image_size: tuple[int, int]
) -> np.ndarray:
    """Filled disc with a one-pixel soft edge. `radius` and `shift` are in
    reference-canvas pixels and are rescaled to the target size."""

    height, width = image_size
    scale = min(height, width) / C.REFERENCE_CANVAS
    rows, cols = np.mgrid[0:height, 0:width] + 0.5
    center_row, center_col = height / 2.0, width / 2.0 + shift * scale
    dist = np.hypot(rows - center_row, cols - center_col)
    coverage = np.clip(radius * scale - dist + 0.5, 0.0, 1.0)
    return coverage[:, :, None] * np.asarray(C.HUE_RGB[hue])[None, None, :]


def stripe_texture(
    curve_type: str, image_size: tuple[int, int], rng: np.random.Generator
) -> np.ndarray:
    """Grayscale stripes, horizontal for type A and vertical for type B."""

    height, width = image_size
    rows, cols = np.mgrid[0:height, 0:width]
    phase = rng.uniform(0.0, 2.0 * math.pi)
    axis = rows if curve_type == "A" else cols
    texture = 0.5 + 0.5 * np.sin(2.0 * math.pi * axis / K.STRIPE_PERIOD + phase)
    texture += rng.normal(0.0, K.TEXTURE_NOISE_STD, size=texture.shape)
    return np.clip(texture, 0.0, 1.0)[:, :, None]


def piecewise_curve(
    grid: np.ndarray, breakpoint: float, slope1: float, slope2: float, intercept: float
) -> np.ndarray:
    return intercept + slope1 * np.minimum(grid, breakpoint) + slope2 * np.maximum(grid - breakpoint, 0.0)


def flip_images(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Flips each (H, W, C) image along each spatial axis with probability 1/2."""

    flips = rng.random((images.shape[0], 2)) < 0.5
    flipped = images.copy()
    flipped[flips[:, 0]] = flipped[flips[:, 0], ::-1]
    flipped[flips[:, 1]] = flipped[flips[:, 1], :, ::-1]
    return flipped


######
# MAIN
######


@dataclass
class CircleSample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    hue: str
    radius_branch: str
    shift_branch: str
    radius: float
    shift: float


@dataclass
class CurveSample:
    curve: np.ndarray  # (grid_len,) in [0, 1]
    image: np.ndarray  # (H, W, 1) in [0, 1]
    type: str
    breakpoint: float
    slope1: float
    slope2: float


@dataclass
class Dataset:
    """Model inputs per modality plus generative labels. Labels are kept apart
    from `modalities` and are never part of a batch."""

    kind: str
    modalities: dict[str, np.ndarray]
    present: dict[str, np.ndarray]
    labels: pd.DataFrame
    factors: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = {name: array.shape[0] for name, array in self.modalities.items()}
        if len(set(sizes.values())) != 1 or len(self.labels) not in sizes.values():
            raise ContractViolation(f"modalities and labels disagree on size: {sizes}, {len(self.labels)}")

        for name in self.modalities:
            self.present.setdefault(name, np.ones(sizes[name], dtype=bool))

    def __len__(self) -> int:
        return len(self.labels)

    def batch(
        self,
        indices: np.ndarray | None = None,
        flip_rng: np.random.Generator | None = None,
    ) -> dict[str, ModalityBatch]:
        """Selected samples per modality. With `flip_rng`, image modalities are
        randomly flipped; curves are left as they are."""

        if indices is None:
            indices = np.arange(len(self))

        batch = {}
        for name, array in self.modalities.items():
            values = array[indices]
            if flip_rng is not None and values.ndim == 4:
                values = flip_images(values, flip_rng)

            batch[name] = ModalityBatch(values, self.present[name][indices])

        return batch

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.kind,
            {name: array[indices] for name, array in self.modalities.items()},
            {name: mask[indices] for name, mask in self.present.items()},
            self.labels.iloc[indices].reset_index(drop=True),
            self.factors,
            dict(self.metadata),
        )

    def check_modalities(self, specs: list[ModalitySpec]):
        expected = {spec.name: spec.shape for spec in specs}
        actual = {name: array.shape[1:] for name, array in self.modalities.items()}
        if expected != actual:
            raise ContractViolation(f"dataset modalities {actual} do not match config {expected}")

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.modalities):
            digest.update(name.encode("utf8"))
            digest.update(np.ascontiguousarray(self.modalities[name], dtype="<f8").tobytes())
            digest.update(self.present[name].astype(np.uint8).tobytes())

        return digest.hexdigest()


def generate_circles(
    n: int,
    image_size: tuple[int, int],
    rng: np.random.Generator,
    spread_is_std: bool = False,
) -> tuple[list[CircleSample], int]:
    """Samples the hue -> radius -> shift probability tree and renders each
    circle. Returns the samples and the number of rejected radius draws."""

    _check_count(n)
    image_size = _check_image_size(image_size)
    to_std = (lambda s: s) if spread_is_std else math.sqrt
    radius_std, shift_std = to_std(C.RADIUS_SPREAD), to_std(C.SHIFT_SPREAD)
    max_radius = C.REFERENCE_CANVAS / 2.0

    samples, redraws = [], 0
    for _ in range(n):
        hue = _pick(rng, C.HUES, C.HUE_PROBS)
        radius_branch = _pick(rng, C.RADIUS_BRANCHES, C.RADIUS_BRANCH_PROBS)
        radius = rng.normal(C.RADIUS_MEANS[hue, radius_branch], radius_std)
        while not 0.0 < radius < max_radius:
            redraws += 1
            radius = rng.normal(C.RADIUS_MEANS[hue, radius_branch], radius_std)

        shift_branch = _pick(rng, C.SHIFT_BRANCHES, C.SHIFT_BRANCH_PROBS)
        shift = rng.normal(C.SHIFT_MEANS[radius_branch][shift_branch], shift_std)
        image = render_circle(radius, shift, hue, image_size)
        samples.append(CircleSample(image, hue, radius_branch, shift_branch, float(radius), float(shift)))

    if redraws:
        logger.info("generate_circles: %d radius draws rejected", redraws)

    return samples, redraws


def generate_curves(
    n: int,
    grid_len: int,
    rng: np.random.Generator,
    image_size: tuple[int, int] = (8, 8),
    noise_std: float = 0.02,
) -> list[CurveSample]:
    _check_count(n)
    image_size = _check_image_size(image_size)
    if grid_len < 2:
        raise ContractViolation(f"grid_len must be >= 2, got {grid_len}")

    grid = np.linspace(0.0, 1.0, grid_len)
    samples = []
    for _ in range(n):
        curve_type = _pick(rng, K.CURVE_TYPES, K.CURVE_TYPE_PROBS)
        breakpoint = rng.uniform(*K.BREAKPOINT_RANGES[curve_type])
        slope1 = rng.uniform(*K.SLOPE1_RANGES[curve_type])
        slope2 = rng.uniform(*K.SLOPE2_RANGES[curve_type])
        curve = piecewise_curve(grid, breakpoint, slope1, slope2, K.CURVE_INTERCEPT)
        if noise_std > 0:
            curve = np.clip(curve + rng.normal(0.0, noise_std, size=grid_len), 0.0, 1.0)

        image = stripe_texture(curve_type, image_size, rng)
        samples.append(CurveSample(curve, image, curve_type, float(breakpoint), float(slope1), float(slope2)))

    return samples


def missing_masks(
    n: int, names: list[str], missing_rate: float, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Each sample independently drops one uniformly chosen modality with
    probability `missing_rate`. At least one modality always remains."""

    present = {name: np.ones(n, dtype=bool) for name in names}
    if missing_rate <= 0 or len(names) < 2:
        return present

    drops = rng.random(n) < missing_rate
    dropped = rng.integers(0, len(names), size=n)
    for index in np.nonzero(drops)[0]:
        present[names[dropped[index]]][index] = False

    return present


def generate_dataset(config: DatasetConfig, rng: np.random.Generator) -> Dataset:
    if config.kind == "circles":
        samples, redraws = generate_circles(config.n, config.image_size, rng, config.spread_is_std)
        labels = pd.DataFrame(
            {
                "hue": [s.hue for s in samples],
                "radius_branch": [s.radius_branch for s in samples],
                "shift_branch": [s.shift_branch for s in samples],
                "radius": [s.radius for s in samples],
                "shift": [s.shift for s in samples],
            }
        )
        modalities = {"image": np.stack([s.image for s in samples])}
        return Dataset("circles", modalities, {}, labels, C.FACTORS, {"redraws": redraws})

    if config.kind == "curves":
        samples = generate_curves(config.n, config.grid_len, rng, config.image_size, config.noise_std)
        labels = pd.DataFrame(
            {
                "type": [s.type for s in samples],
                "breakpoint": [s.breakpoint for s in samples],
                "slope1": [s.slope1 for s in samples],
                "slope2": [s.slope2 for s in samples],
            }
        )
        modalities = {
            "image": np.stack([s.image for s in samples]),
            "curve": np.stack([s.curve for s in samples]),
        }
        present = missing_masks(config.n, list(modalities), config.missing_rate, rng)
        return Dataset("curves", modalities, present, labels, K.CURVE_FACTORS, {})

    raise ContractViolation(f"unknown dataset kind {config.kind!r}")


def split_indices(n: int, fractions, seed: int) -> dict[str, np.ndarray]:
    """Seeded partition of range(n) into train / val / test. Held-out sizes are
    rounded and the training share takes the remainder."""

    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractViolation(f"split must be three fractions summing to 1, got {fractions}")

    order = np.random.default_rng([seed, 2]).permutation(n)
    n_val, n_test = round(fractions[1] * n), round(fractions[2] * n)
    if n_val + n_test >= n:
        raise ContractViolation(f"split {fractions} leaves no training samples out of {n}")

    n_train = n - n_val - n_test
    parts = np.split(order, [n_train, n_train + n_val])
    return {name: np.sort(part) for name, part in zip(SPLIT_NAMES, parts)}


def save_dataset(dataset: Dataset, out_dir: str | Path) -> list[Path]:
    """Writes `<modality>/<index>.bin` tensors, `labels.csv`, `present.csv` and
    `manifest.json`. Returns every file written."""

    out_dir = Path(out_dir)
    written = []
    for name, array in dataset.modalities.items():
        for index, sample in enumerate(array):
            path = out_dir / name / f"{index}.bin"
            artifacts.write_tensor(path, sample)
            written.append(path)

    artifacts.write_csv(out_dir / "labels.csv", dataset.labels)
    present = pd.DataFrame({name: mask.astype(int) for name, mask in dataset.present.items()})
    artifacts.write_csv(out_dir / "present.csv", present)
    manifest = {
        "format": DATASET_FORMAT,
        "kind": dataset.kind,
        "n": len(dataset),
        "modalities": {name: list(array.shape[1:]) for name, array in dataset.modalities.items()},
        "factors": list(dataset.factors),
        "fingerprint": dataset.fingerprint(),
        "metadata": dataset.metadata,
    }
    artifacts.write_json(out_dir / "manifest.json", manifest)
    written += [out_dir / "labels.csv", out_dir / "present.csv", out_dir / "manifest.json"]
    return written


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ContractViolation(f"{path} is not a dataset directory (no manifest.json)")

    manifest = artifacts.read_json(manifest_path)
    if manifest.get("format") != DATASET_FORMAT:
        raise ContractViolation(f"{manifest_path}: unknown format {manifest.get('format')!r}")

    n = int(manifest["n"])
    modalities = {}
    for name, shape in manifest["modalities"].items():
        samples = [artifacts.read_tensor(path / name / f"{index}.bin") for index in range(n)]
        array = np.stack(samples) if samples else np.zeros((0, *shape))
        if array.shape[1:] != tuple(shape):
            raise ContractViolation(f"{name}: stored shape {array.shape[1:]} != manifest {shape}")

        modalities[name] = array

    present_frame = pd.read_csv(path / "present.csv")
    present = {name: present_frame[name].to_numpy().astype(bool) for name in modalities}
    labels = pd.read_csv(path / "labels.csv")
    dataset = Dataset(
        manifest["kind"], modalities, present, labels, tuple(manifest["factors"]), manifest.get("metadata", {})
    )

    if dataset.fingerprint() != manifest["fingerprint"]:
        raise ContractViolation(f"{path}: data does not match the manifest fingerprint")

    return dataset
