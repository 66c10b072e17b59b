# Third party
import numpy as np
import pytest

# Local
from causalpima.config import ExperimentConfig
from causalpima.commands.generate import build_dataset


def tiny_config(**overrides) -> ExperimentConfig:
    values = {
        "dataset": {"kind": "circles", "n": 24, "image_size": [8, 8]},
        "model": {
            "latent_dim": 2,
            "arities": [2, 2],
            "encoder_widths": [8],
            "decoder_widths": [8],
        },
        "train": {
            "learning_rate": 1e-3,
            "epochs": 2,
            "batch_size": 8,
            "pretrain_epochs": 1,
            "gmm_fit_iters": 5,
            "checkpoint_every": 1,
        },
        "seed": 3,
    }
    for section, changes in overrides.items():
        if isinstance(changes, dict):
            values[section] = {**values.get(section, {}), **changes}
        else:
            values[section] = changes

    return ExperimentConfig.from_dict(values)


def tiny_curves_config(**overrides) -> ExperimentConfig:
    base = {
        "dataset": {"kind": "curves", "n": 20, "grid_len": 16, "image_size": [8, 8]},
        "model": {"decoders": {"image": "shared", "curve": "expert"}},
    }
    for section, changes in overrides.items():
        base[section] = {**base.get(section, {}), **changes}

    return tiny_config(**base)


def finite_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar function f at x."""

    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for index in np.ndindex(*x.shape):
        bumped = x.copy()
        bumped[index] += h
        upper = f(bumped)
        bumped[index] -= 2 * h
        lower = f(bumped)
        grad[index] = (upper - lower) / (2 * h)

    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def curves_config():
    return tiny_curves_config()


@pytest.fixture
def dataset(config):
    return build_dataset(config)


@pytest.fixture
def curves_dataset(curves_config):
    return build_dataset(curves_config)
