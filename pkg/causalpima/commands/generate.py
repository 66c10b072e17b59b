# Standard library
import logging
from pathlib import Path

# Third party
import numpy as np
from rich.console import Console

# Local
try:
    from causalpima.config import ExperimentConfig
    from causalpima.datagen import Dataset, generate_dataset, save_dataset
except ImportError:
    from config import ExperimentConfig
    from datagen import Dataset, generate_dataset, save_dataset

logger = logging.getLogger(__name__)


######
# MAIN
######


def build_dataset(config: ExperimentConfig) -> Dataset:
    """Deterministic in the config seed, independent of model initialization."""

    rng = np.random.default_rng([config.seed, 1])
    return generate_dataset(config.dataset, rng)


def cmd_generate(
    config: ExperimentConfig, out_dir: str | Path, console: Console | None = None
) -> Dataset:
    out_dir = Path(out_dir)
    dataset = build_dataset(config)
    written = save_dataset(dataset, out_dir)
    logger.info("Wrote %d files to %s", len(written), out_dir)

    if console is not None:
        counts = ", ".join(
            f"{name} {array.shape[1:]}" for name, array in dataset.modalities.items()
        )
        console.print(
            f"[bold]Generated[/bold] {len(dataset)} {dataset.kind} samples ({counts}) "
            f"in [cyan]{out_dir}[/cyan]"
        )

    return dataset
