# Standard library
import time
import logging
from pathlib import Path

# Third party
import numpy as np
import pandas as pd
from rich.console import Console
from rich.progress import Progress, TextColumn, BarColumn

# Local
try:
    from causalpima import artifacts
    from causalpima.config import ExperimentConfig
    from causalpima.datagen import Dataset, load_dataset, save_dataset, split_indices
    from causalpima.dag import adjacency_frame, edge_indicator, to_dot
    from causalpima.joint import conditional_table_frame
    from causalpima.gmm import responsibilities, hard_assignments, occupancy
    from causalpima.trainer import (
        TrainState,
        fit,
        hard_dag,
        heldout_loss,
        split_dataset,
        save_checkpoint,
        load_checkpoint,
    )
    from causalpima.commands.generate import build_dataset
except ImportError:
    import artifacts
    from config import ExperimentConfig
    from datagen import Dataset, load_dataset, save_dataset, split_indices
    from dag import adjacency_frame, edge_indicator, to_dot
    from joint import conditional_table_frame
    from gmm import responsibilities, hard_assignments, occupancy
    from trainer import (
        TrainState,
        fit,
        hard_dag,
        heldout_loss,
        split_dataset,
        save_checkpoint,
        load_checkpoint,
    )
    from commands.generate import build_dataset

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.jsonl"


#########
# HELPERS
#########


def node_names(num_nodes: int) -> list[str]:
    return [f"N{i + 1}" for i in range(num_nodes)]


def cluster_frame(state: TrainState, gammas: np.ndarray) -> pd.DataFrame:
    """GMM components with their prior weight and hard occupancy."""

    _, joint = state.model.causal_joint(state.beta)
    frame = state.gmm.to_frame()
    frame.insert(len(state.model.arities) + 1, "weight", joint.data.reshape(-1))
    frame.insert(len(state.model.arities) + 2, "occupancy", occupancy(gammas))
    return frame


def latent_frame(state: TrainState, mus: np.ndarray, gammas: np.ndarray, labels: pd.DataFrame):
    """Fused means and cluster indices; labels are joined only after encoding."""

    arities = state.model.arities
    clusters = hard_assignments(gammas)
    frame = pd.DataFrame({f"mu_{j}": mus[:, j] for j in range(mus.shape[1])})
    frame["cluster"] = clusters
    for ell, outcome in enumerate(np.unravel_index(clusters, arities)):
        frame[f"n{ell + 1}"] = outcome

    return pd.concat([frame, labels.reset_index(drop=True)], axis=1)


def split_column(config: ExperimentConfig, num_samples: int) -> np.ndarray:
    column = np.full(num_samples, "train", dtype=object)
    if tuple(config.dataset.split) != (1.0, 0.0, 0.0):
        for name, indices in split_indices(num_samples, config.dataset.split, config.seed).items():
            column[indices] = name

    return column


def write_decoded_means(state: TrainState, run_dir: Path) -> list[Path]:
    written = []
    for name, means in state.model.decoded_means(state.gmm).items():
        path = run_dir / "decoded" / f"{name}.bin"
        artifacts.write_tensor(path, means)
        written.append(path)

        if means.ndim == 2:
            grid = np.linspace(0.0, 1.0, means.shape[1])
            overlay = pd.DataFrame({"grid": grid})
            for k, curve in enumerate(means):
                overlay[f"cluster_{k}"] = curve

            csv = run_dir / "decoded" / f"{name}.csv"
            artifacts.write_csv(csv, overlay)
            written.append(csv)

    return written


def write_tables(state: TrainState, run_dir: Path) -> list[Path]:
    dag = hard_dag(state)
    names = node_names(dag.num_nodes)
    written = []
    for ell in range(dag.num_nodes):
        path = run_dir / "tables" / f"conditional_{names[ell]}.csv"
        artifacts.write_csv(path, conditional_table_frame(state.model.tables, dag, ell, names))
        written.append(path)

    return written


def load_or_build_dataset(
    config: ExperimentConfig, dataset_dir: str | Path | None, run_dir: Path
) -> Dataset:
    if dataset_dir is not None:
        return load_dataset(dataset_dir)

    dataset = build_dataset(config)
    save_dataset(dataset, run_dir / "dataset")
    return dataset


######
# MAIN
######


def cmd_train(
    config: ExperimentConfig,
    out_dir: str | Path,
    dataset_dir: str | Path | None = None,
    resume: str | Path | None = None,
    console: Console | None = None,
) -> artifacts.RunManifest:
    run_dir = Path(out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()

    dataset = load_or_build_dataset(config, dataset_dir, run_dir)
    dataset.check_modalities(config.modalities())

    metrics_path = run_dir / METRICS_NAME
    state = None
    if resume is not None:
        state = load_checkpoint(resume, config)
        artifacts.truncate_jsonl(metrics_path, state.epoch)
        logger.info("Resuming from %s at epoch %d", resume, state.epoch)
    else:
        metrics_path.unlink(missing_ok=True)
        for stale in (run_dir / "dags").glob("epoch_*.dot"):
            stale.unlink()

    names = node_names(len(config.model.arities))
    progress = Progress(
        TextColumn("[progress.description]{task.description}", justify="left"),
        BarColumn(bar_width=None),
        TextColumn("{task.completed}/{task.total}"),
        TextColumn("{task.fields[message]}"),
        console=console or Console(stderr=True),
        disable=console is None,
        expand=True,
    )

    with progress:
        task_id = progress.add_task(
            "Training", total=config.train.epochs, completed=state.epoch if state else 0, message=""
        )

        def on_epoch(state: TrainState, record: dict):
            artifacts.append_jsonl(metrics_path, record)
            dot = to_dot(hard_dag(state), edge_indicator(state.model.dag), names)
            dot_path = run_dir / "dags" / f"epoch_{record['epoch']:04d}.dot"
            artifacts.write_text(dot_path, dot)

            every = config.train.checkpoint_every
            if every and record["epoch"] % every == 0:
                save_checkpoint(state, run_dir / "checkpoints" / f"epoch_{record['epoch']:04d}.npz")

            progress.update(
                task_id, advance=1, message=f"loss {record['loss']:.3f}  beta {record['beta']:.3g}"
            )

        state, history = fit(dataset, config, state, on_epoch)

    trained = time.perf_counter()
    final_checkpoint = run_dir / "checkpoints" / "final.npz"
    save_checkpoint(state, final_checkpoint)

    full = dataset.batch()
    mus, _ = state.model.embed(full)
    _, joint = state.model.causal_joint(state.beta)
    gammas = responsibilities(mus, state.gmm, joint.data)
    dag = hard_dag(state)

    written = [final_checkpoint]
    artifacts.write_text(run_dir / "dag.dot", to_dot(dag, edge_indicator(state.model.dag), names))
    artifacts.write_csv(run_dir / "dag.csv", adjacency_frame(dag, names))
    artifacts.write_csv(run_dir / "tables" / "clusters.csv", cluster_frame(state, gammas))
    latent = latent_frame(state, mus, gammas, dataset.labels)
    latent["split"] = split_column(config, len(dataset))
    artifacts.write_csv(run_dir / "latent.csv", latent)
    written += [run_dir / "dag.dot", run_dir / "dag.csv", run_dir / "latent.csv"]
    written.append(run_dir / "tables" / "clusters.csv")
    written += write_tables(state, run_dir)
    written += write_decoded_means(state, run_dir)
    if metrics_path.exists():
        written.append(metrics_path)
    written += sorted((run_dir / "dags").glob("epoch_*.dot"))

    final_metrics = {
        "epochs": state.epoch,
        "beta": state.beta,
        "edges": dag.edges(),
        "topo_order": list(dag.topo_order),
        "occupancy": occupancy(gammas).tolist(),
    }
    if history:
        final_metrics.update(loss=history[-1]["loss"], elbo=history[-1]["elbo"])
    elif state.pretrain_losses:
        final_metrics.update(pretrain_loss=state.pretrain_losses[-1])

    for name, part in split_dataset(dataset, config).items():
        if name != "train":
            final_metrics[f"{name}_loss"] = heldout_loss(state, part)

    manifest = artifacts.RunManifest(
        config_digest=config.digest(),
        seed=config.seed,
        dataset_fingerprint=dataset.fingerprint(),
        factors=list(dataset.factors),
        outputs=sorted({str(Path(p).relative_to(run_dir)) for p in written}),
        timings={"train_seconds": trained - started, "total_seconds": time.perf_counter() - started},
        final_metrics=final_metrics,
    )
    manifest.write(run_dir)
    artifacts.write_json(run_dir / "config.json", config.to_dict())

    if console is not None:
        edges = ", ".join(f"{names[i]} -> {names[j]}" for i, j in dag.edges()) or "none"
        console.print(f"[bold]Trained[/bold] {state.epoch} epochs; hard DAG edges: {edges}")
        console.print(f"Artifacts in [cyan]{run_dir}[/cyan]")

    return manifest
