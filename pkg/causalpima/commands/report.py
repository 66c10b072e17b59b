# Standard library
import logging
from pathlib import Path

# Third party
import numpy as np
import pandas as pd
from rich.table import Table
from rich.console import Console
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import normalized_mutual_info_score

# Local
try:
    from causalpima import artifacts
    from causalpima.errors import ContractViolation
except ImportError:
    import artifacts
    from errors import ContractViolation

logger = logging.getLogger(__name__)

REPORT_NAME = "report.json"


#########
# HELPERS
#########


def contingency(clusters, labels) -> pd.DataFrame:
    """Counts of every (cluster, label) pair; rows are clusters."""

    return pd.crosstab(pd.Series(clusters, name="cluster"), pd.Series(labels, name="label"))


def purity(clusters, labels) -> float:
    """Share of points whose cluster's majority label is their own label."""

    table = contingency(clusters, labels)
    if table.empty:
        return 0.0

    return float(table.max(axis=1).sum() / table.to_numpy().sum())


def nmi(clusters, labels) -> float:
    return float(normalized_mutual_info_score(labels, clusters))


def match_nodes(purities: np.ndarray) -> dict[int, int]:
    """Maximum-purity one-to-one assignment of DAG nodes (rows) to factors
    (columns). With more nodes than factors some nodes stay unmatched."""

    rows, cols = linear_sum_assignment(purities, maximize=True)
    return {int(r): int(c) for r, c in zip(rows, cols)}


def node_columns(latent: pd.DataFrame) -> list[str]:
    nodes = [c for c in latent.columns if c.startswith("n") and c[1:].isdigit()]
    return sorted(nodes, key=lambda c: int(c[1:]))


def _require_columns(frame: pd.DataFrame, columns: list[str], path: Path):
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ContractViolation(f"{path} lacks columns {missing}")


######
# MAIN
######


def summarize(latent: pd.DataFrame, factors: list[str]) -> dict:
    """Cluster- and node-level purity and NMI against every generative factor,
    plus the node-to-factor matching."""

    nodes = node_columns(latent)
    clusters = latent["cluster"].to_numpy()

    cluster_scores = {}
    for factor in factors:
        table = contingency(clusters, latent[factor])
        cluster_scores[factor] = {
            "purity": purity(clusters, latent[factor]),
            "nmi": nmi(clusters, latent[factor]),
            "contingency": {
                str(index): {str(k): int(v) for k, v in row.items()}
                for index, row in table.iterrows()
            },
        }

    purities = np.zeros((len(nodes), len(factors)))
    node_scores = {}
    for i, node in enumerate(nodes):
        node_scores[node] = {}
        for j, factor in enumerate(factors):
            purities[i, j] = purity(latent[node], latent[factor])
            node_scores[node][factor] = {
                "purity": purities[i, j],
                "nmi": nmi(latent[node], latent[factor]),
            }

    matching = match_nodes(purities) if nodes and factors else {}
    return {
        "clusters": cluster_scores,
        "nodes": node_scores,
        "matching": {nodes[i]: factors[j] for i, j in matching.items()},
        "occupancy": np.bincount(clusters).tolist(),
    }


def render(summary: dict, edges: list, console: Console):
    table = Table(title="Cluster agreement with generative factors")
    table.add_column("Factor", style="cyan")
    table.add_column("Purity", justify="right")
    table.add_column("NMI", justify="right")
    for factor, scores in summary["clusters"].items():
        table.add_row(factor, f"{scores['purity']:.3f}", f"{scores['nmi']:.3f}")

    console.print(table)

    nodes = Table(title="Node-to-factor matching")
    nodes.add_column("Node", style="cyan")
    nodes.add_column("Factor")
    nodes.add_column("Purity", justify="right")
    nodes.add_column("NMI", justify="right")
    for node, factor in summary["matching"].items():
        scores = summary["nodes"][node][factor]
        nodes.add_row(node.upper(), factor, f"{scores['purity']:.3f}", f"{scores['nmi']:.3f}")

    console.print(nodes)

    def label(index: int) -> str:
        node = f"n{index + 1}"
        factor = summary["matching"].get(node)
        return f"N{index + 1} ({factor})" if factor else f"N{index + 1}"

    console.print("[bold]Hard DAG[/bold]")
    if not edges:
        console.print("  (no edges)")

    for parent, child in edges:
        console.print(f"  {label(parent)} -> {label(child)}")


def cmd_report(run_dir: str | Path, console: Console | None = None) -> dict:
    run_dir = Path(run_dir)
    manifest = artifacts.RunManifest.read(run_dir)
    missing = manifest.missing(run_dir)
    if missing:
        raise ContractViolation(f"run {run_dir} is missing artifacts: {missing}")

    latent_path = run_dir / "latent.csv"
    if not latent_path.is_file():
        raise ContractViolation(f"run {run_dir} has no latent.csv")

    latent = pd.read_csv(latent_path)
    _require_columns(latent, ["cluster", *manifest.factors], latent_path)

    summary = summarize(latent, manifest.factors)
    summary["edges"] = [list(edge) for edge in manifest.final_metrics.get("edges", [])]
    summary["config_digest"] = manifest.config_digest
    summary["seed"] = manifest.seed
    artifacts.write_json(run_dir / REPORT_NAME, summary)

    if console is not None:
        render(summary, summary["edges"], console)

    return summary
