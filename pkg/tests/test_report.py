# Third party
import numpy as np
import pandas as pd
import pytest

# Local
from causalpima.commands.report import contingency, purity, nmi, match_nodes, summarize


def test_contingency_rows_sum_to_cluster_sizes():
    clusters = [0, 0, 1, 1, 1, 2]
    labels = ["red", "blue", "red", "red", "blue", "blue"]
    table = contingency(clusters, labels)
    assert table.sum(axis=1).tolist() == [2, 3, 1]
    assert table.to_numpy().sum() == 6


def test_purity_examples():
    assert purity([0, 0, 1, 1], ["a", "a", "b", "b"]) == 1.0
    assert purity([0, 0, 0, 0], ["a", "a", "b", "b"]) == 0.5
    assert purity([0, 1, 2, 3], ["a", "a", "b", "b"]) == 1.0


def test_nmi_of_shuffled_labels_is_near_zero(rng):
    labels = rng.integers(0, 2, size=5000)
    assert nmi(labels, labels) == pytest.approx(1.0)
    assert nmi(rng.permutation(labels), labels) < 0.05


def test_node_matching_maximizes_total_purity():
    purities = np.array([[0.6, 0.9], [0.95, 0.5], [0.7, 0.7]])
    assert match_nodes(purities) == {0: 1, 1: 0}


def test_summarize(rng):
    hue = rng.choice(["red", "blue"], size=200)
    size = rng.choice(["small", "large"], size=200)
    n1 = (size == "large").astype(int)
    n2 = (hue == "blue").astype(int)
    latent = pd.DataFrame(
        {"mu_0": rng.normal(size=200), "cluster": n1 * 2 + n2, "n1": n1, "n2": n2, "hue": hue, "size": size}
    )
    summary = summarize(latent, ["hue", "size"])
    assert summary["matching"] == {"n1": "size", "n2": "hue"}
    assert summary["nodes"]["n2"]["hue"]["purity"] == 1.0
    assert summary["clusters"]["hue"]["purity"] == 1.0
    assert sum(summary["occupancy"]) == 200
