# Standard library
import math
import logging
from dataclasses import dataclass

# Third party
import numpy as np
import pandas as pd
import networkx as nx

# Local
try:
    from causalpima import tensor as T
    from causalpima.tensor import Tensor
    from causalpima.config import BetaSchedule
    from causalpima.constants import EDGE_ZERO_TOL
    from causalpima.errors import AcyclicityError, ConfigurationError, ContractViolation
except ImportError:
    import tensor as T
    from tensor import Tensor
    from config import BetaSchedule
    from constants import EDGE_ZERO_TOL
    from errors import AcyclicityError, ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)


#########
# HELPERS
#########


EDGE_RAW = 2.0  # softplus(2.0) ~ 2.13, well above any sensible zero_tol


def inverse_softplus(value: float) -> float:
    return math.log(math.expm1(value))


def cycle_trace_sum(adjacency: np.ndarray) -> int:
    """Sum of trace(A^k) for k = 1..L, counted on the reachability pattern so
    that long walks cannot overflow."""

    adjacency = np.asarray(adjacency) != 0
    num_nodes = adjacency.shape[0]
    walks = adjacency.copy()
    total = 0
    for _ in range(num_nodes):
        total += int(np.trace(walks))
        walks = (walks.astype(np.int64) @ adjacency.astype(np.int64)) > 0

    return total


def is_acyclic(adjacency: np.ndarray) -> bool:
    return cycle_trace_sum(adjacency) == 0


def topological_depths(adjacency: np.ndarray) -> np.ndarray:
    graph = nx.from_numpy_array(np.asarray(adjacency, dtype=int), create_using=nx.DiGraph)
    depths = np.zeros(adjacency.shape[0])
    for depth, generation in enumerate(nx.topological_generations(graph)):
        depths[list(generation)] = depth

    return depths


def off_diagonal(num_nodes: int) -> np.ndarray:
    return 1.0 - np.eye(num_nodes)


######
# MAIN
######


@dataclass
class DagParams:
    xi: Tensor  # Node scores, shape (L,)
    b_raw: Tensor  # Unconstrained edge metric, shape (L, L); B = softplus(b_raw)
    beta: float

    def __post_init__(self):
        if self.xi.ndim != 1 or self.xi.shape[0] < 1:
            raise ContractViolation(f"xi must be a nonempty vector, got {self.xi.shape}")

        num_nodes = self.xi.shape[0]
        if self.b_raw.shape != (num_nodes, num_nodes):
            raise ContractViolation(f"b_raw must be {num_nodes}x{num_nodes}, got {self.b_raw.shape}")

        if not self.beta > 0:
            raise ContractViolation(f"beta must be positive, got {self.beta}")

    @property
    def num_nodes(self) -> int:
        return self.xi.shape[0]

    @classmethod
    def initialize(cls, num_nodes: int, rng: np.random.Generator, beta: float = 1.0):
        xi = rng.normal(0.0, 1.0, size=num_nodes)
        b_raw = rng.normal(0.0, 0.1, size=(num_nodes, num_nodes))
        return cls(
            Tensor(xi, requires_grad=True, name="xi"),
            Tensor(b_raw, requires_grad=True, name="b_raw"),
            beta,
        )

    def metric(self) -> Tensor:
        return T.softplus(self.b_raw) * off_diagonal(self.num_nodes)

    def metric_values(self) -> np.ndarray:
        return np.logaddexp(0.0, self.b_raw.data) * off_diagonal(self.num_nodes)

    def order(self) -> np.ndarray:
        return np.argsort(self.xi.data, kind="stable")


@dataclass
class EdgeScores:
    e: Tensor  # E[parent][child] in [0, 1)

    @property
    def values(self) -> np.ndarray:
        return self.e.data


@dataclass
class HardDag:
    adjacency: np.ndarray  # A[parent][child] in {0, 1}
    topo_order: tuple[int, ...]
    zero_tol: float = EDGE_ZERO_TOL

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adjacency))]

    def parents(self, node: int) -> list[int]:
        return [int(k) for k in np.nonzero(self.adjacency[:, node])[0]]

    def is_acyclic(self) -> bool:
        return is_acyclic(self.adjacency)

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.num_nodes))
        graph.add_edges_from(self.edges())
        return graph


def edge_flows(params: DagParams) -> Tensor:
    """F[i][j] = B[i][j] * (xi[j] - xi[i])."""

    xi = params.xi
    gradient = T.reshape(xi, (1, -1)) - T.reshape(xi, (-1, 1))
    return params.metric() * gradient


def edge_indicator(params: DagParams) -> EdgeScores:
    flows = edge_flows(params)
    return EdgeScores(T.relu(T.tanh(flows / params.beta)))


def hard_adjacency(params: DagParams, zero_tol: float = EDGE_ZERO_TOL) -> HardDag:
    if zero_tol < 0:
        raise ContractViolation(f"zero_tol must be >= 0, got {zero_tol}")

    xi = params.xi.data
    ordered = xi[:, None] < xi[None, :]
    adjacency = ((params.metric_values() > zero_tol) & ordered).astype(np.int64)
    np.fill_diagonal(adjacency, 0)
    topo_order = tuple(int(i) for i in params.order())
    return HardDag(adjacency, topo_order, zero_tol)


def construct_params_for_dag(
    adjacency: np.ndarray, zero_tol: float = EDGE_ZERO_TOL, beta: float = 1.0
) -> DagParams:
    """Builds params whose hard adjacency is exactly `adjacency`: node scores are
    topological depths, and the edge metric sits above `zero_tol` only on edges."""

    adjacency = np.asarray(adjacency)
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise ContractViolation(f"adjacency must be square, got {adjacency.shape}")

    if not zero_tol > 0:
        raise ContractViolation("zero_tol must be positive: softplus never reaches 0")

    if not is_acyclic(adjacency):
        raise AcyclicityError("adjacency contains a cycle (sum of trace(A^k) > 0)")

    xi = topological_depths(adjacency)
    silent = inverse_softplus(zero_tol / 10.0)
    b_raw = np.where(adjacency != 0, EDGE_RAW, silent)
    np.fill_diagonal(b_raw, silent)
    return DagParams(
        Tensor(xi, requires_grad=True, name="xi"),
        Tensor(b_raw, requires_grad=True, name="b_raw"),
        beta,
    )


def perturb_scores(
    params: DagParams, noise_std: float, rng: np.random.Generator
) -> DagParams:
    if noise_std < 0:
        raise ContractViolation(f"noise_std must be >= 0, got {noise_std}")

    if noise_std == 0:
        return params

    noise = rng.normal(0.0, noise_std, size=params.num_nodes)
    xi = Tensor(params.xi.data + noise, requires_grad=params.xi.requires_grad, name="xi")
    return DagParams(xi, params.b_raw, params.beta)


def anneal_beta(schedule: BetaSchedule, step: int) -> float:
    """Geometric decay from beta_init to beta_final, held constant between
    updates and pinned to beta_final from total_steps on."""

    if not schedule.beta_final > 0 or schedule.beta_init < schedule.beta_final:
        raise ConfigurationError("beta schedule needs beta_init >= beta_final > 0")

    if schedule.update_every < 1:
        raise ConfigurationError("beta schedule needs update_every >= 1")

    total_steps = schedule.total_steps or 0
    if total_steps == 0:
        return schedule.beta_init  # No annealing window

    if step >= total_steps:
        return schedule.beta_final

    stages = math.ceil(total_steps / schedule.update_every)
    stage = step // schedule.update_every
    ratio = schedule.beta_final / schedule.beta_init
    return schedule.beta_init * ratio ** (stage / stages)


def sparsity_penalty(params: DagParams) -> Tensor:
    return T.reduce("sum", params.metric())


def adjacency_frame(dag: HardDag, node_names: list[str] | None = None) -> pd.DataFrame:
    """Hard adjacency as a parent-by-child table of 0/1 entries."""

    names = node_names or [f"N{i + 1}" for i in range(dag.num_nodes)]
    frame = pd.DataFrame(dag.adjacency.astype(int), index=names, columns=names)
    frame.index.name = "parent"
    return frame.reset_index()


def to_dot(
    dag: HardDag,
    scores: EdgeScores | None = None,
    node_names: list[str] | None = None,
) -> str:
    names = node_names or [f"N{i + 1}" for i in range(dag.num_nodes)]
    lines = ["digraph causalpima {", f'  label="zero_tol={dag.zero_tol:g}";']
    for node, name in enumerate(names):
        lines.append(f'  n{node} [label="{name}"];')

    for i, j in dag.edges():
        if scores is not None:
            weight = float(scores.values[i, j])
            lines.append(f'  n{i} -> n{j} [label="{weight:.3f}", penwidth={1 + 2 * weight:.2f}];')
        else:
            lines.append(f"  n{i} -> n{j};")

    lines.append("}")
    return "\n".join(lines) + "\n"
