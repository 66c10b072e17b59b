# Standard library
import logging
import itertools
from dataclasses import dataclass
from collections.abc import Sequence

# Third party
import numpy as np
import pandas as pd

# Local
try:
    from causalpima import tensor as T
    from causalpima.tensor import Tensor
    from causalpima.dag import EdgeScores, HardDag
    from causalpima.errors import CapacityError, ContractViolation
    from causalpima.constants import (
        LOGIT_INIT_STD,
        ENUMERATION_MAX_NODES,
        ENUMERATION_MAX_OUTCOMES,
    )
except ImportError:
    import tensor as T
    from tensor import Tensor
    from dag import EdgeScores, HardDag
    from errors import CapacityError, ContractViolation
    from constants import LOGIT_INIT_STD, ENUMERATION_MAX_NODES, ENUMERATION_MAX_OUTCOMES

logger = logging.getLogger(__name__)

JointTensor = Tensor  # p(N) over C_1 x ... x C_L, sums to 1


#########
# HELPERS
#########


def one_hot(index: int, size: int) -> np.ndarray:
    vector = np.zeros(size)
    vector[index] = 1.0
    return vector


def _scalar(value) -> float:
    return float(value.item() if isinstance(value, Tensor) else value)


def _edge_matrix(dag: EdgeScores | HardDag) -> Tensor:
    if isinstance(dag, EdgeScores):
        return dag.e

    return Tensor(np.asarray(dag.adjacency, dtype=np.float64))


def _check_order(edges: np.ndarray, topo_order: Sequence[int]) -> list[int]:
    num_nodes = edges.shape[0]
    order = [int(node) for node in topo_order]
    if sorted(order) != list(range(num_nodes)):
        raise ContractViolation(f"topo_order {order} is not a permutation of {num_nodes} nodes")

    position = np.empty(num_nodes, dtype=int)
    position[order] = np.arange(num_nodes)
    for parent, child in zip(*np.nonzero(edges > 0)):
        if position[parent] > position[child]:
            raise ContractViolation(
                f"edge {parent}->{child} points backward in topo_order {order}"
            )

    return order


######
# MAIN
######


@dataclass
class CausalTables:
    w_logits: list[Tensor]
    arities: tuple[int, ...]

    def __post_init__(self):
        self.arities = tuple(int(c) for c in self.arities)
        if len(self.w_logits) != len(self.arities):
            raise ContractViolation(
                f"{len(self.w_logits)} logit tensors for {len(self.arities)} nodes"
            )

        for ell, logits in enumerate(self.w_logits):
            if logits.shape != self.arities:
                raise ContractViolation(
                    f"w_logits[{ell}] has shape {logits.shape}, expected {self.arities}"
                )

    @property
    def num_nodes(self) -> int:
        return len(self.arities)

    @classmethod
    def initialize(
        cls,
        arities: Sequence[int],
        rng: np.random.Generator,
        std: float = LOGIT_INIT_STD,
    ) -> "CausalTables":
        arities = tuple(int(c) for c in arities)
        logits = [
            Tensor(rng.normal(0.0, std, size=arities), requires_grad=True, name=f"w_logits[{ell}]")
            for ell in range(len(arities))
        ]
        return cls(logits, arities)

    def conditional(self, ell: int) -> Tensor:
        """W^ell, normalized along mode ell."""

        return T.softmax(self.w_logits[ell], axis=ell)


def parent_vector(node, e_k_ell, arity: int) -> Tensor:
    """v_k = (1/C_k) 1 - E_k,ell ((1/C_k) 1 - N_k)."""

    uniform = np.full(arity, 1.0 / arity)
    if node is None:
        return Tensor(uniform)

    node = T.as_tensor(node)
    if node.shape != (arity,):
        raise ContractViolation(f"parent_vector: node has shape {node.shape}, expected ({arity},)")

    return uniform - e_k_ell * (uniform - node)


def node_conditional(
    tables: CausalTables,
    ell: int,
    e_column,
    node_values: Sequence,
) -> Tensor:
    """pi_ell: W^ell contracted on every other mode against its parent vector."""

    num_nodes = tables.num_nodes
    e_column = T.as_tensor(e_column)
    if e_column.shape != (num_nodes,):
        raise ContractViolation(f"e_column has shape {e_column.shape}, expected ({num_nodes},)")

    if len(node_values) != num_nodes:
        raise ContractViolation(f"{len(node_values)} node values for {num_nodes} nodes")

    pi = tables.conditional(ell)
    for k in reversed(range(num_nodes)):
        if k == ell:
            continue

        if node_values[k] is None and e_column.data[k] > 0:
            raise ContractViolation(f"node {k} feeds node {ell} but has no value")

        vector = parent_vector(node_values[k], e_column[k], tables.arities[k])
        pi = T.mode_contract(pi, vector, k)

    return pi


def joint_tensor(
    tables: CausalTables,
    dag: EdgeScores | HardDag,
    topo_order: Sequence[int] | None = None,
) -> JointTensor:
    """A = p(N) by the inductive recursion A^l = p(N_l | Pa(N_l)) A^(l-1).

    Nodes are visited in topological order. Each node's table is mean-reduced
    over later nodes and E-blended over earlier ones, so relaxed edge scores
    stay differentiable. E is indexed E[parent][child]."""

    edges = _edge_matrix(dag)
    if topo_order is None:
        if not isinstance(dag, HardDag):
            raise ContractViolation("joint_tensor needs topo_order for relaxed edge scores")

        topo_order = dag.topo_order

    order = _check_order(edges.data, topo_order)
    joint = None
    for position, ell in enumerate(order):
        table = tables.conditional(ell)
        later = order[position + 1 :]
        if later:
            table = T.reduce("mean", table, later, keepdims=True)

        for k in order[:position]:
            weight = edges[k, ell]
            averaged = T.reduce("mean", table, [k], keepdims=True)
            table = weight * table + (1.0 - weight) * averaged

        joint = table if joint is None else table * joint

    return joint


def brute_force_joint(tables: CausalTables, hard_dag: HardDag) -> np.ndarray:
    """p(N) by explicit enumeration of the Markov factorization."""

    arities = tables.arities
    outcomes = int(np.prod(arities))
    if len(arities) > ENUMERATION_MAX_NODES or outcomes > ENUMERATION_MAX_OUTCOMES:
        raise CapacityError(
            f"enumeration over {len(arities)} nodes / {outcomes} outcomes exceeds "
            f"{ENUMERATION_MAX_NODES} / {ENUMERATION_MAX_OUTCOMES}"
        )

    adjacency = np.asarray(hard_dag.adjacency, dtype=np.float64)
    joint = np.zeros(arities)
    for outcome in itertools.product(*(range(c) for c in arities)):
        values = [one_hot(c, arity) for c, arity in zip(outcome, arities)]
        prob = 1.0
        for ell in range(len(arities)):
            pi = node_conditional(tables, ell, adjacency[:, ell], values)
            prob *= pi.data[outcome[ell]]

        joint[outcome] = prob

    return joint / joint.sum()


def conditional_table_frame(
    tables: CausalTables,
    hard_dag: HardDag,
    ell: int,
    node_names: Sequence[str] | None = None,
) -> pd.DataFrame:
    """p(N_ell = n | parent configuration), one row per configuration."""

    names = list(node_names or [f"N{i + 1}" for i in range(tables.num_nodes)])
    parents = hard_dag.parents(ell)
    column = np.asarray(hard_dag.adjacency[:, ell], dtype=np.float64)

    rows = []
    for config in itertools.product(*(range(tables.arities[k]) for k in parents)):
        values = [None] * tables.num_nodes
        for k, c in zip(parents, config):
            values[k] = one_hot(c, tables.arities[k])

        pi = node_conditional(tables, ell, column, values).data
        row = {names[k]: c for k, c in zip(parents, config)}
        row.update({f"p({names[ell]}={n})": _scalar(p) for n, p in enumerate(pi)})
        rows.append(row)

    return pd.DataFrame(rows)
