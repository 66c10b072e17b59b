# Standard library
import itertools

# Third party
import numpy as np
import pytest
from numpy.testing import assert_allclose

# Local
from causalpima import tensor as T
from causalpima.tensor import Tensor, GradTape, backward
from causalpima.errors import CapacityError, ContractViolation
from causalpima.dag import DagParams, HardDag, edge_indicator, hard_adjacency, construct_params_for_dag
from causalpima.joint import (
    CausalTables,
    parent_vector,
    node_conditional,
    joint_tensor,
    brute_force_joint,
    conditional_table_frame,
    one_hot,
)

from conftest import finite_difference


def random_tables(rng, arities, std=1.0) -> CausalTables:
    return CausalTables.initialize(arities, rng, std)


def random_hard_dag(rng, num_nodes: int) -> HardDag:
    order = rng.permutation(num_nodes)
    upper = np.triu(rng.random((num_nodes, num_nodes)) < 0.5, k=1).astype(int)
    adjacency = np.zeros_like(upper)
    adjacency[np.ix_(order, order)] = upper
    return hard_adjacency(construct_params_for_dag(adjacency))


def loop_conditional(tables, ell, column, values):
    """Direct sum over every configuration of the other nodes."""

    arities = tables.arities
    w = tables.conditional(ell).data
    pi = np.zeros(arities[ell])
    for config in itertools.product(*(range(c) for c in arities)):
        weight = 1.0
        for k, c in enumerate(config):
            if k == ell:
                continue

            uniform = 1.0 / arities[k]
            node = values[k] if values[k] is not None else np.full(arities[k], uniform)
            weight *= uniform - column[k] * (uniform - node[c])

        pi[config[ell]] += w[config] * weight

    return pi


def test_tables_normalize_along_their_own_mode(rng):
    tables = random_tables(rng, (2, 3, 2))
    for ell in range(3):
        w = tables.conditional(ell).data
        assert_allclose(w.sum(axis=ell), 1.0, atol=1e-12)
        assert np.all((w > 0) & (w < 1))


def test_tables_validate_shapes(rng):
    with pytest.raises(ContractViolation):
        CausalTables([Tensor(np.zeros((2, 2)))], (2, 2))


def test_parent_vector_examples():
    assert_allclose(parent_vector([1.0, 0.0], 0.0, 2).data, [0.5, 0.5])
    assert_allclose(parent_vector([1.0, 0.0], 1.0, 2).data, [1.0, 0.0])
    assert_allclose(parent_vector([1.0, 0.0], 0.5, 2).data, [0.75, 0.25])
    assert_allclose(parent_vector(None, 0.0, 3).data, [1 / 3] * 3)


def test_node_conditional_without_parents_averages(rng):
    tables = random_tables(rng, (2, 3, 2))
    values = [one_hot(1, 2), one_hot(0, 3), one_hot(1, 2)]
    pi = node_conditional(tables, 1, np.zeros(3), values)
    assert_allclose(pi.data, tables.conditional(1).data.mean(axis=(0, 2)), atol=1e-12)


def test_node_conditional_with_known_parent(rng):
    tables = random_tables(rng, (2, 2))
    pi = node_conditional(tables, 1, np.array([1.0, 0.0]), [one_hot(1, 2), None])
    assert_allclose(pi.data, tables.conditional(1).data[1, :], atol=1e-12)


def test_node_conditional_matches_loop_oracle(rng):
    for _ in range(20):
        tables = random_tables(rng, tuple(rng.integers(2, 4, size=3)))
        dag = random_hard_dag(rng, 3)
        outcome = [int(rng.integers(c)) for c in tables.arities]
        values = [one_hot(c, arity) for c, arity in zip(outcome, tables.arities)]
        for ell in range(3):
            column = dag.adjacency[:, ell].astype(float)
            expected = loop_conditional(tables, ell, column, values)
            assert_allclose(node_conditional(tables, ell, column, values).data, expected, atol=1e-12)


def test_node_conditional_rejects_missing_parent(rng):
    tables = random_tables(rng, (2, 2))
    with pytest.raises(ContractViolation):
        node_conditional(tables, 1, np.array([1.0, 0.0]), [None, None])


def test_joint_tensor_examples(rng):
    uniform = CausalTables([Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 2)))], (2, 2))
    empty = HardDag(np.zeros((2, 2), dtype=int), (0, 1))
    assert_allclose(joint_tensor(uniform, empty).data, np.full((2, 2), 0.25))

    single = random_tables(rng, (3,))
    lone = HardDag(np.zeros((1, 1), dtype=int), (0,))
    logits = single.w_logits[0].data
    assert_allclose(joint_tensor(single, lone).data, np.exp(logits) / np.exp(logits).sum())


def test_joint_tensor_matches_enumeration(rng):
    for _ in range(500):
        num_nodes = int(rng.integers(1, 4))
        tables = random_tables(rng, tuple(rng.integers(1, 4, size=num_nodes)))
        dag = random_hard_dag(rng, num_nodes)
        joint = joint_tensor(tables, dag).data
        assert_allclose(joint, brute_force_joint(tables, dag), atol=1e-10)
        assert joint.sum() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("beta", [5.0, 1.0, 0.1, 0.01])
def test_relaxed_joint_sums_to_one(beta, rng):
    for _ in range(50):
        num_nodes = int(rng.integers(1, 5))
        tables = random_tables(rng, tuple(rng.integers(1, 4, size=num_nodes)))
        params = DagParams.initialize(num_nodes, rng, beta)
        joint = joint_tensor(tables, edge_indicator(params), params.order()).data
        assert np.all(joint >= 0)
        assert joint.sum() == pytest.approx(1.0, abs=1e-10)


def test_relaxed_scores_need_an_order(rng):
    params = DagParams.initialize(2, rng)
    with pytest.raises(ContractViolation):
        joint_tensor(random_tables(rng, (2, 2)), edge_indicator(params))


def test_isolated_node_marginal(rng):
    tables = random_tables(rng, (2, 3, 2))
    dag = hard_adjacency(construct_params_for_dag(np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]])))
    joint = joint_tensor(tables, dag).data
    marginal = joint.sum(axis=(0, 1))
    assert_allclose(marginal, tables.conditional(2).data.mean(axis=(0, 1)), atol=1e-12)


def test_brute_force_examples(rng):
    tables = random_tables(rng, (2, 3))
    empty = HardDag(np.zeros((2, 2), dtype=int), (0, 1))
    first = tables.conditional(0).data.mean(axis=1)
    second = tables.conditional(1).data.mean(axis=0)
    assert_allclose(brute_force_joint(tables, empty), np.outer(first, second), atol=1e-12)

    forced = np.where(np.eye(2, dtype=bool), 20.0, -20.0)
    chain_tables = CausalTables(
        [Tensor(np.array([[20.0, 20.0], [-20.0, -20.0]])), Tensor(forced)], (2, 2)
    )
    chain = HardDag(np.array([[0, 1], [0, 0]]), (0, 1))
    joint = brute_force_joint(chain_tables, chain)
    assert joint[0, 0] == pytest.approx(1.0, abs=1e-8)


def test_brute_force_guards_its_capacity(rng):
    tables = random_tables(rng, (4,) * 7)
    dag = HardDag(np.zeros((7, 7), dtype=int), tuple(range(7)))
    with pytest.raises(CapacityError):
        brute_force_joint(tables, dag)


def test_joint_gradients_match_finite_differences(rng):
    arities = (2, 3)
    logits0 = [rng.normal(size=arities) for _ in arities]
    xi0, b0 = np.array([0.0, 0.8]), rng.normal(size=(2, 2))
    direction = rng.normal(size=arities)

    def value(logits, xi, b_raw):
        tables = CausalTables(logits, arities)
        params = DagParams(xi, b_raw, 0.7)
        joint = joint_tensor(tables, edge_indicator(params), params.order())
        return T.reduce("sum", joint * direction)

    logits = [Tensor(x, requires_grad=True) for x in logits0]
    xi, b_raw = Tensor(xi0, requires_grad=True), Tensor(b0, requires_grad=True)
    with GradTape() as tape:
        loss = value(logits, xi, b_raw)

    grads = backward(loss, tape)
    for ell in range(2):

        def bumped(x, ell=ell):
            tensors = [Tensor(v) for v in logits0]
            tensors[ell] = Tensor(x)
            return value(tensors, Tensor(xi0), Tensor(b0)).item()

        assert_allclose(grads[logits[ell]], finite_difference(bumped, logits0[ell]), rtol=1e-5, atol=1e-9)

    numeric_b = finite_difference(lambda b: value([Tensor(v) for v in logits0], Tensor(xi0), Tensor(b)).item(), b0)
    assert_allclose(grads[b_raw], numeric_b, rtol=1e-5, atol=1e-9)


def test_conditional_table_frame(rng):
    tables = random_tables(rng, (2, 2))
    dag = HardDag(np.array([[0, 1], [0, 0]]), (0, 1))
    frame = conditional_table_frame(tables, dag, 1, ["hue", "radius"])
    assert list(frame.columns) == ["hue", "p(radius=0)", "p(radius=1)"]
    assert len(frame) == 2
    assert_allclose(frame[["p(radius=0)", "p(radius=1)"]].sum(axis=1), 1.0)
    assert_allclose(frame.iloc[1, 1:].to_numpy(dtype=float), tables.conditional(1).data[1])
