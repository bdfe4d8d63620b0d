import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macaw.errors import ConfigError, CycleError, ShapeError
from macaw.graph import (build_masks, build_masks_for_width, dag_from_edges, descendants,
                         hidden_multiple_for, load_graph, validate_dag)
from macaw.datasets import scm_dag


def test_two_node_chain_order():
    dag = validate_dag(["a", "b"], [[0, 1], [0, 0]])
    assert dag.topo_order == (0, 1)


def test_benchmark_graph_order():
    assert scm_dag().topo_order == (0, 1, 2, 3, 4)


def test_two_cycle_rejected():
    with pytest.raises(CycleError):
        validate_dag(["a", "b"], [[0, 1], [1, 0]])


def test_self_loop_rejected():
    with pytest.raises(CycleError):
        validate_dag(["a"], [[1]])


@pytest.mark.parametrize("names,adj", [
    (["a", "b"], [[0, 1, 0], [0, 0, 0]]),
    (["a", "b", "c"], [[0, 1], [0, 0]]),
    (["a", "b"], [[0, 2], [0, 0]]),
])
def test_bad_shapes(names, adj):
    with pytest.raises(ShapeError):
        validate_dag(names, adj)


def test_ties_break_by_index():
    # c -> a only: a has a parent, b and c are free; b (1) comes before c (2)
    dag = dag_from_edges(["a", "b", "c"], [("c", "a")])
    assert dag.topo_order == (1, 2, 0)


def test_validate_idempotent():
    dag = scm_dag()
    again = validate_dag(dag)
    assert again.topo_order == dag.topo_order
    assert np.array_equal(again.adjacency, dag.adjacency)


def test_descendants_examples():
    dag = scm_dag()
    assert descendants(dag, 2) == {4}
    assert descendants(dag, 0) == {2, 3, 4}
    assert descendants(dag, 4) == set()
    with pytest.raises(IndexError):
        descendants(dag, 5)


def test_chain_masks_match_hand_rule():
    dag = dag_from_edges(["0", "1", "2"], [("0", "1"), ("1", "2")])
    ms = build_masks(dag, 1, 1)
    # the worked example lists inputs down the rows and hidden labels across the
    # columns; the stored masks use the (out, in) weight layout, hence the transpose
    expected_in = np.array([[1, 1, 0], [0, 1, 1], [0, 0, 1]])
    assert np.array_equal(ms.input_to_hidden.T, expected_in)
    expected_out = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert np.array_equal(ms.hidden_to_output, expected_out)


def test_source_only_graph_has_empty_output_mask():
    dag = validate_dag(["a", "b", "c"], np.zeros((3, 3)))
    ms = build_masks(dag, 2, 2)
    assert not ms.hidden_to_output.any()


def test_tiling_with_multiple_three():
    dag = scm_dag()
    one = build_masks(dag, 1, 3)
    three = build_masks(dag, 3, 3)
    assert three.hidden_width == 15
    assert np.array_equal(three.input_to_hidden, np.tile(one.input_to_hidden, (3, 1)))
    for a, b in zip(three.hidden_to_hidden, one.hidden_to_hidden):
        assert np.array_equal(a, np.tile(b, (3, 3)))
    assert np.array_equal(three.hidden_to_output, np.tile(one.hidden_to_output, (1, 3)))


def test_raw_width_must_be_multiple():
    dag = scm_dag()
    with pytest.raises(ConfigError):
        build_masks_for_width(dag, 12, 3)
    assert build_masks_for_width(dag, 15, 3).hidden_multiple == 3
    assert hidden_multiple_for(dag, 15) == 3
    assert hidden_multiple_for(dag, 16) == 4


def test_bad_mask_arguments():
    with pytest.raises(ConfigError):
        build_masks(scm_dag(), 0, 3)
    with pytest.raises(ConfigError):
        build_masks(scm_dag(), 1, 0)


@st.composite
def random_dags(draw):
    D = draw(st.integers(1, 7))
    bits = draw(st.lists(st.booleans(), min_size=D * D, max_size=D * D))
    perm = draw(st.permutations(range(D)))
    A = np.zeros((D, D), dtype=int)
    for j in range(D):
        for i in range(D):
            # edges only from earlier to later positions of a random order => acyclic
            if perm.index(j) < perm.index(i) and bits[j * D + i]:
                A[j, i] = 1
    return validate_dag([f"v{k}" for k in range(D)], A)


def walk_reach(A: np.ndarray, max_len: int) -> np.ndarray:
    """R[j, i] = 1 iff a directed walk j -> i of length 1..max_len exists."""
    R = np.zeros_like(A, dtype=bool)
    P = np.eye(len(A), dtype=int)
    for _ in range(max_len):
        P = (P @ A > 0).astype(int)
        R |= P.astype(bool)
    return R


@settings(max_examples=60, deadline=None)
@given(random_dags(), st.integers(1, 3), st.integers(1, 3))
def test_mask_paths_are_exactly_short_ancestor_walks(dag, n, L):
    # the diagonal-augmented hidden layers carry ancestor information forward, so
    # input j reaches output i iff j is an ancestor of i within L + 1 edges; in
    # particular nothing reaches i from a descendant, from i itself or from an
    # unrelated variable, and sources receive nothing
    ms = build_masks(dag, n, L)
    C = ms.connectivity()            # C[i, j]: some path from input j to output i
    A = dag.adjacency.astype(int)
    assert np.array_equal(C, walk_reach(A, L + 1).T)
    for i in range(dag.dim):
        assert not C[i, i]
        for j in descendants(dag, i):
            assert not C[i, j]
        if dag.sources[i]:
            assert not C[i].any()
    pos = {v: k for k, v in enumerate(dag.topo_order)}
    for j, i in zip(*np.nonzero(A)):
        assert pos[j] < pos[i]


def test_parent_only_paths_on_depth_one_graphs():
    # without chains of length two, ancestors and parents coincide
    dag = dag_from_edges(list("abcd"), [("a", "c"), ("b", "c"), ("a", "d")])
    C = build_masks(dag, 2, 3).connectivity()
    assert np.array_equal(C, dag.adjacency.T.astype(bool))


@settings(max_examples=30, deadline=None)
@given(random_dags())
def test_parent_paths_exist(dag):
    # with the diagonal augmentation every direct parent reaches its child
    C = build_masks(dag, 1, 2).connectivity()
    for j, i in zip(*np.nonzero(dag.adjacency)):
        assert C[i, j]


def test_hidden_labels_are_mod_d():
    dag = scm_dag()
    ms = build_masks(dag, 2, 1)
    A = dag.adjacency + np.eye(5, dtype=int)
    for k in range(ms.hidden_width):
        for j in range(5):
            assert ms.input_to_hidden[k, j] == A[j, k % 5]


def test_load_graph_formats(tmp_path):
    toml = tmp_path / "g.toml"
    toml.write_text('[graph]\nnames = ["a", "b"]\nedges = [["a", "b"]]\n')
    js = tmp_path / "g.json"
    js.write_text(json.dumps({"names": ["a", "b"], "edges": [["a", "b"]]}))
    for path in (toml, js):
        dag = load_graph(path)
        assert dag.names == ("a", "b") and dag.parents(1) == [0]
    bad = tmp_path / "bad.toml"
    bad.write_text('names = ["a"]\nedgez = []\n')
    with pytest.raises(ConfigError, match="edgez"):
        load_graph(bad)


def test_unknown_edge_endpoint():
    with pytest.raises(ConfigError):
        dag_from_edges(["a"], [("a", "b")])


def test_index_lookup():
    dag = scm_dag()
    assert dag.index("x3") == 3 and dag.index(3) == 3
    with pytest.raises(KeyError):
        dag.index("nope")
    with pytest.raises(IndexError):
        dag.index(9)
