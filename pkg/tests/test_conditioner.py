import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macaw.conditioner import S_CAP, CMade, conditioner_backward, conditioner_forward, init_cmade
from macaw.datasets import scm_dag
from macaw.errors import NonFiniteError, ShapeError
from macaw.graph import build_masks, dag_from_edges, descendants

from test_graph import random_dags


def randomize(net: CMade, seed: int, scale: float = 0.5) -> CMade:
    rng = np.random.default_rng(seed)
    for p, m in zip(net.params(), net.param_masks()):
        p[...] = rng.normal(0.0, scale, p.shape) * m
    return net


def scm_net(seed=0, n=2, L=2):
    dag = scm_dag()
    return dag, init_cmade(build_masks(dag, n, L), seed, dag.sources)


def test_fresh_conditioner_outputs_zero():
    _, net = scm_net(3)
    m = np.random.default_rng(0).normal(size=(7, 5)) * 10
    s, b = conditioner_forward(net, m)
    assert not s.any() and not b.any()


def test_init_is_deterministic_and_seed_sensitive():
    _, a = scm_net(11)
    _, b = scm_net(11)
    _, c = scm_net(12)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    assert any(not np.array_equal(x, y) for x, y in zip(a.weights, c.weights))


def test_init_respects_masks_and_fan_in():
    _, net = scm_net(5, n=3, L=3)
    for W, M in zip(net.weights, net.mask_set.layers()):
        assert np.all(W[M == 0] == 0)
        bound = 1 / np.sqrt(np.maximum(M.sum(axis=1, keepdims=True), 1))
        assert np.all(np.abs(W) <= bound + 1e-15)


def non_ancestors(dag, i):
    anc = {j for j in range(dag.dim) if i in descendants(dag, j)}
    return [j for j in range(dag.dim) if j not in anc]


@settings(max_examples=40, deadline=None)
@given(random_dags(), st.integers(0, 2 ** 32 - 1))
def test_masked_independence(dag, seed):
    net = randomize(init_cmade(build_masks(dag, 2, 2), seed, dag.sources), seed)
    rng = np.random.default_rng(seed)
    m = rng.normal(size=dag.dim)
    s0, b0 = conditioner_forward(net, m)
    for i in range(dag.dim):
        for j in non_ancestors(dag, i):
            m2 = m.copy()
            m2[j] += rng.normal() * 5
            s1, b1 = conditioner_forward(net, m2)
            # bitwise: the masked path contributes an exact zero
            assert s1[i] == s0[i] and b1[i] == b0[i]
        if dag.sources[i]:
            assert s0[i] == 0.0 and b0[i] == 0.0


def test_hand_computed_two_node_chain():
    # chain 0 -> 1, one hidden layer of width 2 (labels 0, 1)
    dag = dag_from_edges(["a", "b"], [("a", "b")])
    net = init_cmade(build_masks(dag, 1, 1), 0, dag.sources)
    W = np.zeros((2, 2))
    W[0, 0] = 1.0                      # input a -> hidden label 0
    net.weights[0] = W
    net.biases[0] = np.array([0.1, 0.0])
    net.scale_w[1, 0] = 1.0            # hidden label 0 -> scale of b
    net.shift_w[1, 0] = 2.0
    net.shift_b[1] = -0.5
    net.in_mean = np.array([0.2, 0.0])
    net.in_std = np.array([2.0, 1.0])
    m = np.array([0.6, 3.0])
    h = np.tanh((0.6 - 0.2) / 2.0 + 0.1)
    s_expected = S_CAP * np.tanh(h / S_CAP)
    b_expected = 2.0 * h - 0.5
    s, b = conditioner_forward(net, m)
    assert s[0] == 0 and b[0] == 0
    assert s[1] == pytest.approx(s_expected, abs=1e-15)
    assert b[1] == pytest.approx(b_expected, abs=1e-15)


def test_scale_is_capped():
    dag = dag_from_edges(["a", "b"], [("a", "b")])
    net = init_cmade(build_masks(dag, 1, 1), 0, dag.sources)
    net.scale_b[1] = 1e6
    s, _ = conditioner_forward(net, np.zeros(2))
    assert 0 < s[1] <= S_CAP


def test_backward_zero_upstream_gives_zero():
    _, net = scm_net(1)
    randomize(net, 1)
    m = np.random.default_rng(2).normal(size=(4, 5))
    grads, gm = conditioner_backward(net, m, np.zeros((4, 5)), np.zeros((4, 5)))
    assert all(not g.any() for g in grads) and not gm.any()


def _scalar_objective(net, m, ws, wb):
    s, b = conditioner_forward(net, m)
    return float(np.sum(ws * s) + np.sum(wb * b))


@pytest.mark.parametrize("seed", range(10))
def test_backward_matches_finite_differences(seed):
    dag, net = scm_net(seed, n=1, L=2)
    randomize(net, seed, 0.7)
    rng = np.random.default_rng(seed + 50)
    net.in_mean = rng.normal(size=5)
    net.in_std = rng.uniform(0.5, 2.0, 5)
    m = rng.normal(size=(3, 5))
    ws, wb = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    grads, gm = conditioner_backward(net, m, ws, wb)
    h = 1e-6
    num_all, ana_all = [], []
    for p, g, mask in zip(net.params(), grads, net.param_masks()):
        flat, gflat, mflat = p.reshape(-1), g.reshape(-1), mask.reshape(-1)
        for k in range(flat.size):
            if mflat[k] == 0:
                assert gflat[k] == 0.0
                continue
            orig = flat[k]
            flat[k] = orig + h
            up = _scalar_objective(net, m, ws, wb)
            flat[k] = orig - h
            down = _scalar_objective(net, m, ws, wb)
            flat[k] = orig
            num_all.append((up - down) / (2 * h))
            ana_all.append(gflat[k])
    for r in range(3):
        for j in range(5):
            e = np.zeros_like(m)
            e[r, j] = h
            num_all.append((_scalar_objective(net, m + e, ws, wb)
                            - _scalar_objective(net, m - e, ws, wb)) / (2 * h))
            ana_all.append(gm[r, j])
    # central differences carry ~1e-9 absolute roundoff, hence the small atol
    np.testing.assert_allclose(ana_all, num_all, rtol=1e-5, atol=1e-8)


def test_frozen_sources_get_zero_gradient():
    dag, net = scm_net(4)
    randomize(net, 4)
    m = np.random.default_rng(0).normal(size=(5, 5))
    gs = np.zeros((5, 5))
    gb = np.zeros((5, 5))
    gs[:, 0] = gb[:, 1] = 1.0         # upstream only on the source outputs
    grads, gm = conditioner_backward(net, m, gs, gb)
    assert all(not g.any() for g in grads) and not gm.any()


def test_unfrozen_sources_can_move():
    dag = scm_dag()
    net = init_cmade(build_masks(dag, 1, 1), 0, dag.sources, freeze_sources=False)
    net.shift_b[0] = 1.5
    _, b = conditioner_forward(net, np.zeros(5))
    assert b[0] == 1.5


def test_input_validation():
    _, net = scm_net()
    with pytest.raises(NonFiniteError):
        conditioner_forward(net, np.array([0, 1, np.nan, 0, 0.0]))
    with pytest.raises(ShapeError):
        conditioner_forward(net, np.zeros(4))
    with pytest.raises(ShapeError):
        conditioner_backward(net, np.zeros((2, 5)), np.zeros((2, 4)), np.zeros((2, 5)))


def test_single_vector_and_batch_agree():
    _, net = scm_net(9)
    randomize(net, 9)
    m = np.random.default_rng(1).normal(size=(6, 5))
    S, B = conditioner_forward(net, m)
    for r in range(6):
        s, b = conditioner_forward(net, m[r])
        assert np.allclose(s, S[r], rtol=0, atol=1e-15) and np.allclose(b, B[r], rtol=0, atol=1e-15)
