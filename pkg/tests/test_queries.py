import numpy as np
import pytest
from scipy import optimize, stats

from macaw.datasets import scm_dag
from macaw.errors import ConfigError, ShapeError, SupportError
from macaw.flow import build_model, forward
from macaw.graph import dag_from_edges, descendants
from macaw.priors import Prior
from macaw.queries import (ClassTask, GroupedModel, classify, counterfactual, grouped_counterfactual,
                           grouped_sample, intervene_sample, map_estimate, sample)

from oracles import randomized_model

U12 = {"x0": Prior.uniform(1, 2)}


def scm_model(seed=0, **kw):
    kw.setdefault("num_layers", 3)
    return randomized_model(scm_dag(), seed, priors=U12, **kw)


def root_find_counterfactual(model, x_obs, j, alpha):
    """Oracle: keep z of every non-intervened descendant, solve it back one scalar at a time."""
    z_obs, _ = forward(model, x_obs)
    x = x_obs.copy()
    x[j] = alpha
    for i in model.dag.topo_order:
        if i == j or i not in descendants(model.dag, j):
            continue

        def gap(v, i=i):
            trial = x.copy()
            trial[i] = v
            return forward(model, trial)[0][i] - z_obs[i]

        lo, hi = x_obs[i] - 10, x_obs[i] + 10
        while gap(lo) > 0:
            lo -= 10 * (hi - lo)
        while gap(hi) < 0:
            hi += 10 * (hi - lo)
        x[i] = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    return x


def test_sampling_is_seeded():
    model = scm_model()
    a, b, c = sample(model, 100, seed=1), sample(model, 100, seed=1), sample(model, 100, seed=2)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert sample(model, 0).shape == (0, 5)


def test_uniform_source_mean():
    x = sample(scm_model(), 10000, seed=0)
    assert abs(x[:, 0].mean() - 1.5) < 0.02
    assert x[:, 0].min() >= 1 and x[:, 0].max() <= 2


def test_intervention_sets_constant_and_keeps_non_descendants():
    model = scm_model(1)
    obs = sample(model, 2000, seed=5)
    do = intervene_sample(model, {"x2": -3.0}, 2000, seed=5)
    assert np.all(do[:, 2] == -3.0)
    assert np.allclose(do[:, [0, 1, 3]], obs[:, [0, 1, 3]], rtol=0, atol=1e-9)
    assert not np.allclose(do[:, 4], obs[:, 4])


def test_sink_intervention_leaves_other_marginals():
    model = scm_model(2)
    obs = sample(model, 5000, seed=10)
    do = intervene_sample(model, {"x4": 7.0}, 5000, seed=11)
    for k in range(4):
        assert stats.ks_2samp(obs[:, k], do[:, k]).pvalue > 0.01


def test_discrete_support_checks():
    model = randomized_model(scm_dag(), 0, priors={"x0": Prior.bernoulli(0.4)}, num_layers=2)
    with pytest.raises(SupportError):
        intervene_sample(model, {"x0": 0.5}, 10)
    with pytest.raises(SupportError):
        counterfactual(model, np.zeros(5), {"x0": 2.0})
    intervene_sample(model, {"x0": 1.0}, 10)
    with pytest.raises(SupportError):
        counterfactual(scm_model(), np.zeros(5), {"x2": np.inf})


def test_null_counterfactual_is_identity():
    model = scm_model(3)
    x = sample(model, 200, seed=0)
    assert np.max(np.abs(counterfactual(model, x, {}) - x)) < 1e-9


def test_counterfactual_locality():
    model = scm_model(4)
    x = sample(model, 300, seed=1)
    cf = counterfactual(model, x, {"x3": 0.25})
    assert np.all(cf[:, 3] == 0.25)
    assert np.max(np.abs(cf[:, [0, 1, 2]] - x[:, [0, 1, 2]])) < 1e-9


@pytest.mark.parametrize("j,alpha", [(0, 1.7), (2, 4.0), (3, -1.0), (4, 0.0)])
def test_counterfactual_matches_root_finding_oracle(j, alpha):
    model = scm_model(5 + j)
    x = sample(model, 12, seed=j)
    cf = counterfactual(model, x, {j: alpha})
    for r in range(12):
        assert np.allclose(cf[r], root_find_counterfactual(model, x[r], j, alpha), rtol=0, atol=1e-8)


def test_counterfactual_on_non_source_keeps_its_latent():
    model = scm_model(9)
    x = sample(model, 20, seed=2)
    cf, z_obs, z_cf = counterfactual(model, x, {"x2": 1.0}, return_latents=True)
    assert np.allclose(z_cf[:, [0, 1, 3, 4]], z_obs[:, [0, 1, 3, 4]])
    z_check, _ = forward(model, cf)
    # every non-intervened coordinate keeps its abducted latent
    assert np.allclose(z_check[:, [0, 1, 3, 4]], z_obs[:, [0, 1, 3, 4]], atol=1e-8)


def test_per_row_intervention_values():
    model = scm_model(1)
    x = sample(model, 5, seed=0)
    vals = np.linspace(1, 2, 5)
    cf = counterfactual(model, x, {"x0": vals})
    assert np.array_equal(cf[:, 0], vals)
    with pytest.raises(ShapeError):
        counterfactual(model, x, {"x0": vals[:3]})


def class_model(seed=None):
    dag = dag_from_edges(["c", "y"], [("c", "y")])
    prior = {"c": Prior.categorical([0, 1, 2], [0.2, 0.3, 0.5])}
    if seed is None:
        return build_model(dag, prior, num_layers=2)
    return randomized_model(dag, seed, priors=prior, num_layers=2)


def test_flat_likelihood_returns_prior():
    post = classify(class_model(), np.array([[0.0, 0.3], [2.0, -1.0]]), ClassTask("c", [0, 1, 2]))
    assert np.allclose(post, [[0.2, 0.3, 0.5]] * 2, atol=1e-12)


def test_posterior_is_bayes_rule():
    model = class_model(3)
    row = np.array([1.0, 0.7])
    post = classify(model, row, ClassTask("c", [0, 1, 2]))
    assert post.sum() == pytest.approx(1.0, abs=1e-12)
    # direct Bayes with the model's own likelihood
    lik = []
    for v in (0, 1, 2):
        z, ld = forward(model, np.array([v, 0.7]))
        lik.append(stats.norm.pdf(z[1]) * np.exp(ld))
    expected = np.array(lik) * [0.2, 0.3, 0.5]
    assert np.allclose(post, expected / expected.sum(), atol=1e-12)


def test_classify_errors():
    model = class_model(1)
    with pytest.raises(ConfigError):
        classify(model, np.zeros(2), ClassTask("y", [0, 1]))
    with pytest.raises(SupportError):
        classify(model, np.zeros(2), ClassTask("c", [0, 5]))


def test_map_ties_prefer_smaller_value():
    assert map_estimate(np.array([0.4, 0.2, 0.4]), [30, 10, 20]) == 20
    assert map_estimate(np.array([0.5, 0.5]), [3, 1]) == 1
    out = map_estimate(np.array([[0.1, 0.9], [0.6, 0.4]]), [5, 6])
    assert out.tolist() == [6, 5]


def two_group_model(seed=0, block=2):
    names = ["s", "t"] + [f"g{k}" for k in range(block)]
    edges = [("s", "t")] + [(p, n) for p in ("s", "t") for n in names[2:]]
    dag = dag_from_edges(names, edges)
    prior = {"s": Prior.bernoulli(0.5)}
    groups = [randomized_model(dag, seed + g, priors=prior, num_layers=2) for g in range(2)]
    return GroupedModel(("s", "t"), groups, block)


def test_grouped_model_validation():
    gm = two_group_model()
    assert gm.full_dim == 6 and gm.columns(1).tolist() == [0, 1, 4, 5]
    with pytest.raises(ConfigError):
        GroupedModel(("t", "s"), gm.groups, 2)
    with pytest.raises(ConfigError):
        GroupedModel(("s", "t"), gm.groups, 3)
    with pytest.raises(ConfigError):
        GroupedModel(("s", "t"), [], 2)
    other = two_group_model(5).groups[0]
    other.priors[0] = Prior.bernoulli(0.3)
    with pytest.raises(ConfigError):
        GroupedModel(("s", "t"), [gm.groups[0], other], 2)


def test_grouped_sampling_shares_demographics():
    gm = two_group_model(1)
    x = grouped_sample(gm, 400, seed=3)
    assert x.shape == (400, 6)
    assert np.array_equal(x, grouped_sample(gm, 400, seed=3))
    # group two reproduces its block from the shared columns and its own latents
    z2, _ = forward(gm.groups[1], x[:, gm.columns(1)])
    assert np.all(np.isfinite(z2))
    do = grouped_sample(gm, 400, seed=3, intervention={"s": 1.0})
    assert np.all(do[:, 0] == 1.0)


def test_grouped_counterfactual_matches_per_group():
    gm = two_group_model(2)
    x = grouped_sample(gm, 50, seed=0)
    cf = grouped_counterfactual(gm, x, {"t": 0.5})
    for g in range(2):
        single = counterfactual(gm.groups[g], x[:, gm.columns(g)], {"t": 0.5})
        assert np.allclose(cf[:, gm.columns(g)], single, rtol=0, atol=1e-12)
    assert np.allclose(cf[:, 0], x[:, 0], atol=1e-9)
    with pytest.raises(ShapeError):
        grouped_counterfactual(gm, x[:, :5], {"t": 0.5})
