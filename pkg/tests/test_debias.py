import math

import numpy as np
import pytest

from prefwalk.debias import (CrossFit, Query, cross_fit, estimate, fold_estimate, fold_terms,
                             normal_cdf, normal_quantile, plugin_estimate, variance_tilde)
from prefwalk.errors import ContractError, NumericalError, ParameterError, RankDeficiencyError
from prefwalk.graph import ComparisonGraph, connected_erdos_renyi
from prefwalk.potentials import potential_vector
from prefwalk.scores import FittedScores, ModelSpec
from prefwalk.simulate import (IntervalDomain, ScoreFunction, UniformSampler, WholeSpace,
                               constant_scores, psi, setting_one_scores, setting_sampler,
                               simulate_dataset)

OMEGA = IntervalDomain([0.3], [0.8])


def oracle_crossfit(values, L, S=1):
    """Every fold scored by the true constant scores (no training records)."""
    values = np.asarray(values, dtype=float)
    fitted = FittedScores(ModelSpec("constant"), values - values.mean(), values.size, 1)
    folds = np.array_split(np.arange(L), S)
    return CrossFit(folds, [fitted] * S)


def zero_residual_data(g, values, L, seed=0):
    """Outcomes replaced by their success probabilities, so every residual is zero."""
    return simulate_dataset(g, constant_scores(values), L, UniformSampler(0, 1, 1), seed=seed,
                            outcome_override=lambda X, diff: psi(diff))


# ---------------------------------------------------------------- normal helpers

def test_normal_helpers():
    assert normal_cdf(0.0) == 0.5
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
    for z in (0.5, 1.0, 3.0):
        assert normal_cdf(z) + normal_cdf(-z) == pytest.approx(1.0, abs=1e-15)
        assert normal_quantile(normal_cdf(z)) == pytest.approx(z, abs=1e-9)
    assert normal_cdf(1.0) == pytest.approx(0.8413447460685429, abs=1e-10)
    for bad in (0.0, 1.0, -0.1, float("nan")):
        with pytest.raises(ParameterError):
            normal_quantile(bad)


def test_query_validation():
    with pytest.raises(ParameterError):
        Query(1, 1)
    with pytest.raises(ParameterError):
        Query(0, 1, alpha=1.0)
    with pytest.raises(ParameterError):
        Query(0, 1, S=0)
    assert Query(0, 1, omega={"kind": "interval", "lower": [0.3], "upper": [0.8]}).omega.to_dict() \
        == OMEGA.to_dict()


# ---------------------------------------------------------------- fold statistic

def test_zero_residuals_give_plugin():
    g = ComparisonGraph.complete(4)
    values = np.array([0.4, 0.1, -0.2, -0.3])
    ds = zero_residual_data(g, values, 30)
    cf = oracle_crossfit(values, 30, S=3)
    q = Query(0, 2, WholeSpace(), S=3)
    rep = estimate(ds, q, crossfit=cf)
    assert rep.q_hat == pytest.approx(values[0] - values[2], abs=1e-12)
    assert rep.q_hat == pytest.approx(plugin_estimate(ds, q, cf), abs=1e-12)
    assert rep.plugin == pytest.approx(rep.q_hat, abs=1e-12)


def test_inactive_domain_gives_zero():
    g = ComparisonGraph.complete(3)
    ds = simulate_dataset(g, setting_one_scores(3), 20, setting_sampler("I"), seed=0)
    cf = oracle_crossfit([0.2, 0.0, -0.2], 20)
    nowhere = IntervalDomain([5.0], [6.0])
    assert fold_estimate(ds, cf.folds[0], cf.fitted[0], Query(0, 1, nowhere, S=1)) == 0.0
    assert plugin_estimate(ds, Query(0, 1, nowhere, S=1), cf) == 0.0
    terms = fold_terms(ds, cf.folds[0], cf.fitted[0], 0, 1, nowhere)
    assert not terms.active.any() and np.all(terms.correction == 0.0)


def test_k2_hand_computation():
    g = ComparisonGraph.complete(2)
    ds = simulate_dataset(g, constant_scores([0.3, -0.3]), 4, UniformSampler(0, 1, 1), seed=2)
    a = 0.25
    fitted = FittedScores(ModelSpec("constant"), np.array([a, -a]), 2, 1)
    got = fold_estimate(ds, np.arange(4), fitted, Query(0, 1, S=1))
    w = psi(2 * a) * (1 - psi(2 * a))
    y = ds.y.astype(float)
    expect = sum(2 * a + (y[r] - psi(2 * a)) / w for r in range(4)) / 4
    assert got == pytest.approx(expect, abs=1e-12)
    assert potential_vector(g, np.array([a, -a]), 0, 1).pi[0] == pytest.approx(0.5 / w, abs=1e-12)


def test_edge_query_uses_edge_correction(triangle):
    ds = zero_residual_data(triangle, np.zeros(3), 10)
    rep = estimate(ds, Query(0, 1, S=1), crossfit=oracle_crossfit(np.zeros(3), 10))
    # shared edge weight 1/4, other incident weight 1/4 at each end: (2^2/(1/2)) * 2 + 2 (1/4)/(1/16)
    assert rep.diagnostics["sigma_tilde"] == [pytest.approx(24.0, abs=1e-12)]


def test_tilde_undefined_when_query_edge_is_a_bridge_leaf():
    g = ComparisonGraph.path(3)
    ds = zero_residual_data(g, np.zeros(3), 10)
    with pytest.warns(RuntimeWarning, match="efficiency-bound"):
        rep = estimate(ds, Query(0, 1, S=1), crossfit=oracle_crossfit(np.zeros(3), 10))
    assert math.isnan(rep.v_tilde_hat) and math.isnan(rep.ci_tilde_lo)
    assert rep.v_hat > 0 and not rep.diagnostics["v_tilde_defined"]


def test_star_tilde_integrand(star4):
    ds = zero_residual_data(star4, np.zeros(4), 12)
    cf = oracle_crossfit(np.zeros(4), 12)
    rep = estimate(ds, Query(1, 2, S=1), crossfit=cf)
    assert rep.diagnostics["sigma_tilde"] == [pytest.approx(8.0, abs=1e-12)]
    nowhere = Query(1, 2, IntervalDomain([2.0], [3.0]), S=1)
    assert variance_tilde(ds, nowhere, cf) == 0.0
    with pytest.raises(NumericalError):
        estimate(ds, nowhere, crossfit=cf)


def test_leakage_detected():
    g = ComparisonGraph.complete(3)
    ds = simulate_dataset(g, setting_one_scores(3), 10, setting_sampler("I"), seed=0)
    cheat = FittedScores(ModelSpec("constant"), np.zeros(3), 3, 1, trained_on=tuple(range(10)))
    with pytest.raises(ContractError):
        fold_terms(ds, np.arange(5), cheat, 0, 1, WholeSpace(), S=2)
    with pytest.raises(ParameterError):
        fold_terms(ds, np.array([], dtype=int), cheat, 0, 1, WholeSpace(), S=2)


# ---------------------------------------------------------------- estimate

def test_estimate_report_invariants(small_setting_one):
    rep = estimate(small_setting_one, Query(0, 3, OMEGA), ModelSpec("linear"), seed=1)
    assert rep.q_hat == pytest.approx(np.mean(rep.per_fold), abs=1e-12)
    assert rep.v_hat > 0 and rep.ci_lo < rep.q_hat < rep.ci_hi
    assert 0.0 <= rep.p_value <= 1.0
    z = normal_quantile(0.975)
    assert rep.ci_hi - rep.ci_lo == pytest.approx(2 * z * math.sqrt(rep.v_hat), rel=1e-12)
    assert rep.p_value == pytest.approx(1 - normal_cdf(rep.q_hat / math.sqrt(rep.v_hat)), abs=1e-12)
    d = rep.to_dict()
    assert (d["i0"], d["j0"]) == (1, 4) and d["schema"] == "prefwalk/v1"
    assert d["diagnostics"]["edge_count"] == small_setting_one.graph.edge_count


def test_estimate_deterministic(small_setting_one):
    a = estimate(small_setting_one, Query(0, 3, OMEGA), ModelSpec("linear"), seed=4)
    b = estimate(small_setting_one, Query(0, 3, OMEGA), ModelSpec("linear"), seed=4, threads=3)
    assert a.to_dict() == b.to_dict()


def test_unequal_folds_and_scaling_flag(small_setting_one):
    ds = small_setting_one
    q = Query(0, 3, OMEGA, S=7)  # 60 replicates do not split evenly into 7 folds
    cf = cross_fit(ds, ModelSpec("linear"), None, 7, seed=2)
    assert len({len(f) for f in cf.folds}) == 2
    lit = estimate(ds, q, crossfit=cf)
    pooled = estimate(ds, q, crossfit=cf, variance_scaling="pooled")
    per_fold = [fold_estimate(ds, f, m, q) for f, m in zip(cf.folds, cf.fitted)]
    assert lit.per_fold == pytest.approx(per_fold, abs=1e-13)
    assert lit.q_hat == pooled.q_hat
    ratios = np.array(lit.diagnostics["variance_first_term"]) / pooled.diagnostics["variance_first_term"]
    assert np.allclose(ratios, [ds.L / len(f) for f in cf.folds], rtol=1e-12)
    assert lit.diagnostics["sigma"] == pooled.diagnostics["sigma"]
    with pytest.raises(ParameterError):
        estimate(ds, q, crossfit=cf, variance_scaling="other")
    assert variance_tilde(ds, q, cf) == pytest.approx(lit.v_tilde_hat, rel=1e-12)


def test_estimate_preconditions():
    g = ComparisonGraph(4, ((0, 1), (2, 3)))
    ds = simulate_dataset(g, setting_one_scores(4), 5, setting_sampler("I"), seed=0)
    with pytest.raises(RankDeficiencyError):
        estimate(ds, Query(0, 1, S=1))
    g2 = ComparisonGraph.complete(3)
    ds2 = simulate_dataset(g2, setting_one_scores(3), 2, setting_sampler("I"), seed=0)
    with pytest.raises(ParameterError):
        estimate(ds2, Query(0, 1, S=3))


def test_symmetric_items_null():
    """Items 0 and 1 have identical score functions, so the contrast is exactly zero."""
    f = ScoreFunction(4, 1, lambda X: np.hstack([X, X, -X, -X]))
    g = ComparisonGraph.complete(4)
    inside = 0
    for seed in range(100):
        ds = simulate_dataset(g, f, 100, setting_sampler("I"), seed=seed)
        rep = estimate(ds, Query(0, 1, OMEGA), ModelSpec("linear"), seed=seed)
        inside += abs(rep.q_hat) <= 3 * math.sqrt(rep.v_hat)
    assert inside >= 95


def test_tilde_close_to_vhat_on_dense_graph():
    g, _ = connected_erdos_renyi(50, 0.5, seed=0)
    ds = simulate_dataset(g, setting_one_scores(50), 30, setting_sampler("I"), seed=0)
    rep = estimate(ds, Query(0, 3, OMEGA), ModelSpec("linear"), seed=0, p=0.5)
    assert 0.8 <= rep.v_tilde_hat / rep.v_hat <= 1.25


def test_ci_shrinks_with_L_and_variance_scale():
    lengths = {}
    for L in (500, 2000):
        vals = []
        for rep in range(3):
            g, _ = connected_erdos_renyi(20, 0.2, seed=50 + rep)
            ds = simulate_dataset(g, setting_one_scores(20), L, setting_sampler("I"), seed=rep)
            r = estimate(ds, Query(0, 3, OMEGA), ModelSpec("linear"), seed=rep, p=0.2)
            vals.append(r.ci_hi - r.ci_lo)
            assert 0.01 <= 20 * 0.2 * L * r.v_hat <= 100
        lengths[L] = np.mean(vals)
    assert lengths[2000] < lengths[500]


@pytest.mark.parametrize("n,p,L", [(10, 0.5, 200), (30, 0.3, 100)])
def test_variance_scale_band(n, p, L):
    g, _ = connected_erdos_renyi(n, p, seed=n)
    ds = simulate_dataset(g, setting_one_scores(n), L, setting_sampler("I"), seed=n)
    r = estimate(ds, Query(0, 3, OMEGA), ModelSpec("linear"), seed=n, p=p)
    assert 0.01 <= n * p * L * r.v_hat <= 100
