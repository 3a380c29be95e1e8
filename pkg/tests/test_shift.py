import json

import numpy as np
import pytest

from prefwalk.debias import CrossFit, Query, cross_fit, estimate
from prefwalk.errors import ParameterError
from prefwalk.graph import (ComparisonGraph, effective_resistance, fisher_laplacian,
                            laplacian_pseudoinverse)
from prefwalk.scores import FittedScores, ModelSpec
from prefwalk.shift import (DensityRatio, constant_ratio, density_ratio_from_spec,
                            indicator_scaled_ratio, shift_estimate)
from prefwalk.simulate import (IntervalDomain, UniformSampler, constant_scores, psi,
                               simulate_dataset)

OMEGA = IntervalDomain([0.3], [0.8])
NUMERIC = ("q_hat", "v_hat", "v_tilde_hat", "ci", "ci_tilde", "p_value", "plugin", "per_fold")


# ---------------------------------------------------------------- density ratios

def test_ratio_constructors():
    X = np.linspace(0, 1, 11)[:, None]
    assert np.array_equal(constant_ratio(1.5)(X), np.full(11, 1.5))
    k = indicator_scaled_ratio({"kind": "interval", "lower": [0.25], "upper": [0.75]}, 2.0)
    assert k(X).tolist() == [0, 0, 0, 2, 2, 2, 2, 2, 0, 0, 0]
    assert k.sup_bound == 2.0
    back = density_ratio_from_spec(json.dumps(k.to_dict()))
    assert np.array_equal(back(X), k(X)) and back.to_dict() == k.to_dict()
    assert np.array_equal(k.scaled(3.0)(X), 3 * k(X))


@pytest.mark.parametrize("bad", ["{", {"value": 1}, {"kind": "constant"}, {"kind": "gaussian"},
                                 {"kind": "constant", "value": -1}])
def test_ratio_spec_rejects(bad):
    with pytest.raises(ParameterError):
        density_ratio_from_spec(bad)


def test_bad_weights_name_record():
    X = np.zeros((5, 1))
    neg = DensityRatio(lambda X: np.array([1, 1, -0.5, 1, 1.0]), 2.0)
    with pytest.raises(ParameterError, match="record 2"):
        neg.weights(X)
    nan = DensityRatio(lambda X: np.array([1, np.nan, 1, 1, 1.0]), 2.0)
    with pytest.raises(ParameterError, match="record 1"):
        nan.weights(X)
    over = DensityRatio(lambda X: np.full(5, 3.0), 2.0)
    with pytest.raises(ParameterError, match="bound"):
        over.weights(X)
    with pytest.raises(ParameterError):
        DensityRatio(lambda X: X[:, 0], 0.0)


# ---------------------------------------------------------------- estimator reductions

def test_unit_ratio_is_bit_exact(small_setting_one):
    q = Query(0, 3, OMEGA)
    base = estimate(small_setting_one, q, ModelSpec("linear"), seed=3).to_dict()
    shifted = shift_estimate(small_setting_one, q, constant_ratio(1.0), ModelSpec("linear"),
                             seed=3).to_dict()
    for key in NUMERIC:
        assert np.array_equal(shifted[key], base[key], equal_nan=True)
    assert shifted["diagnostics"]["kappa"] == {"kind": "constant", "value": 1.0}


def test_constant_two_doubles_estimate(small_setting_one):
    q = Query(0, 3, OMEGA)
    cf = cross_fit(small_setting_one, ModelSpec("linear"), None, 3, seed=0)
    one = shift_estimate(small_setting_one, q, constant_ratio(1.0), crossfit=cf)
    two = shift_estimate(small_setting_one, q, constant_ratio(2.0), crossfit=cf)
    assert two.q_hat == 2 * one.q_hat
    assert two.per_fold == [2 * v for v in one.per_fold]
    assert two.plugin == 2 * one.plugin


@pytest.mark.parametrize("power", [1, 2])
def test_variance_components_scale(power):
    """Zero residuals: the first component scales with c^2, the noise one with c^power."""
    g = ComparisonGraph.complete(4)
    values = np.array([0.5, 0.0, -0.2, -0.3])
    ds = simulate_dataset(g, constant_scores(values), 40, UniformSampler(0, 1, 1), seed=1,
                          outcome_override=lambda X, diff: psi(diff))
    fitted = FittedScores(ModelSpec("constant"), values - values.mean(), 4, 1)
    cf = CrossFit(np.array_split(np.arange(40), 2), [fitted, fitted])
    q = Query(0, 2, OMEGA, S=2)
    c = 3.0
    a = shift_estimate(ds, q, constant_ratio(1.0), crossfit=cf, kappa_power=power)
    b = shift_estimate(ds, q, constant_ratio(c), crossfit=cf, kappa_power=power)
    assert b.q_hat == pytest.approx(c * a.q_hat, rel=1e-14)
    assert np.allclose(b.diagnostics["variance_first_term"],
                       c ** 2 * np.array(a.diagnostics["variance_first_term"]), rtol=1e-12)
    assert np.allclose(b.diagnostics["sigma"], c ** power * np.array(a.diagnostics["sigma"]),
                       rtol=1e-12)
    assert min(a.diagnostics["variance_first_term"]) > 0
    # with exact constant scores, pi_i0 - pi_j0 = |A| R_eff on active records
    theta = values - values.mean()
    r_eff = effective_resistance(laplacian_pseudoinverse(fisher_laplacian(g, theta)), 0, 2)
    for fold, sigma in zip(cf.folds, a.diagnostics["sigma"]):
        share = OMEGA.indicator(ds.X[ds.rows_for(fold)]).mean()
        assert sigma == pytest.approx(r_eff * share, rel=1e-10)


def test_shift_errors(small_setting_one):
    q = Query(0, 3, OMEGA)
    with pytest.raises(ParameterError):
        shift_estimate(small_setting_one, q, constant_ratio(1.0), kappa_power=3)
    bad = DensityRatio(lambda X: np.where(X[:, 0] > 0.5, -1.0, 1.0), 2.0)
    with pytest.raises(ParameterError, match="record"):
        shift_estimate(small_setting_one, q, bad)


def test_indicator_ratio_recovers_target_contrast():
    """Exact scores and zero residuals: the weighted plug-in equals the target-domain contrast."""
    g = ComparisonGraph.complete(3)
    values = np.array([0.4, 0.0, -0.4])
    ds = simulate_dataset(g, constant_scores(values), 4000, UniformSampler(0, 1, 1), seed=2,
                          outcome_override=lambda X, diff: psi(diff))
    fitted = FittedScores(ModelSpec("constant"), values, 3, 1)
    cf = CrossFit([np.arange(4000)], [fitted])
    kappa = indicator_scaled_ratio({"kind": "interval", "lower": [0.25], "upper": [0.75]}, 2.0)
    rep = shift_estimate(ds, Query(0, 2, OMEGA, S=1), kappa, crossfit=cf)
    # target U(0.25, 0.75) puts mass 0.9 on (0.3, 0.8)
    assert rep.q_hat == pytest.approx(0.8 * 0.9, abs=0.03)
