"""Cross-fitted Fisher random walk debiased estimator and its confidence intervals."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from ._fallback import logistic, logistic_deriv
from .errors import ContractError, NumericalError, ParameterError, RankDeficiencyError
from .graph import check_good_event
from .potentials import potentials_batch
from .scores import FittedScores, ModelSpec, OptimizerConfig, fit_mle, split_indices
from .simulate import Dataset, Domain, WholeSpace, domain_from_spec

SCHEMA = "prefwalk/v1"
VARIANCE_SCALINGS = ("literal", "pooled")


def normal_cdf(z):
    return ndtr(z) if np.ndim(z) else float(ndtr(z))


def normal_quantile(p):
    arr = np.asarray(p, dtype=np.float64)
    if np.any((arr <= 0) | (arr >= 1)) or np.isnan(arr).any():
        raise ParameterError(f"quantile level must lie in (0, 1), got {p}")
    out = ndtri(arr)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Query:
    """Contrast ``Q_{i0 j0}(omega)`` with 0-indexed items."""

    i0: int
    j0: int
    omega: Domain = field(default_factory=WholeSpace)
    alpha: float = 0.05
    S: int = 3

    def __post_init__(self):
        if self.i0 == self.j0:
            raise ParameterError("i0 and j0 must differ")
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError("alpha must lie in (0, 1)")
        if int(self.S) != self.S or self.S < 1:
            raise ParameterError("S must be a positive integer")
        if not isinstance(self.omega, Domain):
            object.__setattr__(self, "omega", domain_from_spec(self.omega))


@dataclass
class CrossFit:
    """Fold partition of the replicates and the model fitted on each fold's complement."""

    folds: list
    fitted: list


def cross_fit(dataset: Dataset, spec: ModelSpec, opt: OptimizerConfig | None, S: int, seed=0,
              threads: int = 1) -> CrossFit:
    """Split ``range(L)`` into ``S`` folds and fit one model per complement (no warm starts)."""
    opt = opt or OptimizerConfig()
    if S > dataset.L:
        raise ParameterError(f"S={S} exceeds L={dataset.L}")
    folds = split_indices(dataset.L, S, seed)
    everything = np.arange(dataset.L)

    def fit_one(s):
        train = np.setdiff1d(everything, folds[s]) if S > 1 else everything
        return fit_mle(dataset, spec, replace(opt, seed=opt.seed + 7919 * s), replicates=train)

    if threads > 1 and S > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit_one, range(S)))
    else:
        fitted = [fit_one(s) for s in range(S)]
    return CrossFit(folds, fitted)


@dataclass
class FoldTerms:
    """Per-record ingredients of the fold statistic, in record order of the fold."""

    rows: np.ndarray
    active: np.ndarray
    plugin: np.ndarray
    correction: np.ndarray
    pi_gap: np.ndarray
    theta: np.ndarray
    replicate: np.ndarray


def _check_leakage(fitted: FittedScores, fold, S):
    if fitted.trained_on is None or S == 1:
        return
    overlap = np.intersect1d(np.asarray(fitted.trained_on), np.asarray(fold))
    if overlap.size:
        raise ContractError(
            f"score model was trained on {overlap.size} replicate(s) of its evaluation fold")


def fold_terms(dataset: Dataset, fold, fitted: FittedScores, i0: int, j0: int, omega: Domain,
               S: int = 2) -> FoldTerms:
    fold = np.asarray(fold, dtype=np.int64)
    if fold.size == 0:
        raise ParameterError("empty fold")
    _check_leakage(fitted, fold, S)
    g = dataset.graph
    rows = dataset.rows_for(fold)
    X = dataset.X[rows]
    theta = fitted.scores(X)
    active = omega.indicator(X)
    plugin = np.where(active, theta[:, i0] - theta[:, j0], 0.0)
    pi = potentials_batch(g, theta, i0, j0, active)
    i = dataset.item_i[rows]
    j = dataset.item_j[rows]
    idx = np.arange(rows.size)
    resid = dataset.y[rows] - logistic(theta[idx, i] - theta[idx, j])
    correction = (pi[idx, i] - pi[idx, j]) * resid
    return FoldTerms(rows, active, plugin, correction, pi[:, i0] - pi[:, j0], theta,
                     dataset.ell[rows])


def fold_estimate(dataset: Dataset, fold, fitted: FittedScores, query: Query, kappa=None) -> float:
    """Fold statistic normalized by ``|A|`` times the fold's replicate count."""
    t = fold_terms(dataset, fold, fitted, query.i0, query.j0, query.omega, query.S)
    w = _weights(kappa, dataset.X[t.rows])
    return float(np.sum(w * (t.plugin + t.correction)) / t.rows.size)


def _weights(kappa, X):
    if kappa is None:
        return np.ones(X.shape[0])
    return kappa.weights(X)


def _tilde_integrand(g, theta, active, i0, j0):
    """Efficiency-bound integrand per record; uses the shared-edge corrections when ``i0 ~ j0``.

    Active records where ``(i0, j0)`` is the only edge of ``i0`` or ``j0`` get NaN,
    which makes the efficiency-bound variance and its interval NaN.
    """
    A = g.adjacency
    fisher_i0 = (A[i0][None, :] * logistic_deriv(theta[:, [i0]] - theta)).sum(axis=1)
    fisher_j0 = (A[j0][None, :] * logistic_deriv(theta[:, [j0]] - theta)).sum(axis=1)
    if np.any(active & ((fisher_i0 <= 0) | (fisher_j0 <= 0))):
        raise NumericalError("zero Fisher degree at i0 or j0")
    if not g.has_edge(i0, j0):
        val = 1.0 / fisher_i0 + 1.0 / fisher_j0
    else:
        shared = logistic_deriv(theta[:, i0] - theta[:, j0])
        rest_i0 = fisher_i0 - shared
        rest_j0 = fisher_j0 - shared
        with np.errstate(divide="ignore", invalid="ignore"):
            d_i0 = shared / rest_i0
            d_j0 = shared / rest_j0
            val = ((1 + d_i0) ** 2 / fisher_i0 + (1 + d_j0) ** 2 / fisher_j0
                   + 2.0 * shared / (rest_i0 * rest_j0))
        # the inflation terms are undefined when (i0, j0) is the only edge at either end
        val = np.where((rest_i0 > 0) & (rest_j0 > 0), val, np.nan)
    return np.where(active, val, 0.0)


@dataclass
class InferenceReport:
    q_hat: float
    v_hat: float
    v_tilde_hat: float
    ci_lo: float
    ci_hi: float
    ci_tilde_lo: float
    ci_tilde_hi: float
    p_value: float
    per_fold: list
    plugin: float
    alpha: float
    i0: int
    j0: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "i0": self.i0 + 1,
            "j0": self.j0 + 1,
            "alpha": self.alpha,
            "q_hat": self.q_hat,
            "v_hat": self.v_hat,
            "v_tilde_hat": self.v_tilde_hat,
            "ci": [self.ci_lo, self.ci_hi],
            "ci_tilde": [self.ci_tilde_lo, self.ci_tilde_hi],
            "p_value": self.p_value,
            "plugin": self.plugin,
            "per_fold": list(self.per_fold),
            "diagnostics": self.diagnostics,
        }


def _collect(dataset, query, cf, kappa):
    S = len(cf.folds)
    terms, weights = [], []
    for fold, fitted in zip(cf.folds, cf.fitted):
        t = fold_terms(dataset, fold, fitted, query.i0, query.j0, query.omega, S)
        terms.append(t)
        weights.append(_weights(kappa, dataset.X[t.rows]))
    per_fold = [float(np.sum(w * (t.plugin + t.correction)) / t.rows.size)
                for t, w in zip(terms, weights)]
    return terms, weights, per_fold


def _variance_parts(dataset, query, cf, terms, weights, q_hat, kappa_power, variance_scaling):
    if variance_scaling not in VARIANCE_SCALINGS:
        raise ParameterError(f"variance_scaling must be one of {VARIANCE_SCALINGS}")
    g = dataset.graph
    E = g.edge_count
    parts = {"first": [], "sigma": [], "sigma_tilde": []}
    for fold, t, w in zip(cf.folds, terms, weights):
        n_rep = len(fold) if variance_scaling == "literal" else dataset.L
        first = float(np.mean((w * t.plugin - q_hat) ** 2)) / (E * n_rep)
        wk = w * w if kappa_power == 2 else w
        parts["first"].append(first)
        parts["sigma"].append(float(np.mean(t.pi_gap * wk)) / E)
        parts["sigma_tilde"].append(
            float(np.mean(_tilde_integrand(g, t.theta, t.active, query.i0, query.j0) * wk)))
    L = dataset.L
    parts["v"] = float(np.mean([f + s / L for f, s in zip(parts["first"], parts["sigma"])]))
    parts["v_tilde"] = float(np.mean([f + s / L for f, s in zip(parts["first"], parts["sigma_tilde"])]))
    return parts


def _summarize(dataset: Dataset, query: Query, cf: CrossFit, kappa=None, kappa_power=2,
               variance_scaling="literal", p=None) -> InferenceReport:
    g = dataset.graph
    E = g.edge_count
    S = len(cf.folds)
    terms, weights, per_fold = _collect(dataset, query, cf, kappa)
    plug_fold = [float(np.sum(w * t.plugin) / t.rows.size) for t, w in zip(terms, weights)]
    q_hat = float(np.mean(per_fold))
    plugin = float(np.mean(plug_fold))
    parts = _variance_parts(dataset, query, cf, terms, weights, q_hat, kappa_power, variance_scaling)
    v_hat, v_tilde = parts["v"], parts["v_tilde"]
    if not (v_hat > 0 and math.isfinite(v_hat)):
        raise NumericalError(f"variance estimate is not positive: {v_hat}")
    z = normal_quantile(1.0 - query.alpha / 2.0)
    half = z * math.sqrt(v_hat)
    half_t = z * math.sqrt(v_tilde) if v_tilde > 0 else float("nan")
    if math.isnan(v_tilde):
        warnings.warn("efficiency-bound variance undefined: (i0, j0) is the only edge at one "
                      "of its endpoints; v_tilde_hat is NaN", RuntimeWarning, stacklevel=3)
    p_value = float(ndtr(-q_hat / math.sqrt(v_hat)))
    ref_p = p if p is not None else 2.0 * E / (g.n * (g.n - 1))
    diagnostics = {
        "edge_count": E,
        "n": g.n,
        "L": dataset.L,
        "S": S,
        "fold_sizes": [len(f) for f in cf.folds],
        "variance_first_term": parts["first"],
        "sigma": parts["sigma"],
        "sigma_tilde": parts["sigma_tilde"],
        "variance_scaling": variance_scaling,
        "v_tilde_defined": not math.isnan(v_tilde),
        "good_event": check_good_event(g, ref_p).to_dict() if g.n >= 2 else None,
        "fits": [f.diagnostics for f in cf.fitted],
    }
    return InferenceReport(q_hat, v_hat, v_tilde, q_hat - half, q_hat + half, q_hat - half_t,
                           q_hat + half_t, p_value, per_fold, plugin, query.alpha, query.i0,
                           query.j0, diagnostics)


def estimate(dataset: Dataset, query: Query, spec: ModelSpec | None = None,
             opt: OptimizerConfig | None = None, seed: int = 0, threads: int = 1, p=None,
             variance_scaling="literal", crossfit: CrossFit | None = None) -> InferenceReport:
    """Cross-fitted debiased estimate, both variance estimates, CIs and one-sided p-value."""
    spec = spec or ModelSpec()
    if not dataset.graph.connected:
        raise RankDeficiencyError("comparison graph must be connected")
    if query.S > dataset.L:
        raise ParameterError(f"S={query.S} exceeds L={dataset.L}")
    cf = crossfit or cross_fit(dataset, spec, opt, query.S, seed, threads)
    return _summarize(dataset, query, cf, None, 2, variance_scaling, p)


def plugin_estimate(dataset: Dataset, query: Query, crossfit: CrossFit) -> float:
    """Cross-fitted plug-in average without the residual correction."""
    vals = []
    for fold, fitted in zip(crossfit.folds, crossfit.fitted):
        rows = dataset.rows_for(fold)
        X = dataset.X[rows]
        theta = fitted.scores(X)
        plug = np.where(query.omega.indicator(X), theta[:, query.i0] - theta[:, query.j0], 0.0)
        vals.append(float(np.mean(plug)))
    return float(np.mean(vals))


def variance_tilde(dataset: Dataset, query: Query, crossfit: CrossFit,
                   variance_scaling="literal") -> float:
    """Efficiency-bound variance estimate (plug-in term plus Fisher-degree term over L)."""
    terms, weights, per_fold = _collect(dataset, query, crossfit, None)
    q_hat = float(np.mean(per_fold))
    return _variance_parts(dataset, query, crossfit, terms, weights, q_hat, 2,
                           variance_scaling)["v_tilde"]
