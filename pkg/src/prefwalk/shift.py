"""Inference on a target context distribution through a known density ratio."""
from __future__ import annotations

import json
import math

import numpy as np

from .debias import CrossFit, InferenceReport, Query, _summarize, cross_fit
from .errors import ParameterError, RankDeficiencyError
from .scores import ModelSpec, OptimizerConfig
from .simulate import Dataset, domain_from_spec


class DensityRatio:
    """Target-to-source density ratio ``kappa(x) >= 0`` with a declared bound.

    Parameters
    ----------
    func : callable
        Maps an ``(m, d)`` context array to ``m`` nonnegative weights.
    sup_bound : float
        Declared upper bound; evaluations above it are rejected.
    name : str, optional
    """

    def __init__(self, func, sup_bound: float, name: str = "custom", spec=None):
        if not (sup_bound > 0 and math.isfinite(sup_bound)):
            raise ParameterError("sup_bound must be positive and finite")
        self._func = func
        self.sup_bound = float(sup_bound)
        self.name = name
        self.spec = spec

    def weights(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        w = np.asarray(self._func(X), dtype=np.float64).reshape(-1)
        if w.shape != (X.shape[0],):
            raise ParameterError(f"kappa returned {w.shape[0]} values for {X.shape[0]} contexts")
        bad = np.flatnonzero(np.isnan(w) | (w < 0))
        if bad.size:
            r = int(bad[0])
            raise ParameterError(f"kappa is {w[r]} (negative or NaN) at record {r}")
        over = np.flatnonzero(w > self.sup_bound)
        if over.size:
            r = int(over[0])
            raise ParameterError(f"kappa is {w[r]} at record {r}, above its bound {self.sup_bound}")
        return w

    def __call__(self, X):
        return self.weights(X)

    def scaled(self, c: float) -> "DensityRatio":
        if c <= 0:
            raise ParameterError("scale must be positive")
        return DensityRatio(lambda X: c * self._func(X), c * self.sup_bound, f"{c}*{self.name}")

    def to_dict(self):
        return self.spec if self.spec is not None else {"kind": self.name}


def constant_ratio(value: float) -> DensityRatio:
    value = float(value)
    if not (value >= 0 and math.isfinite(value)):
        raise ParameterError("constant kappa must be finite and nonnegative")
    return DensityRatio(lambda X: np.full(X.shape[0], value), max(value, 1e-300), "constant",
                        {"kind": "constant", "value": value})


def indicator_scaled_ratio(domain, inside: float, outside: float = 0.0) -> DensityRatio:
    """``inside`` on ``domain`` and ``outside`` elsewhere."""
    dom = domain_from_spec(domain)
    inside, outside = float(inside), float(outside)
    if min(inside, outside) < 0 or not (math.isfinite(inside) and math.isfinite(outside)):
        raise ParameterError("indicator-scaled kappa needs finite nonnegative levels")
    spec = {"kind": "indicator_scaled", "domain": dom.to_dict(), "inside": inside, "outside": outside}
    return DensityRatio(lambda X: np.where(dom.indicator(X), inside, outside),
                        max(inside, outside, 1e-300), "indicator_scaled", spec)


def density_ratio_from_spec(spec) -> DensityRatio:
    """``{"kind": "constant", "value": c}`` or
    ``{"kind": "indicator_scaled", "domain": ..., "inside": a, "outside": b}``."""
    if isinstance(spec, DensityRatio):
        return spec
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"kappa spec is not valid JSON: {exc}") from None
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ParameterError("kappa spec must be an object with a 'kind'")
    try:
        if spec["kind"] == "constant":
            return constant_ratio(spec["value"])
        if spec["kind"] == "indicator_scaled":
            return indicator_scaled_ratio(spec["domain"], spec["inside"], spec.get("outside", 0.0))
    except KeyError as exc:
        raise ParameterError(f"kappa spec is missing {exc.args[0]!r}") from None
    raise ParameterError(f"unknown kappa kind {spec['kind']!r}")


def shift_estimate(dataset: Dataset, query: Query, kappa: DensityRatio,
                   spec: ModelSpec | None = None, opt: OptimizerConfig | None = None,
                   seed: int = 0, threads: int = 1, p=None, kappa_power: int = 2,
                   variance_scaling="literal", crossfit: CrossFit | None = None) -> InferenceReport:
    """Debiased estimate of the target-domain contrast ``E_t[1(X in omega)(theta_i0 - theta_j0)]``.

    Every summand of the fold statistic is multiplied by ``kappa(X)``.

    The variance's first term averages ``(kappa * plugin - q)^2``. The
    comparison-noise term averages ``kappa^k (pi_i0 - pi_j0)`` with
    ``k = kappa_power``: ``2`` (default) is the variance of the weighted
    correction term, ``1`` weights it by kappa only once.
    """
    spec = spec or ModelSpec()
    if kappa_power not in (1, 2):
        raise ParameterError("kappa_power must be 1 or 2")
    if not dataset.graph.connected:
        raise RankDeficiencyError("comparison graph must be connected")
    if query.S > dataset.L:
        raise ParameterError(f"S={query.S} exceeds L={dataset.L}")
    kappa = density_ratio_from_spec(kappa)
    kappa.weights(dataset.X)
    cf = crossfit or cross_fit(dataset, spec, opt, query.S, seed, threads)
    report = _summarize(dataset, query, cf, kappa, kappa_power, variance_scaling, p)
    report.diagnostics["kappa"] = kappa.to_dict()
    report.diagnostics["kappa_power"] = kappa_power
    return report
