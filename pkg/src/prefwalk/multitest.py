"""Max-statistic multiple testing with a Gaussian multiplier bootstrap."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .debias import SCHEMA, CrossFit, fold_terms
from .errors import ParameterError
from .simulate import Dataset, Domain, domain_from_spec


@dataclass(frozen=True)
class HypothesisFamily:
    """Null hypotheses ``Q_{i_t j_t}(omega_t) <= 0`` for ``t = 1..T`` (0-indexed items)."""

    entries: tuple
    alpha: float = 0.05

    def __post_init__(self):
        if not self.entries:
            raise ParameterError("hypothesis family is empty")
        clean = []
        for i, j, omega in self.entries:
            if i == j:
                raise ParameterError(f"hypothesis ({i}, {j}) compares an item with itself")
            clean.append((int(i), int(j), omega if isinstance(omega, Domain) else domain_from_spec(omega)))
        object.__setattr__(self, "entries", tuple(clean))
        if not (0.0 < self.alpha < 1.0):
            raise ParameterError("alpha must lie in (0, 1)")

    @property
    def T(self):
        return len(self.entries)


def best_item_family(i0: int, omega, n: int, alpha: float = 0.05) -> HypothesisFamily:
    """``item i0 beats every other item on omega``; the vacuous self-comparison is dropped."""
    if n < 2:
        raise ParameterError("n must be >= 2")
    return HypothesisFamily(tuple((i0, j, omega) for j in range(n) if j != i0), alpha)


def per_replicate_statistics(dataset: Dataset, family: HypothesisFamily,
                             crossfit: CrossFit) -> np.ndarray:
    """``T x L`` matrix whose column ``l`` averages the debiased integrand over edges at replicate ``l``.

    Each replicate is scored with the model fitted without its fold. When the
    folds have unequal sizes, column ``l`` is rescaled by ``L / (S |fold(l)|)``
    so that row means reproduce the fold-averaged estimate exactly.
    """
    E = dataset.graph.edge_count
    S = len(crossfit.folds)
    L = dataset.L
    scale = np.empty(L)
    for fold in crossfit.folds:
        scale[np.asarray(fold)] = L / (S * len(fold))
    out = np.zeros((family.T, L))
    for t, (i, j, omega) in enumerate(family.entries):
        for fold, fitted in zip(crossfit.folds, crossfit.fitted):
            terms = fold_terms(dataset, fold, fitted, i, j, omega, S)
            out[t] += np.bincount(terms.replicate, weights=terms.plugin + terms.correction,
                                  minlength=L)
    return out * scale / E


@dataclass
class BootstrapResult:
    q_hat: np.ndarray
    stats: np.ndarray
    draws: np.ndarray
    statistic: float
    p_value: float
    p_value_se: float
    alpha: float
    rejections: np.ndarray
    np_scale: float
    degenerate: bool = False
    family: list = field(default_factory=list)

    def to_dict(self, include_draws=False):
        out = {
            "schema": SCHEMA,
            "q_hat": self.q_hat.tolist(),
            "statistic": self.statistic,
            "p_value": self.p_value,
            "p_value_se": self.p_value_se,
            "alpha": self.alpha,
            "rejections": self.rejections.tolist(),
            "np_scale": self.np_scale,
            "degenerate": self.degenerate,
            "draws": len(self.draws),
            "family": self.family,
        }
        if include_draws:
            out["bootstrap_draws"] = self.draws.tolist()
        return out


def bootstrap_max_pvalue(stats, q_hat, np_scale: float, B: int = 2000, seed=0,
                         alpha: float = 0.05) -> BootstrapResult:
    """Multiplier-bootstrap p-value for ``max_t sqrt(np L) q_hat_t``.

    Each draw forms ``max_t L^{-1/2} sum_l sqrt(np)(stats[t, l] - q_hat[t]) xi_l``
    with standard normal ``xi``.
    """
    stats = np.atleast_2d(np.asarray(stats, dtype=np.float64))
    q_hat = np.asarray(q_hat, dtype=np.float64).reshape(-1)
    T, L = stats.shape
    if q_hat.shape != (T,):
        raise ParameterError("q_hat length must match the number of hypotheses")
    if B < 100:
        raise ParameterError("need at least 100 bootstrap draws")
    if L < 2:
        raise ParameterError("need at least 2 replicates")
    if np_scale <= 0:
        raise ParameterError("np_scale must be positive")
    centered = math.sqrt(np_scale) * (stats - q_hat[:, None])
    threshold = math.sqrt(np_scale * L) * float(q_hat.max())
    degenerate = bool(np.all(centered == 0.0))
    if degenerate:
        warnings.warn("per-replicate statistics have zero spread; bootstrap law is a point mass",
                      RuntimeWarning, stacklevel=2)
        draws = np.zeros(B)
        p = 1.0 if q_hat.max() <= 0 else 0.0
    else:
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((B, L))
        draws = (xi @ centered.T).max(axis=1) / math.sqrt(L)
        p = float(np.mean(draws > threshold))
    rejections = np.full(T, p < alpha)
    return BootstrapResult(q_hat, stats, draws, threshold, p, math.sqrt(p * (1 - p) / B), alpha,
                           rejections, float(np_scale), degenerate)


def test_family(dataset: Dataset, family: HypothesisFamily, crossfit: CrossFit, p=None,
                B: int = 2000, seed=0) -> BootstrapResult:
    """Per-replicate statistics, their row means, and the bootstrap decision.

    ``p`` is the Erdos-Renyi connection probability; without it ``2|A| / (n(n-1))`` is used.
    """
    g = dataset.graph
    stats = per_replicate_statistics(dataset, family, crossfit)
    q_hat = stats.mean(axis=1)
    if p is None:
        p = 2.0 * g.edge_count / (g.n * (g.n - 1))
    res = bootstrap_max_pvalue(stats, q_hat, g.n * p, B, seed, family.alpha)
    res.family = [{"i": i + 1, "j": j + 1, "omega": om.to_dict()} for i, j, om in family.entries]
    return res


test_family.__test__ = False
