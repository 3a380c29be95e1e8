"""Contextual BTL data generation, ground-truth scores and domains."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from ._fallback import logistic
from .errors import ParameterError
from .graph import ComparisonGraph

SQRT3 = math.sqrt(3.0)


def psi(t):
    """Logistic sigmoid, stable for large ``|t|``; accepts scalars or arrays."""
    arr = np.asarray(t, dtype=np.float64)
    if np.isnan(arr).any():
        raise ParameterError("psi received NaN")
    out = logistic(arr.reshape(-1)).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


class ScoreFunction:
    """Context-to-score map for ``n`` items, centered across items at every context.

    ``raw`` maps an ``(m, d)`` context array to ``(m, n)`` raw scores. Centering
    leaves every pairwise difference unchanged.
    """

    def __init__(self, n, d, raw, name="custom"):
        self.n = int(n)
        self.d = int(d)
        self._raw = raw
        self.name = name

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = np.asarray(self._raw(X), dtype=np.float64)
        return s - s.mean(axis=1, keepdims=True)

    def raw(self, X):
        return np.asarray(self._raw(np.atleast_2d(np.asarray(X, dtype=np.float64))))

    def eval(self, i, x):
        return float(self(np.asarray(x, dtype=np.float64).reshape(1, -1))[0, i])


def constant_scores(values):
    values = np.asarray(values, dtype=np.float64)
    return ScoreFunction(values.size, 1, lambda X: np.broadcast_to(values, (X.shape[0], values.size)),
                         name="constant")


def _sine_weights(n):
    return np.sin(np.arange(1, n + 1) * np.pi / 8.0)


def setting_one_scores(n) -> ScoreFunction:
    """``sin(i pi / 8) * x`` for 1-indexed item ``i`` and scalar context ``x``."""
    if n < 2:
        raise ParameterError("n must be >= 2")
    a = _sine_weights(n)
    return ScoreFunction(n, 1, lambda X: X[:, :1] * a[None, :], name="setting-I")


SETTING_TWO_DIM = 50


def setting_two_scores(n) -> ScoreFunction:
    """``sin(i pi / 8) tanh(beta^T x) / 0.628`` with ``beta = 1/sqrt(50)`` in every coordinate."""
    if n < 2:
        raise ParameterError("n must be >= 2")
    a = _sine_weights(n) / 0.628
    beta = np.full(SETTING_TWO_DIM, 1.0 / math.sqrt(SETTING_TWO_DIM))
    return ScoreFunction(n, SETTING_TWO_DIM, lambda X: np.tanh(X @ beta)[:, None] * a[None, :],
                         name="setting-II")


# ---------------------------------------------------------------- samplers

@dataclass(frozen=True)
class UniformSampler:
    """I.i.d. ``Uniform(low, high)`` in each of ``d`` coordinates."""

    low: float
    high: float
    d: int

    def __call__(self, rng, size):
        return rng.uniform(self.low, self.high, size=(size, self.d))

    def to_dict(self):
        return {"kind": "uniform", "low": self.low, "high": self.high, "d": self.d}


def setting_sampler(setting):
    if setting in ("I", 1, "1"):
        return UniformSampler(0.0, 1.0, 1)
    if setting in ("II", 2, "2"):
        return UniformSampler(-SQRT3, SQRT3, SETTING_TWO_DIM)
    raise ParameterError(f"unknown setting {setting!r}")


def setting_scores(setting, n):
    if setting in ("I", 1, "1"):
        return setting_one_scores(n)
    if setting in ("II", 2, "2"):
        return setting_two_scores(n)
    raise ParameterError(f"unknown setting {setting!r}")


# ---------------------------------------------------------------- domains

class Domain:
    """Deterministic context set; ``indicator(X)`` returns a boolean per row."""

    description = ""

    def indicator(self, X):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def __call__(self, X):
        return self.indicator(np.atleast_2d(np.asarray(X, dtype=np.float64)))


class WholeSpace(Domain):
    description = "all contexts"

    def indicator(self, X):
        return np.ones(X.shape[0], dtype=bool)

    def to_dict(self):
        return {"kind": "all"}


class IntervalDomain(Domain):
    """Open box ``lower < x < upper`` coordinatewise; infinite bounds allowed."""

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
        if self.lower.shape != self.upper.shape:
            raise ParameterError("interval bounds must have equal length")
        self.description = f"interval {self.lower.tolist()} < x < {self.upper.tolist()}"

    def indicator(self, X):
        k = self.lower.size
        if X.shape[1] < k:
            raise ParameterError(f"context dimension {X.shape[1]} < interval dimension {k}")
        Z = X[:, :k]
        return np.all((Z > self.lower) & (Z < self.upper), axis=1)

    def to_dict(self):
        return {"kind": "interval", "lower": _floats_out(self.lower), "upper": _floats_out(self.upper)}


class HalfspaceDomain(Domain):
    """``beta^T x > threshold`` (or ``<`` with ``direction='<'``).

    A scalar ``beta`` is broadcast to every context coordinate.
    """

    def __init__(self, beta, threshold, direction=">"):
        if direction not in (">", "<"):
            raise ParameterError("direction must be '>' or '<'")
        self.beta = np.asarray(beta, dtype=np.float64)
        self.threshold = float(threshold)
        self.direction = direction
        self.description = f"halfspace beta^T x {direction} {self.threshold}"

    def indicator(self, X):
        b = np.broadcast_to(self.beta, (X.shape[1],)) if self.beta.ndim == 0 else self.beta
        proj = X @ b
        return proj > self.threshold if self.direction == ">" else proj < self.threshold

    def to_dict(self):
        beta = float(self.beta) if self.beta.ndim == 0 else self.beta.tolist()
        return {"kind": "halfspace", "beta": beta, "threshold": self.threshold,
                "direction": self.direction}


def _floats_out(arr):
    return [v if math.isfinite(v) else ("inf" if v > 0 else "-inf") for v in arr.tolist()]


def _floats_in(values):
    return [float(v) for v in np.atleast_1d(values)]


def domain_from_spec(spec) -> Domain:
    """Build a domain from a dict or a JSON string (``interval``, ``halfspace`` or ``all``)."""
    if isinstance(spec, Domain):
        return spec
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"domain spec is not valid JSON: {exc}") from None
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ParameterError("domain spec must be an object with a 'kind'")
    kind = spec["kind"]
    if kind == "all":
        return WholeSpace()
    if kind == "interval":
        return IntervalDomain(_floats_in(spec["lower"]), _floats_in(spec["upper"]))
    if kind == "halfspace":
        return HalfspaceDomain(spec["beta"], spec["threshold"], spec.get("direction", ">"))
    raise ParameterError(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------- dataset

@dataclass(frozen=True)
class Dataset:
    """Per-edge, per-replicate records, edge-major then replicate order.

    ``y[r] == 1`` means the lower-indexed item of record ``r``'s edge won.
    """

    graph: ComparisonGraph
    L: int
    edge_index: np.ndarray
    ell: np.ndarray
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        m = self.graph.edge_count * self.L
        if self.L <= 0:
            raise ParameterError("L must be positive")
        if self.X.ndim != 2 or self.X.shape[0] != m or self.y.shape != (m,):
            raise ParameterError("dataset arrays do not hold exactly L records per edge")
        for arr in (self.edge_index, self.ell, self.X, self.y):
            arr.setflags(write=False)

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def size(self):
        return self.y.shape[0]

    @property
    def item_i(self):
        return self.graph.edge_array[self.edge_index, 0]

    @property
    def item_j(self):
        return self.graph.edge_array[self.edge_index, 1]

    def rows_for(self, replicates):
        """Record indices whose replicate index lies in ``replicates``."""
        mask = np.zeros(self.L, dtype=bool)
        mask[np.asarray(replicates, dtype=np.int64)] = True
        return np.flatnonzero(mask[self.ell])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(["i", "j", "ell", "y"] + [f"x_{k + 1}" for k in range(self.d)]) + "\n")
        ii = (self.item_i + 1).tolist()
        jj = (self.item_j + 1).tolist()
        ll = (self.ell + 1).tolist()
        yy = self.y.astype(int).tolist()
        for r, row in enumerate(self.X.tolist()):
            buf.write(f"{ii[r]},{jj[r]},{ll[r]},{yy[r]},")
            buf.write(",".join(format(v, ".17g") for v in row))
            buf.write("\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, graph: ComparisonGraph) -> "Dataset":
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        if header[:4] != ["i", "j", "ell", "y"]:
            raise ParameterError("dataset CSV header must start with i,j,ell,y")
        rows = [r for r in reader if r]
        if not rows:
            raise ParameterError("dataset CSV has no records")
        ints = np.array([r[:4] for r in rows], dtype=np.int64)
        X = np.array([r[4:] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 4)
        i, j = ints[:, 0] - 1, ints[:, 1] - 1
        if np.any(i >= j):
            raise ParameterError("dataset CSV rows must have i < j")
        lookup = {e: k for k, e in enumerate(graph.edges)}
        try:
            eidx = np.array([lookup[(a, b)] for a, b in zip(i.tolist(), j.tolist())], dtype=np.int64)
        except KeyError as exc:
            raise ParameterError(f"record on edge {exc.args[0]} not in graph") from None
        ell = ints[:, 2] - 1
        L = int(ell.max()) + 1
        order = np.lexsort((ell, eidx))
        ds = cls(graph, L, eidx[order], ell[order], X[order], ints[order, 3].astype(np.int8))
        expected = np.repeat(np.arange(graph.edge_count), L)
        if not (np.array_equal(ds.edge_index, expected)
                and np.array_equal(ds.ell, np.tile(np.arange(L), graph.edge_count))):
            raise ParameterError("dataset CSV must hold replicates 1..L exactly once per edge")
        return ds


def _edge_rng(seed, i, j):
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(i), int(j))))


def simulate_dataset(g: ComparisonGraph, scores: ScoreFunction, L: int, context_sampler,
                     seed: int = 0, *, outcome_override=None) -> Dataset:
    """Draw ``L`` contexts and outcomes per edge.

    Each edge owns an RNG stream keyed by its endpoints, so the records do not
    depend on edge iteration order. ``outcome_override(X, diff)`` replaces the
    Bernoulli draw (used for residual-free fixtures).
    """
    if int(L) != L or L <= 0:
        raise ParameterError(f"L must be a positive integer, got {L}")
    if scores.n != g.n:
        raise ParameterError(f"scores cover {scores.n} items, graph has {g.n}")
    L = int(L)
    E = g.edge_count
    Xs, ys = [], []
    for i, j in g.edges:
        rng = _edge_rng(seed, i, j)
        X = np.asarray(context_sampler(rng, L), dtype=np.float64).reshape(L, -1)
        u = rng.random(L)
        s = scores(X)
        diff = s[:, i] - s[:, j]
        y = outcome_override(X, diff) if outcome_override is not None else (u < logistic(diff))
        Xs.append(X)
        ys.append(np.asarray(y))
    d = Xs[0].shape[1] if Xs else getattr(context_sampler, "d", 1)
    X = np.concatenate(Xs) if Xs else np.zeros((0, d))
    y = np.concatenate(ys) if ys else np.zeros(0)
    y = y.astype(np.float64 if outcome_override is not None else np.int8)
    return Dataset(g, L, np.repeat(np.arange(E), L), np.tile(np.arange(L), E), X, y)


def monte_carlo_true_q(scores: ScoreFunction, omega: Domain, i0: int, j0: int, sampler,
                       n_samples: int, seed: int = 0, chunk: int = 200_000):
    """Monte Carlo estimate of ``E[1(X in omega)(theta_i0 - theta_j0)(X)]`` and its standard error."""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    if i0 == j0:
        return 0.0, 0.0
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        X = sampler(rng, m)
        s = scores(X)
        v = np.where(omega.indicator(X), s[:, i0] - s[:, j0], 0.0)
        total += v.sum()
        total_sq += (v * v).sum()
        done += m
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    se = math.sqrt(var / max(n_samples - 1, 1)) if n_samples > 1 else 0.0
    return float(mean), float(se)
