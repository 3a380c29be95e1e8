"""Comparison graphs and weighted-Laplacian linear algebra."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from ._fallback import logistic_deriv
from .errors import ParameterError, RankDeficiencyError

_DENSE_EIG_LIMIT = 2000


def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def _components(n, pairs):
    parent = list(range(n))
    count = n
    for i, j in pairs:
        ri, rj = _find(parent, i), _find(parent, j)
        if ri != rj:
            parent[ri] = rj
            count -= 1
    return count


@dataclass(frozen=True)
class ComparisonGraph:
    """Undirected simple graph on ``n`` items; edges stored as sorted ``(i, j)`` with ``i < j``."""

    n: int
    edges: tuple = ()
    connected: bool = field(init=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ParameterError(f"item count must be positive, got {self.n}")
        clean = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ParameterError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ParameterError(f"edge ({i}, {j}) out of range for n={n}")
            pair = (min(i, j), max(i, j))
            if pair in clean:
                raise ParameterError(f"duplicate edge {pair}")
            clean.add(pair)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", tuple(sorted(clean)))
        object.__setattr__(self, "connected", _components(n, self.edges) == 1)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        arr = np.array(self.edges, dtype=np.int64).reshape(-1, 2)
        arr.setflags(write=False)
        return arr

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        e = self.edge_array
        a[e[:, 0], e[:, 1]] = 1.0
        a[e[:, 1], e[:, 0]] = 1.0
        a.setflags(write=False)
        return a

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    def has_edge(self, i, j) -> bool:
        return (min(i, j), max(i, j)) in self._edge_set

    @cached_property
    def _edge_set(self):
        return frozenset(self.edges)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": [list(e) for e in self.edges]})

    @classmethod
    def from_json(cls, text: str) -> "ComparisonGraph":
        obj = json.loads(text)
        if "n" not in obj or "edges" not in obj:
            raise ParameterError("graph JSON needs 'n' and 'edges'")
        return cls(obj["n"], tuple(tuple(e) for e in obj["edges"]))

    @classmethod
    def complete(cls, n):
        return cls(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def path(cls, n):
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))


def generate_erdos_renyi(n, p, seed=None) -> ComparisonGraph:
    """Include each unordered pair independently with probability ``p``."""
    if int(n) != n or n < 2:
        raise ParameterError(f"n must be an integer >= 2, got {n}")
    if not (0.0 < p <= 1.0):
        raise ParameterError(f"p must lie in (0, 1], got {p}")
    n = int(n)
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return ComparisonGraph(n, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))


def connected_erdos_renyi(n, p, seed=0, max_tries=10_000):
    """First connected draw among seeds ``(seed, 0), (seed, 1), ...``.

    Returns the graph and the attempt index that produced it.
    """
    for attempt in range(max_tries):
        g = generate_erdos_renyi(n, p, np.random.SeedSequence(entropy=int(seed), spawn_key=(attempt,)))
        if g.connected:
            return g, attempt
    raise RankDeficiencyError(f"no connected G({n}, {p}) draw in {max_tries} attempts")


def is_connected(g: ComparisonGraph) -> bool:
    return g.connected


def laplacian_of(weights: np.ndarray) -> np.ndarray:
    return np.diag(weights.sum(axis=1)) - weights


@dataclass(frozen=True)
class WeightedLaplacian:
    """Symmetric nonnegative edge weights and their Laplacian ``diag(W 1) - W``."""

    weights: np.ndarray
    laplacian: np.ndarray

    @classmethod
    def from_weights(cls, weights):
        w = np.array(weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ParameterError("weights must be a square matrix")
        if not np.array_equal(w, w.T):
            raise ParameterError("weights must be symmetric")
        if np.any(w < 0) or np.any(np.diag(w) != 0):
            raise ParameterError("weights must be nonnegative with zero diagonal")
        return cls(w, laplacian_of(w))

    @property
    def n(self):
        return self.weights.shape[0]

    def is_connected(self):
        i, j = np.nonzero(np.triu(self.weights > 0, k=1))
        return _components(self.n, zip(i.tolist(), j.tolist())) == 1


def fisher_laplacian(g: ComparisonGraph, theta_at_x) -> WeightedLaplacian:
    """Laplacian with edge weight ``psi'(theta_i - theta_j)`` on each comparison edge."""
    theta = np.asarray(theta_at_x, dtype=np.float64)
    if theta.shape != (g.n,):
        raise ParameterError(f"theta has shape {theta.shape}, expected ({g.n},)")
    e = g.edge_array
    w = np.zeros((g.n, g.n))
    vals = logistic_deriv(theta[e[:, 0]] - theta[e[:, 1]])
    w[e[:, 0], e[:, 1]] = vals
    w[e[:, 1], e[:, 0]] = vals
    return WeightedLaplacian(w, laplacian_of(w))


def laplacian_pseudoinverse(w: WeightedLaplacian) -> np.ndarray:
    """Moore-Penrose inverse of a connected weighted Laplacian.

    Uses ``(L + 11^T/n)^{-1} = L^+ + 11^T/n``; the shifted matrix is positive
    definite when the graph is connected, so a Cholesky solve suffices.
    """
    lap = np.asarray(w.laplacian, dtype=np.float64)
    if not np.allclose(lap, lap.T, rtol=0, atol=1e-14):
        raise ParameterError("Laplacian must be symmetric")
    if not w.is_connected():
        raise RankDeficiencyError("Laplacian pseudoinverse requires a connected graph")
    n = lap.shape[0]
    shift = np.full((n, n), 1.0 / n)
    try:
        factor = scipy.linalg.cho_factor(lap + shift, lower=True)
        pinv = scipy.linalg.cho_solve(factor, np.eye(n)) - shift
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(lap)
        keep = vals > vals.max() * n * np.finfo(float).eps
        pinv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return 0.5 * (pinv + pinv.T)


def effective_resistance(pinv, i, j) -> float:
    return float(pinv[i, i] + pinv[j, j] - 2.0 * pinv[i, j])


@dataclass(frozen=True)
class GoodEventReport:
    degree_min: int
    degree_max: int
    lambda_min_perp: float
    lambda_max: float
    reference_p: float
    n: int
    passes: bool

    def to_dict(self):
        return {
            "degree_min": self.degree_min,
            "degree_max": self.degree_max,
            "lambda_min_perp": self.lambda_min_perp,
            "lambda_max": self.lambda_max,
            "reference_p": self.reference_p,
            "passes": self.passes,
        }


def _extremal_eigs(g: ComparisonGraph):
    lap = laplacian_of(np.asarray(g.adjacency))
    if g.n <= _DENSE_EIG_LIMIT:
        vals = np.linalg.eigvalsh(lap)
        return float(vals[1]), float(vals[-1])
    sp = scipy.sparse.csr_matrix(lap)
    top = scipy.sparse.linalg.eigsh(sp, k=1, which="LA", tol=1e-6, return_eigenvectors=False)[0]
    # deflate the null space by shifting it to the top of the spectrum
    ones = np.ones(g.n) / np.sqrt(g.n)
    op = scipy.sparse.linalg.LinearOperator(
        (g.n, g.n), matvec=lambda v: sp @ v + 2.0 * top * ones * (ones @ v), dtype=float
    )
    low = scipy.sparse.linalg.eigsh(op, k=1, which="SA", tol=1e-6, return_eigenvectors=False)[0]
    return float(low), float(top)


def check_good_event(g: ComparisonGraph, p: float) -> GoodEventReport:
    """Degree and Laplacian-spectrum diagnostics for a comparison graph."""
    if g.n < 2:
        raise ParameterError("good-event check needs n >= 2")
    deg = g.degrees
    lo, hi = _extremal_eigs(g)
    npq = g.n * p
    passes = bool(
        0.5 * npq <= deg.min() <= deg.max() <= 2.0 * npq
        and npq / 2.0 <= lo <= hi <= 2.0 * npq
    )
    return GoodEventReport(int(deg.min()), int(deg.max()), lo, hi, float(p), g.n, passes)


def random_weighted_laplacian(g: ComparisonGraph, rng, low=0.05, high=1.0) -> WeightedLaplacian:
    """Uniform(low, high) weights on the edges of ``g``."""
    e = g.edge_array
    w = np.zeros((g.n, g.n))
    vals = rng.uniform(low, high, size=len(e))
    w[e[:, 0], e[:, 1]] = vals
    w[e[:, 1], e[:, 0]] = vals
    return WeightedLaplacian(w, laplacian_of(w))


def pseudoinverse_residuals(w: WeightedLaplacian, lambdas=None, pinv=None) -> dict:
    """Max-abs residuals of the projection and shift-inverse identities.

    ``projection`` is ``|L L^+ - (I - 11^T/n)|``, ``null`` is ``|L^+ 1|`` and
    ``shift[lam]`` compares ``(L + lam 11^T)^{-1} - 11^T/(lam n^2)`` with ``L^+``.
    ``svd`` compares against an SVD-based pseudoinverse.
    """
    n = w.n
    if pinv is None:
        pinv = laplacian_pseudoinverse(w)
    if lambdas is None:
        lambdas = (1.0 / n, 1.0, 10.0)
    lap = w.laplacian
    ones = np.ones((n, n))
    out = {
        "projection": float(np.max(np.abs(lap @ pinv - (np.eye(n) - ones / n)))),
        "null": float(np.max(np.abs(pinv.sum(axis=1)))),
        "svd": float(np.max(np.abs(pinv - np.linalg.pinv(lap, hermitian=True)))),
        "shift": {},
    }
    for lam in lambdas:
        shifted = np.linalg.inv(lap + lam * ones) - ones / (lam * n * n)
        out["shift"][float(lam)] = float(np.max(np.abs(shifted - pinv)))
    return out


def energy_identity_residual(w: WeightedLaplacian, i0: int, j0: int, pinv=None) -> float:
    """``|sum_edges w_ij (g_i - g_j)^2 - (g_i0 - g_j0)|`` with ``g = L^+ (e_i0 - e_j0)``."""
    if pinv is None:
        pinv = laplacian_pseudoinverse(w)
    g = pinv[:, i0] - pinv[:, j0]
    i, j = np.nonzero(np.triu(w.weights, k=1))
    energy = float(np.sum(w.weights[i, j] * (g[i] - g[j]) ** 2))
    return abs(energy - float(g[i0] - g[j0]))
