"""Potential representation of the residual balancing weights, and its random-walk oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from ._fallback import logistic_deriv
from .errors import ParameterError, RankDeficiencyError
from .graph import ComparisonGraph, fisher_laplacian, laplacian_pseudoinverse


def _check_pair(g, i0, j0):
    if i0 == j0:
        raise ParameterError("i0 and j0 must differ")
    if not (0 <= i0 < g.n and 0 <= j0 < g.n):
        raise ParameterError(f"items ({i0}, {j0}) out of range for n={g.n}")


def _require_connected(g):
    if not g.connected:
        raise RankDeficiencyError("comparison graph is disconnected")


@dataclass(frozen=True)
class PotentialField:
    """Per-context potentials; ``pi`` is identically zero when the domain is inactive."""

    pi: np.ndarray
    omega_active: bool
    edge_count_scale: int

    def weight(self, i, j):
        return balancing_weight(self, i, j)


def potential_vector(g: ComparisonGraph, theta_at_x, i0: int, j0: int,
                     omega_active: bool = True) -> PotentialField:
    """``1(x in omega) |A| Lap(x)^+ (e_i0 - e_j0)`` for a single context."""
    _check_pair(g, i0, j0)
    _require_connected(g)
    theta = np.asarray(theta_at_x, dtype=np.float64)
    if theta.shape != (g.n,):
        raise ParameterError(f"theta has shape {theta.shape}, expected ({g.n},)")
    if not omega_active:
        return PotentialField(np.zeros(g.n), False, g.edge_count)
    pinv = laplacian_pseudoinverse(fisher_laplacian(g, theta))
    pi = g.edge_count * (pinv[:, i0] - pinv[:, j0])
    return PotentialField(pi, True, g.edge_count)


def balancing_weight(field: PotentialField, i: int, j: int) -> float:
    n = field.pi.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise ParameterError(f"index ({i}, {j}) out of range for n={n}")
    return float(field.pi[i] - field.pi[j])


def _pinv_rows(theta, g, i0, j0):
    out = np.empty_like(theta)
    for r in range(theta.shape[0]):
        pinv = laplacian_pseudoinverse(fisher_laplacian(g, theta[r]))
        out[r] = pinv[:, i0] - pinv[:, j0]
    return out


def potentials_batch(g: ComparisonGraph, theta, i0: int, j0: int, active=None, backend=None,
                     dedup=True) -> np.ndarray:
    """Potentials for many contexts at once; row ``r`` uses scores ``theta[r]``.

    Rows with identical scores are solved once. Inactive rows are zero.
    """
    _check_pair(g, i0, j0)
    _require_connected(g)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    m = theta.shape[0]
    out = np.zeros((m, g.n))
    rows = np.arange(m) if active is None else np.flatnonzero(active)
    if rows.size == 0:
        return out
    sub = theta[rows]
    inverse = None
    if dedup:
        sub, inverse = np.unique(sub, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
    k = _backend.get_kernels(backend)
    pi, status = k.potentials_batch(sub, np.ascontiguousarray(g.edge_array), int(i0), int(j0),
                                    float(g.edge_count))
    bad = np.flatnonzero(status)
    if bad.size:
        pi[bad] = g.edge_count * _pinv_rows(sub[bad], g, i0, j0)
    out[rows] = pi if inverse is None else pi[inverse]
    return out


def expected_crossings_exact(g: ComparisonGraph, theta_at_x, i0: int, j0: int) -> np.ndarray:
    """Expected net crossings of each edge ``(i, j)``, ``i < j``, by the absorbed walk.

    Equals ``Xi_ij (g_i - g_j)`` with ``Lap g = e_i0 - e_j0``: the unit current
    injected at ``i0`` and extracted at ``j0``.
    """
    _check_pair(g, i0, j0)
    _require_connected(g)
    w = fisher_laplacian(g, theta_at_x)
    b = np.zeros(g.n)
    b[i0], b[j0] = 1.0, -1.0
    shift = np.full((g.n, g.n), 1.0 / g.n)
    pot = np.linalg.solve(w.laplacian + shift, b)
    e = g.edge_array
    return w.weights[e[:, 0], e[:, 1]] * (pot[e[:, 0]] - pot[e[:, 1]])


def absorbing_chain_crossings(g: ComparisonGraph, theta_at_x, i0: int, j0: int) -> np.ndarray:
    """Expected net crossings from the absorbing Markov chain's visit counts.

    Shares no pseudoinverse code with :func:`expected_crossings_exact`: solves
    ``(I - Q)^T v = e_i0`` over transient states for expected visits ``v`` and
    takes ``v_i P_ij - v_j P_ji`` per edge.
    """
    _check_pair(g, i0, j0)
    _require_connected(g)
    w = fisher_laplacian(g, theta_at_x).weights
    P = w / w.sum(axis=1, keepdims=True)
    trans = [k for k in range(g.n) if k != j0]
    Q = P[np.ix_(trans, trans)]
    start = np.zeros(len(trans))
    start[trans.index(i0)] = 1.0
    v_t = np.linalg.solve((np.eye(len(trans)) - Q).T, start)
    visits = np.zeros(g.n)
    visits[trans] = v_t
    e = g.edge_array
    return visits[e[:, 0]] * P[e[:, 0], e[:, 1]] - visits[e[:, 1]] * P[e[:, 1], e[:, 0]]


@dataclass(frozen=True)
class WalkTally:
    """Mean signed crossings per edge ``(i, j)``, ``i < j``, with Monte Carlo standard errors."""

    edges: tuple
    mean: np.ndarray
    se: np.ndarray
    walks_sampled: int
    completed: int
    truncated: int

    @property
    def truncation_rate(self):
        return self.truncated / self.walks_sampled if self.walks_sampled else 0.0

    def tally(self, i, j):
        if (i, j) in self.edges:
            return float(self.mean[self.edges.index((i, j))])
        if (j, i) in self.edges:
            return -float(self.mean[self.edges.index((j, i))])
        return 0.0


def walk_tables(g: ComparisonGraph, theta_at_x):
    """Dense padded transition tables shared by both walk kernels."""
    theta = np.asarray(theta_at_x, dtype=np.float64)
    deg = g.degrees
    width = max(int(deg.max()), 1)
    nbr = np.zeros((g.n, width), dtype=np.int64)
    cum = np.full((g.n, width), np.inf)
    eid = np.zeros((g.n, width), dtype=np.int64)
    sgn = np.zeros((g.n, width), dtype=np.int64)
    adj = [[] for _ in range(g.n)]
    for k, (i, j) in enumerate(g.edges):
        adj[i].append((j, k, 1))
        adj[j].append((i, k, -1))
    for a, lst in enumerate(adj):
        if not lst:
            continue
        lst.sort()
        others = np.array([t[0] for t in lst])
        w = logistic_deriv(theta[a] - theta[others])
        c = np.cumsum(w) / w.sum()
        c[-1] = 1.0
        d = len(lst)
        nbr[a, :d] = others
        cum[a, :d] = c
        eid[a, :d] = [t[1] for t in lst]
        sgn[a, :d] = [t[2] for t in lst]
    return nbr, cum, eid, sgn


def default_max_steps(g: ComparisonGraph, theta_at_x):
    theta = np.asarray(theta_at_x, dtype=np.float64)
    e = g.edge_array
    w = logistic_deriv(theta[e[:, 0]] - theta[e[:, 1]])
    ratio = w.max() / w.min()
    return int(min(200 * g.n * g.n * ratio, 10_000_000))


def sample_fisher_walks(g: ComparisonGraph, theta_at_x, i0: int, j0: int, n_walks: int,
                        max_steps: int | None = None, seed: int = 0, backend=None) -> WalkTally:
    """Simulate Fisher random walks from ``i0`` absorbed at ``j0`` and tally net edge crossings.

    Walks still running after ``max_steps`` moves are discarded and counted.
    """
    if n_walks <= 0:
        raise ParameterError("n_walks must be positive")
    _check_pair(g, i0, j0)
    _require_connected(g)
    if max_steps is None:
        max_steps = default_max_steps(g, theta_at_x)
    nbr, cum, eid, sgn = walk_tables(g, theta_at_x)
    k = _backend.get_kernels(backend)
    sums, sumsq, done, trunc = k.walk_tally(nbr, cum, eid, sgn, g.edge_count, int(i0), int(j0),
                                            int(n_walks), int(max_steps), int(seed))
    sums = np.asarray(sums, dtype=np.float64)
    sumsq = np.asarray(sumsq, dtype=np.float64)
    if done == 0:
        mean = np.full(g.edge_count, np.nan)
        se = np.full(g.edge_count, np.nan)
    else:
        mean = sums / done
        var = np.maximum(sumsq / done - mean * mean, 0.0) * (done / max(done - 1, 1))
        se = np.sqrt(var / done)
    return WalkTally(g.edges, mean, se, int(n_walks), int(done), int(trunc))


def verify_potential_representation(g: ComparisonGraph, theta_at_x, i0: int, j0: int,
                                    n_walks: int = 100_000, seed: int = 0, max_steps=None,
                                    z_max: float = 4.0, atol: float = 1e-8, backend=None) -> dict:
    """Compare potential-difference weights with walk-based weights on every edge.

    The walk-based weight is ``|A| E[R(i, j)] / psi'(theta_i - theta_j)``, with
    ``E[R]`` from both the exact absorbing-chain solve and Monte Carlo walks.
    """
    field = potential_vector(g, theta_at_x, i0, j0, True)
    theta = np.asarray(theta_at_x, dtype=np.float64)
    exact = absorbing_chain_crossings(g, theta, i0, j0)
    tally = sample_fisher_walks(g, theta, i0, j0, n_walks, max_steps, seed, backend)
    e = g.edge_array
    fisher = logistic_deriv(theta[e[:, 0]] - theta[e[:, 1]])
    scale = g.edge_count / fisher
    closed = field.pi[e[:, 0]] - field.pi[e[:, 1]]
    rows = [{"i": i, "j": j, "closed_form": float(closed[k]), "walk_mean": float(scale[k] * tally.mean[k]),
             "walk_se": float(scale[k] * tally.se[k]), "exact": float(scale[k] * exact[k])}
            for k, (i, j) in enumerate(g.edges)]
    report = evaluate_rows(rows, z_max, atol)
    report["truncation_rate"] = tally.truncation_rate
    return report


def evaluate_rows(rows, z_max: float = 4.0, atol: float = 1e-8) -> dict:
    """Score per-edge comparison rows: exact agreement within ``atol`` and walk z-scores within ``z_max``.

    Fills in each row's ``z`` and returns ``{edges, max_z, max_exact_error, passes}``.
    """
    max_z = 0.0
    max_err = 0.0
    ok = True
    for row in rows:
        closed = row["closed_form"]
        tol = atol * max(1.0, abs(closed))
        diff = abs(closed - row["walk_mean"])
        if row["walk_se"] > 0:
            z = diff / row["walk_se"]
        else:
            z = 0.0 if diff <= tol else math.inf
        err = abs(closed - row["exact"])
        row["z"] = float(z)
        max_z = max(max_z, z)
        max_err = max(max_err, err)
        ok = ok and err <= tol and z <= z_max
    return {"edges": rows, "max_z": float(max_z), "max_exact_error": float(max_err), "passes": bool(ok)}
