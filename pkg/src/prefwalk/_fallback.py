"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` argument for argument. The walk sampler consumes
the same counter-based uniforms, so its tallies match the compiled version
exactly; the potential solver agrees to rounding.
"""
import numpy as np

from ._rng import uniforms, walk_keys

_CHUNK = 4096


def logistic(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logistic_deriv(t):
    """``psi'(t)``, computed from ``|t|`` so that it is exactly even."""
    e = np.exp(-np.abs(np.asarray(t, dtype=np.float64)))
    return e / ((1.0 + e) * (1.0 + e))


def walk_tally(nbr, cum, eid, sgn, n_edges, start, target, n_walks, max_steps, seed):
    keys = walk_keys(seed, np.arange(n_walks))
    state = np.full(n_walks, start, dtype=np.int64)
    tallies = np.zeros((n_walks, n_edges), dtype=np.int64)
    active = np.arange(n_walks)
    for step in range(max_steps):
        if active.size == 0:
            break
        u = uniforms(keys[active], step)
        s = state[active]
        k = np.count_nonzero(cum[s] <= u[:, None], axis=1)
        tallies[active, eid[s, k]] += sgn[s, k]
        nxt = nbr[s, k]
        state[active] = nxt
        active = active[nxt != target]
    done = np.ones(n_walks, dtype=bool)
    done[active] = False
    t = tallies[done]
    return t.sum(axis=0), (t * t).sum(axis=0), int(done.sum()), int(active.size)


def _solve_chunk(theta, a, b, rhs, n):
    m = theta.shape[0]
    w = logistic_deriv(theta[:, a] - theta[:, b])
    lap = np.full((m, n, n), 1.0 / n)
    lap[:, a, b] -= w
    lap[:, b, a] -= w
    deg = np.zeros((m, n))
    np.add.at(deg.T, a, w.T)
    np.add.at(deg.T, b, w.T)
    idx = np.arange(n)
    lap[:, idx, idx] += deg
    status = np.zeros(m, dtype=np.int8)
    try:
        chol = np.linalg.cholesky(lap)
    except np.linalg.LinAlgError:
        out = np.empty((m, n))
        for r in range(m):
            try:
                c = np.linalg.cholesky(lap[r])
                y = np.linalg.solve(c, rhs)
                out[r] = np.linalg.solve(c.T, y)
            except np.linalg.LinAlgError:
                status[r] = 1
                out[r] = 0.0
        return out, status
    y = np.linalg.solve(chol, np.broadcast_to(rhs, (m, n))[..., None])
    x = np.linalg.solve(np.swapaxes(chol, -1, -2), y)[..., 0]
    return x, status


def potentials_batch(theta, edges, i0, j0, scale):
    """Scaled ``Lap(theta_r)^+ (e_i0 - e_j0)`` for each row of ``theta``.

    Returns ``(pi, status)``; ``status[r] == 1`` flags a non-positive pivot.
    """
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    m, n = theta.shape
    a = edges[:, 0]
    b = edges[:, 1]
    rhs = np.zeros(n)
    rhs[i0] = 1.0
    rhs[j0] = -1.0
    pi = np.empty((m, n))
    status = np.zeros(m, dtype=np.int8)
    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        x, st = _solve_chunk(theta[lo:hi], a, b, rhs, n)
        pi[lo:hi] = scale * x
        status[lo:hi] = st
    return pi, status
