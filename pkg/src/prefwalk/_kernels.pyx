# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: Fisher random-walk tallies and batched potential solves."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STEP = 0xD1B54A32D192ED03ULL
cdef double INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _logistic_deriv(double t) noexcept nogil:
    cdef double e = exp(-fabs(t))
    return e / ((1.0 + e) * (1.0 + e))


def walk_tally(const int64_t[:, ::1] nbr, const double[:, ::1] cum,
               const int64_t[:, ::1] eid, const int64_t[:, ::1] sgn,
               Py_ssize_t n_edges, int64_t start, int64_t target,
               Py_ssize_t n_walks, Py_ssize_t max_steps, seed):
    cdef uint64_t useed = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[int64_t, ndim=1] sums = np.zeros(n_edges, dtype=np.int64)
    cdef cnp.ndarray[int64_t, ndim=1] sumsq = np.zeros(n_edges, dtype=np.int64)
    cdef int64_t[::1] s_view = sums
    cdef int64_t[::1] q_view = sumsq
    cdef int64_t* local = <int64_t*>malloc(n_edges * sizeof(int64_t))
    cdef Py_ssize_t w, step, k, e, deg = cum.shape[1]
    cdef int64_t state, t
    cdef uint64_t key
    cdef double u
    cdef Py_ssize_t completed = 0, truncated = 0
    cdef bint absorbed
    if local == NULL:
        raise MemoryError()
    try:
        with nogil:
            for w in range(n_walks):
                for e in range(n_edges):
                    local[e] = 0
                key = _mix(useed ^ _mix(<uint64_t>w * GOLDEN + GOLDEN))
                state = start
                absorbed = False
                for step in range(max_steps):
                    u = <double>(_mix(key + <uint64_t>(step + 1) * STEP) >> 11) * INV53
                    k = 0
                    while k < deg - 1 and cum[state, k] <= u:
                        k += 1
                    local[eid[state, k]] += sgn[state, k]
                    state = nbr[state, k]
                    if state == target:
                        absorbed = True
                        break
                if absorbed:
                    completed += 1
                    for e in range(n_edges):
                        t = local[e]
                        s_view[e] += t
                        q_view[e] += t * t
                else:
                    truncated += 1
    finally:
        free(local)
    return sums, sumsq, completed, truncated


def potentials_batch(theta, const int64_t[:, ::1] edges, Py_ssize_t i0,
                     Py_ssize_t j0, double scale):
    cdef const double[:, ::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t m = th.shape[0], n = th.shape[1], n_edges = edges.shape[0]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((m, n))
    cdef cnp.ndarray[cnp.int8_t, ndim=1] status = np.zeros(m, dtype=np.int8)
    cdef double[:, ::1] pi = out
    cdef cnp.int8_t[::1] st = status
    cdef double* mat = <double*>malloc(n * n * sizeof(double))
    cdef double* y = <double*>malloc(n * sizeof(double))
    cdef Py_ssize_t r, a, b, e, i, j, k
    cdef double w, s, inv_n = 1.0 / n
    cdef bint ok
    if mat == NULL or y == NULL:
        free(mat)
        free(y)
        raise MemoryError()
    try:
        with nogil:
            for r in range(m):
                for i in range(n * n):
                    mat[i] = inv_n
                for e in range(n_edges):
                    a = edges[e, 0]
                    b = edges[e, 1]
                    w = _logistic_deriv(th[r, a] - th[r, b])
                    mat[a * n + a] += w
                    mat[b * n + b] += w
                    mat[a * n + b] -= w
                    mat[b * n + a] -= w
                # in-place lower Cholesky
                ok = True
                for j in range(n):
                    s = mat[j * n + j]
                    for k in range(j):
                        s -= mat[j * n + k] * mat[j * n + k]
                    if s <= 0.0:
                        ok = False
                        break
                    s = sqrt(s)
                    mat[j * n + j] = s
                    for i in range(j + 1, n):
                        w = mat[i * n + j]
                        for k in range(j):
                            w -= mat[i * n + k] * mat[j * n + k]
                        mat[i * n + j] = w / s
                if not ok:
                    st[r] = 1
                    for i in range(n):
                        pi[r, i] = 0.0
                    continue
                for i in range(n):
                    s = 0.0
                    if i == i0:
                        s = 1.0
                    elif i == j0:
                        s = -1.0
                    for k in range(i):
                        s -= mat[i * n + k] * y[k]
                    y[i] = s / mat[i * n + i]
                for i in range(n - 1, -1, -1):
                    s = y[i]
                    for k in range(i + 1, n):
                        s -= mat[k * n + i] * y[k]
                    y[i] = s / mat[i * n + i]
                for i in range(n):
                    pi[r, i] = scale * y[i]
    finally:
        free(mat)
        free(y)
    return out, status
