# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: grid-search log marginal likelihood and exact t-SNE gradient."""
import numpy as np

from libc.math cimport log, pow, sqrt, NAN, isnan
from libc.stdlib cimport malloc, free

cdef double LOG_2PI = 1.8378770664093453
cdef double[4] JITTER = [0.0, 1e-10, 1e-8, 1e-6]


cdef int _cholesky(double* A, Py_ssize_t n) noexcept nogil:
    # In-place lower Cholesky of a row-major n x n matrix (lower triangle read).
    cdef Py_ssize_t i, j, k
    cdef double s, d
    for j in range(n):
        s = A[j * n + j]
        for k in range(j):
            s -= A[j * n + k] * A[j * n + k]
        if not s > 0.0:
            return 1
        d = sqrt(s)
        A[j * n + j] = d
        for i in range(j + 1, n):
            s = A[i * n + j]
            for k in range(j):
                s -= A[i * n + k] * A[j * n + k]
            A[i * n + j] = s / d
    return 0


cdef double _series_lml(const double* t, const double* y, Py_ssize_t n,
                        double amp2, double alpha, double tau, double noise2,
                        double* A, double* z) noexcept nogil:
    cdef Py_ssize_t i, j, attempt
    cdef double r, scale = 2.0 * alpha * tau * tau
    cdef double quad = 0.0, logdet = 0.0
    cdef int failed = 1
    for attempt in range(4):
        for i in range(n):
            for j in range(i):
                r = t[i] - t[j]
                A[i * n + j] = amp2 * pow(1.0 + r * r / scale, -alpha)
            A[i * n + i] = amp2 + noise2 + JITTER[attempt] * amp2
        if _cholesky(A, n) == 0:
            failed = 0
            break
    if failed:
        return NAN
    # forward substitution L z = y, so y' (K + s I)^-1 y = z'z
    for i in range(n):
        r = y[i]
        for j in range(i):
            r -= A[i * n + j] * z[j]
        z[i] = r / A[i * n + i]
        quad += z[i] * z[i]
        logdet += log(A[i * n + i])
    return -0.5 * quad - logdet - 0.5 * n * LOG_2PI


def rq_lml_grid(const double[::1] t, const double[::1] y,
                const long long[::1] offsets, const double[:, ::1] grid):
    """Summed RQ log marginal likelihood of every series at every grid row.

    ``grid`` rows are (amplitude2, alpha, tau, noise2). Series ``s`` occupies
    ``t[offsets[s]:offsets[s + 1]]``. A grid row where any series fails
    Cholesky after jitter escalation gets NaN.
    """
    cdef Py_ssize_t G = grid.shape[0], S = offsets.shape[0] - 1
    cdef Py_ssize_t g, s, n, nmax = 0
    cdef double total, v
    out = np.empty(G, dtype=np.float64)
    cdef double[::1] out_v = out
    for s in range(S):
        n = offsets[s + 1] - offsets[s]
        if n > nmax:
            nmax = n
    cdef double* A = <double*> malloc(max(nmax * nmax, 1) * sizeof(double))
    cdef double* z = <double*> malloc(max(nmax, 1) * sizeof(double))
    if A == NULL or z == NULL:
        free(A)
        free(z)
        raise MemoryError()
    try:
        with nogil:
            for g in range(G):
                total = 0.0
                for s in range(S):
                    n = offsets[s + 1] - offsets[s]
                    v = _series_lml(&t[offsets[s]], &y[offsets[s]], n,
                                    grid[g, 0], grid[g, 1], grid[g, 2], grid[g, 3],
                                    A, z)
                    if isnan(v):
                        total = NAN
                        break
                    total += v
                out_v[g] = total
    finally:
        free(A)
        free(z)
    return out


def tsne_gradient(const double[:, ::1] P, const double[:, ::1] Y):
    """Exact t-SNE gradient of KL(P || Q) and the KL value itself."""
    cdef Py_ssize_t n = Y.shape[0], d = Y.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dist, num, Z = 0.0, q, p, coef, kl = 0.0
    grad = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] G = grad
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dist = 0.0
                for k in range(d):
                    dist += (Y[i, k] - Y[j, k]) * (Y[i, k] - Y[j, k])
                Z += 2.0 / (1.0 + dist)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                dist = 0.0
                for k in range(d):
                    dist += (Y[i, k] - Y[j, k]) * (Y[i, k] - Y[j, k])
                num = 1.0 / (1.0 + dist)
                q = num / Z
                if q < 1e-12:
                    q = 1e-12
                p = P[i, j]
                if p > 0.0:
                    kl += p * log(p / q)
                coef = 4.0 * (p - q) * num
                for k in range(d):
                    G[i, k] += coef * (Y[i, k] - Y[j, k])
    return grad, kl
