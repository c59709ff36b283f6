# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stationary-point search for the 1-D relaxed mean-estimation objective.

Mirrors ``_pykernels`` exactly; see that module for the maths.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, ceil, INFINITY

cnp.import_array()

DEF SIGMOID = 0
DEF SOFTPLUS = 1
DEF RELU = 2
DEF MAX_K = 8
DEF MAX_ROOTS = 64


cdef inline double _hprime_scaled(int sur, double u, double umin) nogil:
    # h'(u) * exp(umin) for sigmoid; plain h'(u) otherwise
    cdef double e
    if sur == SIGMOID:
        e = exp(-u)
        return exp(-(u - umin)) / ((1.0 + e) * (1.0 + e))
    elif sur == SOFTPLUS:
        return 1.0 / (1.0 + exp(-u))
    return 1.0


cdef inline double _grad_scaled(const double* th, int K, int sur, double w) nogil:
    cdef double umin = INFINITY, x, u, g = 0.0
    cdef int k
    if sur == SIGMOID:
        for k in range(K):
            x = w - th[k]
            u = x * x
            if u < umin:
                umin = u
    for k in range(K):
        x = w - th[k]
        g += _hprime_scaled(sur, x * x, umin) * x
    return g


cdef inline double _objective(const double* th, int K, int sur, double w) nogil:
    cdef double s = 0.0, u
    cdef int k
    for k in range(K):
        u = (w - th[k]) * (w - th[k])
        if sur == SIGMOID:
            s += 1.0 / (1.0 + exp(-u))
        elif sur == SOFTPLUS:
            s += u + log(1.0 + exp(-u))
        else:
            s += u
    return s / K


cdef inline int _classify(const double* th, int K, int sur, double w, double left_sign) nogil:
    # +1 minimum, -1 maximum, 0 degenerate
    cdef double umin = INFINITY, x, u, e, sig, q, h = 0.0, d
    cdef int k
    if sur == SIGMOID:
        for k in range(K):
            x = w - th[k]
            u = x * x
            if u < umin:
                umin = u
        for k in range(K):
            x = w - th[k]
            u = x * x
            e = exp(-u)
            sig = 1.0 / (1.0 + e)
            q = exp(-(u - umin)) / ((1.0 + e) * (1.0 + e))
            h += q * (2.0 * (1.0 - 2.0 * sig) * u + 1.0)
    else:
        d = 1e-4
        h = _objective(th, K, sur, w + d) - 2.0 * _objective(th, K, sur, w) + _objective(th, K, sur, w - d)
    if h > 0.0:
        return 1
    if h < 0.0:
        return -1
    if left_sign < 0.0:
        return 1
    if left_sign > 0.0:
        return -1
    return 0


cdef inline double _bisect(const double* th, int K, int sur, double a, double b, double ga, double xtol) nogil:
    cdef double m, gm
    cdef int it
    for it in range(200):
        m = 0.5 * (a + b)
        if b - a <= xtol * (1.0 + fabs(m)) or m == a or m == b:
            break
        gm = _grad_scaled(th, K, sur, m)
        if gm == 0.0:
            return m
        if (gm < 0.0) == (ga < 0.0):
            a = m
            ga = gm
        else:
            b = m
    return 0.5 * (a + b)


cdef int _scan(const double* th, int K, int sur, double step, double xtol,
               double* roots, int* kinds) nogil:
    cdef double lo = th[0], hi = th[0], x0, x1, g0, g1
    cdef int k, n, i, nroots = 0
    cdef bint prev_zero = False
    for k in range(K):
        if th[k] < lo:
            lo = th[k]
        if th[k] > hi:
            hi = th[k]
    if hi == lo:
        roots[0] = lo
        kinds[0] = 1
        return 1
    n = <int>ceil((hi - lo) / step)
    x0 = lo
    g0 = _grad_scaled(th, K, sur, x0)
    for i in range(1, n + 1):
        x1 = hi if i == n else lo + i * step
        g1 = _grad_scaled(th, K, sur, x1)
        if g1 == 0.0 and i < n:
            if nroots < MAX_ROOTS:
                roots[nroots] = x1
                kinds[nroots] = _classify(th, K, sur, x1, g0)
                nroots += 1
            prev_zero = True
        else:
            if not prev_zero and g0 != 0.0 and ((g0 < 0.0) != (g1 < 0.0)):
                if nroots < MAX_ROOTS:
                    roots[nroots] = _bisect(th, K, sur, x0, x1, g0, xtol)
                    kinds[nroots] = _classify(th, K, sur, roots[nroots], g0)
                    nroots += 1
            prev_zero = False
        if g1 != 0.0:
            g0 = g1
        x0 = x1
    return nroots


def stationary_points(theta_hat, int surrogate, double step=1e-3, double xtol=1e-13):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] th = np.ascontiguousarray(theta_hat, dtype=np.float64)
    cdef int K = th.shape[0]
    cdef double roots[MAX_ROOTS]
    cdef int kinds[MAX_ROOTS]
    cdef int n, i
    if K < 1 or K > MAX_K:
        raise ValueError("need 1 <= K <= 8 clients")
    n = _scan(&th[0], K, surrogate, step, xtol, roots, kinds)
    return (np.array([roots[i] for i in range(n)], dtype=np.float64),
            np.array([kinds[i] for i in range(n)], dtype=np.int64))


def select_minima(theta_hat_rows, int surrogate, double step=1e-3, double xtol=1e-13):
    """Per row: the local minimum with lowest objective value, then lowest w."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rows = np.ascontiguousarray(theta_hat_rows, dtype=np.float64)
    cdef Py_ssize_t n_rows = rows.shape[0], r
    cdef int K = rows.shape[1], n, i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n_rows, dtype=np.float64)
    cdef double roots[MAX_ROOTS]
    cdef int kinds[MAX_ROOTS]
    cdef double best_w, best_v, v
    if K < 1 or K > MAX_K:
        raise ValueError("need 1 <= K <= 8 clients")
    with nogil:
        for r in range(n_rows):
            n = _scan(&rows[r, 0], K, surrogate, step, xtol, roots, kinds)
            best_w = INFINITY
            best_v = INFINITY
            for i in range(n):
                if kinds[i] != 1:
                    continue
                v = _objective(&rows[r, 0], K, surrogate, roots[i])
                if v < best_v or (v == best_v and roots[i] < best_w):
                    best_v = v
                    best_w = roots[i]
            out[r] = best_w
    return out
