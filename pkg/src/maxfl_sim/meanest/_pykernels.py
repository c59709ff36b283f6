"""Pure numpy stationary-point search; the reference for the compiled kernel.

For the sigmoid surrogate the gradient ``(2/K) sum_k q(x_k^2) x_k`` is
evaluated as ``sum_k x_k q(x_k^2) e^{u_min}`` with ``u_min = min_k x_k^2``.
The positive rescaling keeps the sign exact when every term would otherwise
underflow, which happens once the means are a few dozen units apart.

The scan runs over ``[min theta_hat, max theta_hat]`` only: outside that
interval every term of the gradient has the same sign, so no stationary
point can live there.
"""

from __future__ import annotations

import math

import numpy as np

SIGMOID, SOFTPLUS, RELU = 0, 1, 2


def _grad_scaled_grid(th: np.ndarray, sur: int, w: np.ndarray) -> np.ndarray:
    x = w[:, None] - th[None, :]
    u = x * x
    if sur == SIGMOID:
        umin = u.min(axis=1, keepdims=True)
        e = np.exp(-u)
        h1 = np.exp(-(u - umin)) / ((1.0 + e) * (1.0 + e))
    elif sur == SOFTPLUS:
        h1 = 1.0 / (1.0 + np.exp(-u))
    else:
        h1 = np.ones_like(u)
    return (h1 * x).sum(axis=1)


def _grad_scaled(th: np.ndarray, sur: int, w: float) -> float:
    return float(_grad_scaled_grid(th, sur, np.array([w]))[0])


def objective(th: np.ndarray, sur: int, w: float) -> float:
    s = 0.0
    for t in th:
        u = (w - t) * (w - t)
        if sur == SIGMOID:
            s += 1.0 / (1.0 + math.exp(-u))
        elif sur == SOFTPLUS:
            s += u + math.log(1.0 + math.exp(-u))
        else:
            s += u
    return s / len(th)


def _classify(th: np.ndarray, sur: int, w: float, left_sign: float) -> int:
    if sur == SIGMOID:
        x = w - th
        u = x * x
        umin = u.min()
        e = np.exp(-u)
        sig = 1.0 / (1.0 + e)
        q = np.exp(-(u - umin)) / ((1.0 + e) * (1.0 + e))
        h = 0.0
        for qk, sk, uk in zip(q, sig, u):
            h += qk * (2.0 * (1.0 - 2.0 * sk) * uk + 1.0)
    else:
        d = 1e-4
        h = objective(th, sur, w + d) - 2.0 * objective(th, sur, w) + objective(th, sur, w - d)
    if h > 0.0:
        return 1
    if h < 0.0:
        return -1
    if left_sign < 0.0:
        return 1
    if left_sign > 0.0:
        return -1
    return 0


def _bisect(th, sur, a, b, ga, xtol):
    for _ in range(200):
        m = 0.5 * (a + b)
        if b - a <= xtol * (1.0 + abs(m)) or m == a or m == b:
            break
        gm = _grad_scaled(th, sur, m)
        if gm == 0.0:
            return m
        if (gm < 0.0) == (ga < 0.0):
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)


def stationary_points(theta_hat, surrogate: int, step: float = 1e-3, xtol: float = 1e-13):
    """Return ``(roots, kinds)`` with kinds +1 minimum, -1 maximum, 0 degenerate."""
    th = np.ascontiguousarray(theta_hat, dtype=np.float64)
    if not 1 <= len(th) <= 8:
        raise ValueError("need 1 <= K <= 8 clients")
    lo, hi = float(th.min()), float(th.max())
    if hi == lo:
        return np.array([lo]), np.array([1], dtype=np.int64)
    n = int(math.ceil((hi - lo) / step))
    xs = lo + np.arange(n + 1) * step
    xs[n] = hi
    gs = _grad_scaled_grid(th, surrogate, xs)
    roots, kinds = [], []
    g0 = gs[0]
    prev_zero = False
    for i in range(1, n + 1):
        g1 = gs[i]
        if g1 == 0.0 and i < n:
            roots.append(float(xs[i]))
            kinds.append(_classify(th, surrogate, xs[i], g0))
            prev_zero = True
        else:
            if not prev_zero and g0 != 0.0 and (g0 < 0.0) != (g1 < 0.0):
                r = _bisect(th, surrogate, float(xs[i - 1]), float(xs[i]), g0, xtol)
                roots.append(r)
                kinds.append(_classify(th, surrogate, r, g0))
            prev_zero = False
        if g1 != 0.0:
            g0 = g1
    return np.array(roots, dtype=np.float64), np.array(kinds, dtype=np.int64)


def select_minima(theta_hat_rows, surrogate: int, step: float = 1e-3, xtol: float = 1e-13):
    """Per row: the local minimum with lowest objective value, then lowest w."""
    rows = np.ascontiguousarray(theta_hat_rows, dtype=np.float64)
    out = np.empty(len(rows))
    for r, th in enumerate(rows):
        roots, kinds = stationary_points(th, surrogate, step, xtol)
        best_w, best_v = math.inf, math.inf
        for w, kind in zip(roots, kinds):
            if kind != 1:
                continue
            v = objective(th, surrogate, w)
            if v < best_v or (v == best_v and w < best_w):
                best_w, best_v = w, v
        out[r] = best_w
    return out
