"""Independent reference implementations used as test oracles.

These deliberately avoid the package's vectorised code paths: plain loops,
explicit sorting, and central finite differences.
"""
from __future__ import annotations

import numpy as np


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar ``f`` at ``x`` (``x`` is restored afterwards)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def brute_rank(goodness_fn, triple, num_candidates, known: set, side: str, tie: str = "optimistic") -> float:
    """Sort every corruption by goodness and find the true triple's filtered position."""
    h, r, t = triple
    true_g = goodness_fn((h, r, t))
    competitors = []
    for e in range(num_candidates):
        cand = (e, r, t) if side == "head" else (h, r, e)
        if cand == (h, r, t) or cand in known:
            continue
        competitors.append(goodness_fn(cand))
    ordered = sorted(competitors + [true_g], reverse=True)
    first = ordered.index(true_g) + 1
    last = len(ordered) - ordered[::-1].index(true_g)
    if tie == "optimistic":
        return first
    if tie == "pessimistic":
        return last
    return (first + last) / 2


def acc_loop(M):
    N = len(M)
    return sum(M[i][j] for i in range(N) for j in range(N) if i >= j) / (N * (N + 1) / 2)


def fwt_loop(M):
    N = len(M)
    return sum(M[i][j] for i in range(N) for j in range(N) if i < j) / (N * (N - 1) / 2)


def bwt_loop(M):
    N = len(M)
    s = 0.0
    for i in range(1, N):
        for j in range(i):
            s += M[i][j] - M[j][j]
    return s / (N * (N - 1) / 2)


def ms_loop(sizes):
    return min(1.0, sum(sizes[0] / u for u in sizes) / len(sizes))


def sss_loop(stored, total):
    return 1.0 - min(1.0, sum(s / total for s in stored) / len(stored))


def lca_loop(values, epochs):
    """Step-function area before the first best measurement, over best * elapsed."""
    best = max(values)
    if best <= 0:
        return 0.0
    k = values.index(best)
    elapsed = epochs[k] - epochs[0]
    if elapsed == 0:
        return 1.0
    area = 0.0
    for a in range(k):
        area += values[a] * (epochs[a + 1] - epochs[a])
    return area / (best * elapsed)
