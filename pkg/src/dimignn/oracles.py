"""Slow reference implementations used to cross-check the fast paths.

Nothing here shares code with the production modules.
"""

from __future__ import annotations

import math


def _cos(u, v) -> float:
    dot = 0.0
    nu = 0.0
    nv = 0.0
    for a, b in zip(u, v):
        dot += a * b
        nu += a * a
        nv += b * b
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (math.sqrt(nu) * math.sqrt(nv))


def dnsm_oracle(profile, k: int, lam: float) -> list[list[int]]:
    """Neighbour lists rebuilt round by round, scoring each candidate directly.

    ``profile`` is a sequence of N vectors. Returns N lists of k indices.
    """
    rows = [[float(x) for x in row] for row in profile]
    N = len(rows)
    if not 1 <= k <= N - 1:
        raise ValueError(f"k={k} out of range for N={N}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    result = []
    for i in range(N):
        chosen: list[int] = []
        best, best_j = None, None
        for j in range(N):
            if j == i:
                continue
            s = _cos(rows[i], rows[j])
            if best is None or s > best:
                best, best_j = s, j
        chosen.append(best_j)
        for m in range(2, k + 1):
            best, best_j = None, None
            for j in range(N):
                if j == i or j in chosen:
                    continue
                s_sim = _cos(rows[i], rows[j])
                s_div = 1.0 - sum(_cos(rows[j], rows[n]) for n in chosen) / (m - 1)
                score = lam * s_sim + (1.0 - lam) * s_div
                if best is None or score > best:
                    best, best_j = score, j
            chosen.append(best_j)
        result.append(chosen)
    return result


def adam_reference(theta: float, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> list[float]:
    """Scalar Adam trace: parameter value after each gradient in ``grads``."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(theta)
    return trace

