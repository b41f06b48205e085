"""Pure-Python/numpy implementations of the hot kernels.

Semantics match ``_ckernels.pyx`` exactly; this module is used when the
compiled extension is unavailable or ``FAIRCL_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import numpy as np

NEG_INF = -np.inf


def _extend(target: np.ndarray, blank: int) -> tuple[np.ndarray, np.ndarray]:
    S = 2 * len(target) + 1
    ext = np.full(S, blank, dtype=np.int64)
    ext[1::2] = target
    skip = np.zeros(S, dtype=bool)
    if S > 3:
        skip[3::2] = ext[3::2] != ext[1:-2:2]
    return ext, skip


def _lse2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = np.maximum(a, b)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(m), safe + np.log(np.exp(a - safe) + np.exp(b - safe)), NEG_INF)


def ctc_forward_backward(log_probs: np.ndarray, target: np.ndarray, blank: int = 0):
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``log_probs``.

    ``log_probs`` is T x V. The gradient treats every entry as a free input;
    normalization is the caller's concern.
    """
    lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    T = lp.shape[0]
    ext, skip = _extend(target, blank)
    S = len(ext)
    emit = lp[:, ext]  # T x S

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = _lse2(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], _lse2(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = _lse2(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], _lse2(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc

    log_p = alpha[T - 1, S - 1] if S == 1 else float(_lse2(alpha[T - 1, S - 1], alpha[T - 1, S - 2]))
    if not np.isfinite(log_p):
        raise ValueError("ctc: target has zero probability under log_probs")
    with np.errstate(invalid="ignore"):
        occ = np.exp(alpha + beta - log_p)
    occ = np.where(np.isfinite(occ), occ, 0.0)
    grad = np.zeros_like(lp)
    for s in range(S):
        grad[:, ext[s]] -= occ[:, s]
    return -float(log_p), grad


def edit_ops(ref, hyp) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) of a minimal unit-cost alignment.

    Backtrace ties prefer substitution, then insertion, then deletion.
    """
    ref = list(ref)
    hyp = list(hyp)
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, up = d[i], d[i - 1]
        for j in range(1, m + 1):
            diag = up[j - 1] + (0 if ri == hyp[j - 1] else 1)
            row[j] = min(diag, row[j - 1] + 1, up[j] + 1)
    i, j = n, m
    S = D = I = 0
    while i > 0 or j > 0:
        here = d[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and here == d[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and here == d[i - 1][j - 1] + 1:
            S += 1
            i, j = i - 1, j - 1
        elif j > 0 and here == d[i][j - 1] + 1:
            I += 1
            j -= 1
        else:
            D += 1
            i -= 1
    return S, D, I
