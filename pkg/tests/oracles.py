"""Independent brute-force oracles shared by the loss and metric tests."""
import itertools
import math

import numpy as np


def ctc_brute_force(log_probs: np.ndarray, target, blank: int = 0) -> float:
    """-log of the summed probability of every path that collapses to ``target``."""
    T, V = log_probs.shape
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        collapsed = [k for i, k in enumerate(path) if (i == 0 or k != path[i - 1]) and k != blank]
        if collapsed == list(target):
            total += math.exp(sum(log_probs[t, k] for t, k in enumerate(path)))
    return -math.log(total)


def info_nce_loop(z: np.ndarray, pair_of, tau: float) -> float:
    n = len(z)
    loss = 0.0
    for i in range(n):
        num = math.exp(float(np.dot(z[i], z[pair_of[i]])) / tau)
        den = 0.0
        for j in range(n):
            if j != i:
                den += math.exp(float(np.dot(z[i], z[j])) / tau)
        loss -= math.log(num / den)
    return loss


def fsc_loop(z: np.ndarray, groups, tau: float) -> float:
    n = len(z)
    loss = 0.0
    for i in range(n):
        den = sum(math.exp(float(np.dot(z[i], z[a])) / tau) for a in range(n) if a != i)
        pos = [p for p in range(n) if p != i and groups[p] == groups[i]]
        acc = 0.0
        for p in pos:
            acc += math.log(math.exp(float(np.dot(z[i], z[p])) / tau) / den)
        loss -= acc / len(pos)
    return loss


def min_edit_cost_exhaustive(ref, hyp) -> int:
    """Minimum edit cost by enumerating every alignment path (no DP table)."""
    best = [math.inf]

    def walk(i, j, cost):
        if cost >= best[0]:
            return
        if i == len(ref) and j == len(hyp):
            best[0] = cost
            return
        if i < len(ref) and j < len(hyp):
            walk(i + 1, j + 1, cost + (ref[i] != hyp[j]))
        if i < len(ref):
            walk(i + 1, j, cost + 1)
        if j < len(hyp):
            walk(i, j + 1, cost + 1)

    walk(0, 0, 0)
    return best[0]


def random_log_probs(rng, T, V):
    x = rng.normal(size=(T, V))
    return x - np.log(np.exp(x).sum(axis=1, keepdims=True))
