# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: CTC forward-backward and edit-distance backtrace."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY, isfinite

cnp.import_array()


cdef inline double lse2(double a, double b) nogil:
    cdef double m
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log(1.0 + exp(b - a))
    return b + log(1.0 + exp(a - b))


def ctc_forward_backward(log_probs, target, int blank=0):
    cdef double[:, ::1] lp = np.ascontiguousarray(log_probs, dtype=np.float64)
    cdef long long[::1] tgt = np.ascontiguousarray(target, dtype=np.int64)
    cdef Py_ssize_t T = lp.shape[0]
    cdef Py_ssize_t L = tgt.shape[0]
    cdef Py_ssize_t S = 2 * L + 1
    cdef Py_ssize_t t, s
    cdef double acc, log_p, g

    ext_arr = np.full(S, blank, dtype=np.int64)
    skip_arr = np.zeros(S, dtype=np.uint8)
    cdef long long[::1] ext = ext_arr
    cdef unsigned char[::1] skip = skip_arr
    for s in range(L):
        ext[2 * s + 1] = tgt[s]
    for s in range(3, S, 2):
        skip[s] = ext[s] != ext[s - 2]

    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    grad_arr = np.zeros((T, lp.shape[1]))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    with nogil:
        alpha[0, 0] = lp[0, ext[0]]
        if S > 1:
            alpha[0, 1] = lp[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                acc = alpha[t - 1, s]
                if s >= 1:
                    acc = lse2(acc, alpha[t - 1, s - 1])
                if s >= 2 and skip[s]:
                    acc = lse2(acc, alpha[t - 1, s - 2])
                if acc != -INFINITY:
                    alpha[t, s] = acc + lp[t, ext[s]]

        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                acc = beta[t + 1, s] + lp[t + 1, ext[s]]
                if s + 1 < S:
                    acc = lse2(acc, beta[t + 1, s + 1] + lp[t + 1, ext[s + 1]])
                if s + 2 < S and skip[s + 2]:
                    acc = lse2(acc, beta[t + 1, s + 2] + lp[t + 1, ext[s + 2]])
                beta[t, s] = acc

        if S == 1:
            log_p = alpha[T - 1, 0]
        else:
            log_p = lse2(alpha[T - 1, S - 1], alpha[T - 1, S - 2])

    if not isfinite(log_p):
        raise ValueError("ctc: target has zero probability under log_probs")

    with nogil:
        for t in range(T):
            for s in range(S):
                if alpha[t, s] != -INFINITY and beta[t, s] != -INFINITY:
                    g = exp(alpha[t, s] + beta[t, s] - log_p)
                    grad[t, ext[s]] -= g
    return -log_p, grad_arr


def edit_ops(ref, hyp):
    cdef long long[::1] r = np.ascontiguousarray(ref, dtype=np.int64)
    cdef long long[::1] h = np.ascontiguousarray(hyp, dtype=np.int64)
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t m = h.shape[0]
    cdef Py_ssize_t i, j
    cdef long diag, best, here
    cdef long S = 0, D = 0, I = 0
    d_arr = np.zeros((n + 1, m + 1), dtype=np.int64)
    cdef long long[:, ::1] d = d_arr

    with nogil:
        for i in range(1, n + 1):
            d[i, 0] = i
        for j in range(1, m + 1):
            d[0, j] = j
        for i in range(1, n + 1):
            for j in range(1, m + 1):
                diag = d[i - 1, j - 1] + (0 if r[i - 1] == h[j - 1] else 1)
                best = diag
                if d[i, j - 1] + 1 < best:
                    best = d[i, j - 1] + 1
                if d[i - 1, j] + 1 < best:
                    best = d[i - 1, j] + 1
                d[i, j] = best

        i = n
        j = m
        while i > 0 or j > 0:
            here = d[i, j]
            if i > 0 and j > 0 and r[i - 1] == h[j - 1] and here == d[i - 1, j - 1]:
                i -= 1
                j -= 1
            elif i > 0 and j > 0 and here == d[i - 1, j - 1] + 1:
                S += 1
                i -= 1
                j -= 1
            elif j > 0 and here == d[i, j - 1] + 1:
                I += 1
                j -= 1
            else:
                D += 1
                i -= 1
    return int(S), int(D), int(I)
