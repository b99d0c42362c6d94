# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: token edit distance and the CTC forward-backward pass."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline double _logaddexp(double a, double b) nogil:
    cdef double hi, lo
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        hi = a
        lo = b
    else:
        hi = b
        lo = a
    return hi + log(1.0 + exp(lo - hi))


def edit_distance(ref, hyp):
    """Levenshtein distance between two sequences of integer token ids."""
    cdef Py_ssize_t n = len(ref)
    cdef Py_ssize_t m = len(hyp)
    cdef Py_ssize_t i, j
    cdef long sub, best
    if n == 0:
        return m
    if m == 0:
        return n
    cdef long *a = <long *> malloc(n * sizeof(long))
    cdef long *b = <long *> malloc(m * sizeof(long))
    cdef long *row = <long *> malloc((m + 1) * sizeof(long))
    cdef long diag, up
    if a == NULL or b == NULL or row == NULL:
        free(a); free(b); free(row)
        raise MemoryError()
    try:
        for i in range(n):
            a[i] = ref[i]
        for j in range(m):
            b[j] = hyp[j]
        with nogil:
            for j in range(m + 1):
                row[j] = j
            for i in range(1, n + 1):
                diag = row[0]
                row[0] = i
                for j in range(1, m + 1):
                    up = row[j]
                    sub = diag + (0 if a[i - 1] == b[j - 1] else 1)
                    best = up + 1
                    if row[j - 1] + 1 < best:
                        best = row[j - 1] + 1
                    if sub < best:
                        best = sub
                    row[j] = best
                    diag = up
        return row[m]
    finally:
        free(a)
        free(b)
        free(row)


def ctc_forward_backward(double[:, ::1] log_probs, long[::1] ext):
    """Negative log-likelihood of a blank-extended label sequence and its
    gradient with respect to ``log_probs``.

    ``ext`` is the extended label sequence (blank, l1, blank, l2, ..., blank);
    the blank id is ``ext[0]``. Returns ``(nll, grad)`` where ``grad`` has the
    shape of ``log_probs``. Raises ValueError when no alignment exists.
    """
    cdef Py_ssize_t T = log_probs.shape[0]
    cdef Py_ssize_t V = log_probs.shape[1]
    cdef Py_ssize_t S = ext.shape[0]
    cdef Py_ssize_t t, s
    cdef long blank = ext[0]
    cdef double v, log_p
    alpha_arr = np.full((T, S), -np.inf)
    beta_arr = np.full((T, S), -np.inf)
    grad_arr = np.zeros((T, V))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] grad = grad_arr

    with nogil:
        alpha[0, 0] = log_probs[0, ext[0]]
        if S > 1:
            alpha[0, 1] = log_probs[0, ext[1]]
        for t in range(1, T):
            for s in range(S):
                v = alpha[t - 1, s]
                if s >= 1:
                    v = _logaddexp(v, alpha[t - 1, s - 1])
                if s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]:
                    v = _logaddexp(v, alpha[t - 1, s - 2])
                if v != -INFINITY:
                    alpha[t, s] = v + log_probs[t, ext[s]]

        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            for s in range(S):
                v = beta[t + 1, s] + log_probs[t + 1, ext[s]]
                if s + 1 < S:
                    v = _logaddexp(v, beta[t + 1, s + 1] + log_probs[t + 1, ext[s + 1]])
                if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                    v = _logaddexp(v, beta[t + 1, s + 2] + log_probs[t + 1, ext[s + 2]])
                beta[t, s] = v

        if S > 1:
            log_p = _logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
        else:
            log_p = alpha[T - 1, S - 1]

    if log_p == -INFINITY:
        raise ValueError("no CTC alignment exists for this target length")

    with nogil:
        for t in range(T):
            for s in range(S):
                v = alpha[t, s] + beta[t, s]
                if v != -INFINITY:
                    grad[t, ext[s]] -= exp(v - log_p)
    return -log_p, grad_arr
