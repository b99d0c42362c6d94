"""Pure-Python/NumPy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def edit_distance(ref, hyp):
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    row = list(range(m + 1))
    for i in range(1, n + 1):
        diag = row[0]
        row[0] = i
        a = ref[i - 1]
        for j in range(1, m + 1):
            up = row[j]
            row[j] = min(up + 1, row[j - 1] + 1, diag + (a != hyp[j - 1]))
            diag = up
    return row[m]


def ctc_forward_backward(log_probs, ext):
    log_probs = np.ascontiguousarray(log_probs, dtype=np.float64)
    ext = np.asarray(ext, dtype=np.int64)
    T, V = log_probs.shape
    S = ext.shape[0]
    blank = ext[0]
    # transitions s-2 -> s are allowed onto non-blank labels that differ from two back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    emit = log_probs[:, ext]  # (T, S)
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    with np.errstate(invalid="ignore"):
        for t in range(1, T):
            prev = alpha[t - 1]
            v = prev.copy()
            v[1:] = np.logaddexp(v[1:], prev[:-1])
            v[2:] = np.where(skip[2:], np.logaddexp(v[2:], prev[:-2]), v[2:])
            alpha[t] = v + emit[t]

        beta = np.full((T, S), -np.inf)
        beta[T - 1, S - 1] = 0.0
        if S > 1:
            beta[T - 1, S - 2] = 0.0
        for t in range(T - 2, -1, -1):
            nxt = beta[t + 1] + emit[t + 1]
            v = nxt.copy()
            v[:-1] = np.logaddexp(v[:-1], nxt[1:])
            v[:-2] = np.where(skip[2:], np.logaddexp(v[:-2], nxt[2:]), v[:-2])
            beta[t] = v

    log_p = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2]) if S > 1 else alpha[T - 1, S - 1]
    if log_p == -np.inf:
        raise ValueError("no CTC alignment exists for this target length")

    occ = np.exp(alpha + beta - log_p)
    grad = np.zeros((T, V))
    np.add.at(grad, (slice(None), ext), -occ)
    return float(-log_p), grad
