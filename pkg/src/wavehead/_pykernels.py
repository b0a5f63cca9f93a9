"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``WAVEHEAD_PURE_PYTHON=1`` is set.  Must stay behaviourally identical to
``_ckernels.pyx``.
"""

import numpy as np

from .errors import SingularMatrixError

PIVOT_RTOL = 1e-14


def lu_factor(M):
    """LU with partial pivoting.  Returns ``(lu, perm)`` with ``M[perm] = L @ U``."""
    a = np.array(M, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    scale = np.max(np.abs(a)) if a.size else 0.0
    tol = PIVOT_RTOL * scale
    perm = np.arange(n, dtype=np.intp)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        pivot = a[p, k]
        if not abs(pivot) > tol:
            raise SingularMatrixError(
                f"matrix is singular to working precision (column {k}, "
                f"|pivot|={abs(pivot):.3e}, threshold={tol:.3e})"
            )
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k + 1:, k] /= pivot
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    return a, perm


def lu_solve(lu, perm, B):
    x = np.array(B, dtype=np.float64, copy=True)[perm]
    n = lu.shape[0]
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] -= lu[i, i + 1:] @ x[i + 1:]
        x[i] /= lu[i, i]
    return x


def skew(A):
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    S = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    upper = A[iu] - A.T[iu]
    S[iu] = upper
    S[iu[1], iu[0]] = -upper
    return S


def ece_bin_stats(conf, correct, n_bins):
    """Per-bin ``(count, sum_conf, sum_correct)`` over left-closed bins, top bin closed."""
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, conf, side="right") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    sum_conf = np.bincount(idx, weights=conf, minlength=n_bins)
    sum_correct = np.bincount(idx, weights=correct, minlength=n_bins)
    return counts, sum_conf, sum_correct
