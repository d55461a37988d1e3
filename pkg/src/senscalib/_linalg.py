"""Batched SPD solves for stacks of small Gram systems.

One selection run solves hundreds of thousands of small symmetric systems
(one per bootstrap resample per candidate model).  LAPACK call overhead
dominates at these sizes, so the hot kernel is a numba-compiled Cholesky
factorization with forward/back substitution, parallel over the stack.
Matrices whose factorization hits a non-positive pivot are flagged instead
of raising, letting the caller fall back to a pseudo-inverse per replicate.
"""

import numpy as np

try:
    import numba

    # prefer OpenMP: the TBB shipped with some images predates numba's minimum
    numba.config.THREADING_LAYER = "omp"
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _HAVE_NUMBA = False


# a pivot below PIVOT_RTOL times the original diagonal marks the matrix as
# numerically rank-deficient; the caller then switches to the pseudo-inverse
PIVOT_RTOL = 1e-10


def _chol_solve_batch_py(g: np.ndarray, rhs: np.ndarray):
    """Reference implementation: per-matrix Cholesky via numpy."""
    m, k = rhs.shape
    beta = np.zeros_like(rhs)
    ok = np.ones(m, dtype=np.bool_)
    for i in range(m):
        try:
            low = np.linalg.cholesky(g[i])
        except np.linalg.LinAlgError:
            ok[i] = False
            continue
        if np.any(np.diag(low) ** 2 <= PIVOT_RTOL * np.diag(g[i])):
            ok[i] = False
            continue
        y = np.linalg.solve(low, rhs[i])
        beta[i] = np.linalg.solve(low.T, y)
    return beta, ok


if _HAVE_NUMBA:

    @numba.njit(parallel=True, fastmath=True, cache=True)
    def _chol_solve_batch_nb(g, rhs):  # pragma: no cover - exercised via wrapper
        m, k = rhs.shape
        beta = np.zeros_like(rhs)
        ok = np.ones(m, dtype=np.bool_)
        for i in numba.prange(m):
            a = g[i].copy()
            # in-place lower Cholesky; bail out on a pivot that collapses
            # relative to the original diagonal (rank tolerance 1e-10)
            good = True
            for j in range(k):
                s = a[j, j]
                for p in range(j):
                    s -= a[j, p] * a[j, p]
                if s <= 1e-10 * g[i, j, j] or not np.isfinite(s):
                    good = False
                    break
                d = np.sqrt(s)
                a[j, j] = d
                for r in range(j + 1, k):
                    t = a[r, j]
                    for p in range(j):
                        t -= a[r, p] * a[j, p]
                    a[r, j] = t / d
            if not good:
                ok[i] = False
                continue
            y = np.empty(k)
            for r in range(k):
                t = rhs[i, r]
                for p in range(r):
                    t -= a[r, p] * y[p]
                y[r] = t / a[r, r]
            for r in range(k - 1, -1, -1):
                t = y[r]
                for p in range(r + 1, k):
                    t -= a[p, r] * beta[i, p]
                beta[i, r] = t / a[r, r]
        return beta, ok


def chol_solve_batch(g: np.ndarray, rhs: np.ndarray):
    """Solve g[i] beta[i] = rhs[i] for a stack of SPD matrices.

    Returns (beta, ok) where ok[i] is False when matrix i failed to
    factorize; the corresponding beta row is left at zero.
    """
    g = np.ascontiguousarray(g)
    rhs = np.ascontiguousarray(rhs)
    if _HAVE_NUMBA:
        return _chol_solve_batch_nb(g, rhs)
    return _chol_solve_batch_py(g, rhs)
