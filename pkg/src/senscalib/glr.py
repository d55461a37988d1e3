"""Least-squares fitting of the polynomial regression model.

Two fitting routes are provided and must agree to 1e-8:

* :func:`fit` solves the full design-matrix problem through an orthogonal
  factorization (SVD-based lstsq) with a pseudo-inverse cutoff at relative
  tolerance 1e-10.
* :func:`fit_from_gram` solves the normal equations on a principal
  submatrix of a precomputed Gram matrix.  One Gram per bootstrap resample
  serves every variable subset and every greedy-pruned model, which is what
  makes the selection sweep tractable.

Gram subsystems are factorized by Cholesky; replicates whose factorization
fails fall back to the pseudo-inverse (rcond 1e-10) and are flagged.
"""

from dataclasses import dataclass

import numpy as np

from ._linalg import chol_solve_batch
from .basis import PolynomialBasis, design_matrix
from .dataset import CalibrationDataset
from .exceptions import NumericalFailure, SingularSubsystem, Underdetermined, ValidationError

PINV_RCOND = 1e-10


@dataclass(frozen=True)
class FittedModel:
    """A calibrated polynomial model for one sensor output."""

    target: int
    target_name: str
    basis: PolynomialBasis
    beta: np.ndarray
    theta: float
    n_train: int

    @property
    def k(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True)
class GramCache:
    """H^T H, H^T y and y^T y assembled once over one row multiset.

    ``hty`` has one column per sensor output so a single cache serves all
    targets.  ``rows`` records the resample identity.
    """

    gram: np.ndarray
    hty: np.ndarray
    yty: np.ndarray
    rows: np.ndarray
    n: int


def fit(train: CalibrationDataset, target: int, basis: PolynomialBasis) -> FittedModel:
    """Least-squares fit of ``basis`` against output column ``target``."""
    n, k = train.n, basis.k
    if n <= k:
        raise Underdetermined(f"n={n} rows cannot identify k={k} terms (need n > k)")
    h = design_matrix(basis, train.x, train.z)
    v = train.y[:, target]
    if not np.all(np.isfinite(h)):
        raise NumericalFailure("design matrix contains non-finite values")
    try:
        beta, _, _, _ = np.linalg.lstsq(h, v, rcond=PINV_RCOND)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"least-squares solve failed: {exc}") from exc
    resid = v - h @ beta
    theta_sq = float(resid @ resid) / (n - k)
    return FittedModel(
        target=target,
        target_name=train.y_names[target],
        basis=basis,
        beta=beta,
        theta=float(np.sqrt(max(theta_sq, 0.0))),
        n_train=n,
    )


def predict(model: FittedModel, x, z) -> np.ndarray:
    """Mean prediction f(x, z_alpha)^T beta; the model-error term is excluded."""
    h = design_matrix(model.basis, np.atleast_2d(x), np.atleast_2d(z))
    return h @ model.beta


def build_gram(rows, train: CalibrationDataset, basis: PolynomialBasis) -> GramCache:
    """Assemble the Gram cache of ``basis`` over the resampled rows."""
    rows = np.asarray(rows, dtype=np.intp)
    h = design_matrix(basis, train.x, train.z)
    counts = np.bincount(rows, minlength=train.n).astype(np.float64)
    hw = h * counts[:, None]
    return GramCache(
        gram=hw.T @ h,
        hty=hw.T @ train.y,
        yty=(counts[:, None] * train.y * train.y).sum(axis=0),
        rows=rows,
        n=rows.size,
    )


def _solve_spd_stack(g: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the stacked SPD systems g[i] beta[i] = rhs[i].

    Replicates whose Cholesky factorization fails are re-solved with the
    pseudo-inverse (rcond 1e-10) and flagged in the returned mask.
    """
    beta, ok = chol_solve_batch(g, rhs)
    fallback = ~ok
    for i in np.nonzero(fallback)[0]:
        try:
            beta[i] = np.linalg.pinv(g[i], rcond=PINV_RCOND, hermitian=True) @ rhs[i]
        except np.linalg.LinAlgError as exc:
            raise SingularSubsystem(f"replicate {i}: pseudo-inverse failed: {exc}") from exc
    return beta, fallback


def _theta_sq_stack(
    g: np.ndarray, rhs: np.ndarray, yty: np.ndarray, beta: np.ndarray, n: int,
    fallback: np.ndarray,
) -> np.ndarray:
    """theta^2 = (y^T y - 2 beta^T h + beta^T G beta) / (n - k), clamped at 0.

    On the exact-solve path G beta equals h, so the quadratic term collapses
    to beta^T h; the full three-term form is only needed for pseudo-inverse
    replicates where the residual of the normal equations is nonzero.
    """
    k = rhs.shape[-1]
    if n <= k:
        raise Underdetermined(f"resample size n={n} cannot identify k={k} terms")
    yty = np.broadcast_to(np.asarray(yty, dtype=np.float64), rhs.shape[:1])
    bh = np.einsum("mi,mi->m", beta, rhs)
    rss = yty - bh
    if fallback.any():
        idx = np.nonzero(fallback)[0]
        quad = np.einsum("mi,mij,mj->m", beta[idx], g[idx], beta[idx])
        rss[idx] = yty[idx] - 2.0 * bh[idx] + quad
    return np.maximum(rss, 0.0) / (n - k)


def fit_from_gram(cache: GramCache, term_subset, target: int):
    """Fit a term subset of the cached basis against output ``target``.

    Returns (beta, theta, fallback) where ``fallback`` flags a pseudo-inverse
    solve.  The subset must contain the constant term (index 0).
    """
    idx = np.asarray(sorted(term_subset), dtype=np.intp)
    if idx.size == 0 or idx[0] != 0:
        raise ValidationError("term subset must include the constant term (index 0)")
    g = cache.gram[np.ix_(idx, idx)][None]
    rhs = cache.hty[idx, target][None]
    beta, fallback = _solve_spd_stack(g, rhs)
    theta_sq = _theta_sq_stack(g, rhs, cache.yty[target], beta, cache.n, fallback)
    return beta[0], float(np.sqrt(theta_sq[0])), bool(fallback[0])


class GramStack:
    """Gram caches for a family of resamples packed into contiguous arrays.

    Slot 0 is conventionally the identity resample (the plain training set);
    slots 1..B hold the bootstrap replicates.  ``solve_terms`` extracts a
    principal submatrix once and solves every resample in one batched call.
    """

    def __init__(self, grams: np.ndarray, htys: np.ndarray, ytys: np.ndarray, n: int):
        self.grams = grams      # (m, k_full, k_full)
        self.htys = htys        # (m, k_full, d_y)
        self.ytys = ytys        # (m, d_y)
        self.n = n

    @classmethod
    def from_resamples(cls, train: CalibrationDataset, basis: PolynomialBasis, resamples):
        """Build the stack for the identity resample plus each row multiset."""
        h = design_matrix(basis, train.x, train.z)
        y = train.y
        n, k = h.shape
        m = len(resamples) + 1
        grams = np.empty((m, k, k))
        htys = np.empty((m, k, y.shape[1]))
        ytys = np.empty((m, y.shape[1]))
        grams[0] = h.T @ h
        htys[0] = h.T @ y
        ytys[0] = (y * y).sum(axis=0)
        for b, rows in enumerate(resamples, start=1):
            counts = np.bincount(np.asarray(rows, dtype=np.intp), minlength=n).astype(np.float64)
            hw = h * counts[:, None]
            grams[b] = hw.T @ h
            htys[b] = hw.T @ y
            ytys[b] = (counts[:, None] * y * y).sum(axis=0)
        return cls(grams, htys, ytys, n)

    @property
    def n_resamples(self) -> int:
        return self.grams.shape[0] - 1

    def solve_terms(self, idx: np.ndarray, target: int):
        """Solve every stacked system restricted to term rows ``idx``.

        Returns (beta (m, k_S), theta_sq (m,), fallback (m,)).
        """
        g = self.grams[:, idx[:, None], idx[None, :]]
        rhs = self.htys[:, idx, target]
        beta, fallback = _solve_spd_stack(g, rhs)
        theta_sq = _theta_sq_stack(g, rhs, self.ytys[:, target], beta, self.n, fallback)
        return beta, theta_sq, fallback
