"""Normalized polynomial feature vectors over (x, z_alpha).

A basis enumerates every monomial of total degree <= p over the target
columns plus a chosen subset of interferent columns, in graded order
(degree first, lexicographic within a degree) with the constant term first.
Non-constant terms are centered and scaled by their empirical mean and
standard deviation on the training rows; those statistics are frozen at
construction and reused verbatim at prediction time.
"""

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from ._validate import check_in_range
from .dataset import CalibrationDataset
from .exceptions import DegenerateTerm, ValidationError


def enumerate_exponents(n_vars: int, degree: int) -> np.ndarray:
    """All exponent vectors with total degree <= degree, graded order.

    Within a degree block, rows are sorted lexicographically on the exponent
    tuple.  Row 0 is the constant term.  The row count is
    comb(n_vars + degree, degree).
    """
    rows = []
    for d in range(degree + 1):
        block = set()
        for picks in combinations_with_replacement(range(n_vars), d):
            e = [0] * n_vars
            for v in picks:
                e[v] += 1
            block.add(tuple(e))
        rows.extend(sorted(block))
    out = np.asarray(rows, dtype=np.int64).reshape(len(rows), n_vars)
    assert out.shape[0] == comb(n_vars + degree, degree)
    return out


@dataclass(frozen=True)
class PolynomialBasis:
    """Ordered monomials over (x columns, z_alpha columns) with frozen
    normalization statistics.

    ``alpha`` holds 0-based indices into the dataset's z columns.  The
    exponent matrix is (k, d_x + len(alpha)); x columns come first.
    """

    alpha: tuple
    degree: int
    d_x: int
    exponents: np.ndarray
    norm_mean: np.ndarray
    norm_std: np.ndarray
    var_names: tuple = ()

    @property
    def k(self) -> int:
        return self.exponents.shape[0]

    @property
    def n_vars(self) -> int:
        return self.exponents.shape[1]

    def subset(self, term_indices) -> "PolynomialBasis":
        """Basis restricted to the given term rows; order is preserved."""
        idx = np.asarray(sorted(term_indices), dtype=np.intp)
        if idx.size == 0 or np.any(self.exponents[idx[0]] != 0):
            raise ValidationError("term subset must include the constant term")
        return PolynomialBasis(
            alpha=self.alpha,
            degree=self.degree,
            d_x=self.d_x,
            exponents=self.exponents[idx],
            norm_mean=self.norm_mean[idx],
            norm_std=self.norm_std[idx],
            var_names=self.var_names,
        )

    def _gather(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if x.shape[1] != self.d_x:
            raise ValidationError(f"expected {self.d_x} target columns, got {x.shape[1]}")
        cols = [x] if self.d_x else []
        if self.alpha:
            cols.append(z[:, list(self.alpha)])
        if not cols:
            return np.empty((max(x.shape[0], z.shape[0]), 0))
        return np.concatenate(cols, axis=1)


def raw_monomials(exponents: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Evaluate raw (unnormalized) monomials: (n, k) from rows w (n, n_vars)."""
    n = w.shape[0]
    k, n_vars = exponents.shape
    out = np.ones((n, k))
    for j in range(n_vars):
        col = w[:, j]
        e = exponents[:, j]
        for power in np.unique(e):
            if power == 0:
                continue
            out[:, e == power] *= (col ** power)[:, None]
    return out


def full_basis(train: CalibrationDataset, alpha, degree: int) -> PolynomialBasis:
    """Build the complete degree-<=p basis over (x, z_alpha) and freeze its
    normalization statistics on the training rows.

    Raises DegenerateTerm if any non-constant monomial is empirically
    constant on the training set, which signals a pathological column.
    """
    check_in_range(degree, "degree", lo=1)
    if train.n < 2:
        raise ValidationError("need at least 2 training rows to normalize a basis")
    alpha = tuple(sorted(int(a) for a in alpha))
    if any(a < 0 or a >= train.d_z for a in alpha):
        raise ValidationError(f"alpha {alpha} out of range for d_z={train.d_z}")
    if len(set(alpha)) != len(alpha):
        raise ValidationError("alpha contains duplicate indices")

    n_vars = train.d_x + len(alpha)
    exponents = enumerate_exponents(n_vars, degree)
    var_names = tuple(train.x_names) + tuple(train.z_names[a] for a in alpha)

    w = np.concatenate([train.x, train.z[:, list(alpha)]], axis=1)
    raw = raw_monomials(exponents, w)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    mean[0] = 0.0
    std[0] = 1.0
    bad = np.nonzero(std <= 0.0)[0]
    if bad.size:
        raise DegenerateTerm(
            f"monomial with exponents {exponents[bad[0]].tolist()} is constant on the training set"
        )
    return PolynomialBasis(
        alpha=alpha,
        degree=degree,
        d_x=train.d_x,
        exponents=exponents,
        norm_mean=mean,
        norm_std=std,
        var_names=var_names,
    )


def design_matrix(basis: PolynomialBasis, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Normalized feature rows (n, k) for targets x (n, d_x) and the full
    interferent matrix z (n, d_z); the alpha columns are picked internally."""
    w = basis._gather(x, z)
    raw = raw_monomials(basis.exponents, w)
    return (raw - basis.norm_mean) / basis.norm_std


def evaluate(basis: PolynomialBasis, x_row, z_row) -> np.ndarray:
    """Feature vector (k,) for one observation."""
    return design_matrix(basis, np.atleast_2d(x_row), np.atleast_2d(z_row))[0]


def design_derivative(basis: PolynomialBasis, j: int, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Analytic partial derivative of every normalized term with respect to
    target variable j (0-based, j < d_x), evaluated row-wise: (n, k)."""
    if not 0 <= j < basis.d_x:
        raise ValidationError(f"j={j} is not a target-variable index (d_x={basis.d_x})")
    w = basis._gather(x, z)
    e = basis.exponents.copy()
    coef = e[:, j].astype(np.float64)
    e[:, j] = np.maximum(e[:, j] - 1, 0)
    deriv = raw_monomials(e, w) * coef
    return deriv / basis.norm_std


def partial_derivative(basis: PolynomialBasis, j: int, x_row, z_row) -> np.ndarray:
    """Derivative vector (k,) of the feature map at one observation."""
    return design_derivative(basis, j, np.atleast_2d(x_row), np.atleast_2d(z_row))[0]
