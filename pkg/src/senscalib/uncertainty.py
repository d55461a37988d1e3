"""Prediction-variance objective and its BIC score.

The objective for a candidate model is the expected conditional prediction
variance

    V = m_f^T C_beta m_f  +  E[theta^2]  +  Tr(C_f C_beta)

where (m_f, C_f) are Monte-Carlo moments of the feature vector over the
training rows and (C_beta, E[theta^2]) are bootstrap moments of the fitted
coefficients and residual scale.  The three terms measure estimation
uncertainty, model error, and lack of robustness of an overly complex model.
Models are compared through BIC = n*log(V) + k*log(n) (natural log).
"""

from dataclasses import dataclass

import numpy as np

from .basis import PolynomialBasis, design_matrix
from .dataset import CalibrationDataset
from .exceptions import AllReplicatesSingular, NonpositiveVariance, ValidationError

TERM_FLOOR = -1e-12
RELIABILITY_THRESHOLD = 0.10


@dataclass(frozen=True)
class BootstrapEnsemble:
    """Replicate coefficient fits and their summary moments."""

    betas: np.ndarray        # (B, k)
    thetas: np.ndarray       # (B,)
    m_beta: np.ndarray       # (k,)
    c_beta: np.ndarray       # (k, k)
    mean_theta_sq: float
    n_rows: int
    fallback: np.ndarray     # (B,) bool
    resample_seeds: tuple = ()

    @property
    def b(self) -> int:
        return self.betas.shape[0]

    @property
    def fallback_fraction(self) -> float:
        return float(self.fallback.mean()) if self.fallback.size else 0.0


@dataclass(frozen=True)
class VarianceReport:
    """The three-term variance objective of one candidate model."""

    term_estimation: float
    term_model_error: float
    term_robustness: float
    v: float
    bic: float
    k: int
    n: int
    fallback_fraction: float = 0.0

    @property
    def reliability_warning(self) -> bool:
        return self.fallback_fraction > RELIABILITY_THRESHOLD


def f_moments(basis: PolynomialBasis, train: CalibrationDataset):
    """Monte-Carlo mean and unbiased covariance of the feature vector over
    the training rows."""
    if train.n < 2:
        raise ValidationError("need at least 2 rows for feature moments")
    h = design_matrix(basis, train.x, train.z)
    m_f = h.mean(axis=0)
    d = h - m_f
    c_f = (d.T @ d) / (train.n - 1)
    return m_f, c_f


def ensemble_from_fits(betas: np.ndarray, theta_sq: np.ndarray, n_rows: int,
                       fallback=None, resample_seeds=()) -> BootstrapEnsemble:
    """Summarize replicate fits into a BootstrapEnsemble."""
    betas = np.asarray(betas, dtype=np.float64)
    theta_sq = np.asarray(theta_sq, dtype=np.float64)
    if betas.ndim != 2 or betas.shape[0] != theta_sq.shape[0]:
        raise ValidationError("betas must be (B, k) with one theta per replicate")
    if betas.shape[0] < 2:
        raise ValidationError("need at least 2 bootstrap replicates")
    if fallback is None:
        fallback = np.zeros(betas.shape[0], dtype=bool)
    fallback = np.asarray(fallback, dtype=bool)
    if fallback.all():
        raise AllReplicatesSingular("every bootstrap replicate needed the pseudo-inverse")
    m_beta = betas.mean(axis=0)
    d = betas - m_beta
    c_beta = (d.T @ d) / (betas.shape[0] - 1)
    return BootstrapEnsemble(
        betas=betas,
        thetas=np.sqrt(theta_sq),
        m_beta=m_beta,
        c_beta=c_beta,
        mean_theta_sq=float(theta_sq.mean()),
        n_rows=n_rows,
        fallback=fallback,
        resample_seeds=tuple(resample_seeds),
    )


def bootstrap_ensemble(train: CalibrationDataset, target: int, term_subset, caches) -> BootstrapEnsemble:
    """Fit ``term_subset`` on every cached resample of the training rows.

    ``caches`` is a list of GramCache built for independent resamples; the
    same caches are reused for every candidate model of a selection run.
    """
    from .glr import fit_from_gram  # local import to avoid a cycle

    if len(caches) < 2:
        raise ValidationError("need at least 2 bootstrap caches")
    idx = np.asarray(sorted(term_subset), dtype=np.intp)
    betas = np.empty((len(caches), idx.size))
    theta_sq = np.empty(len(caches))
    fallback = np.zeros(len(caches), dtype=bool)
    for b, cache in enumerate(caches):
        beta, theta, flag = fit_from_gram(cache, idx, target)
        betas[b] = beta
        theta_sq[b] = theta * theta
        fallback[b] = flag
    return ensemble_from_fits(betas, theta_sq, caches[0].n, fallback)


def _floor(value: float, label: str) -> float:
    if value < TERM_FLOOR:
        raise NonpositiveVariance(f"{label} = {value:.3e} is negative beyond the numerical floor")
    return max(value, 0.0)


def variance_objective(m_f: np.ndarray, c_f: np.ndarray, ensemble: BootstrapEnsemble) -> VarianceReport:
    """Three-term variance objective and BIC for one candidate model.

    ``m_f`` and ``c_f`` must already be restricted to the model's terms.
    Raises NonpositiveVariance when V <= 0 after flooring; such a model is
    discarded from selection.
    """
    k = m_f.shape[0]
    if ensemble.betas.shape[1] != k or c_f.shape != (k, k):
        raise ValidationError("feature moments and ensemble dimensions disagree")
    scores = ensemble.betas @ m_f
    term_est = _floor(float(np.var(scores, ddof=1)), "estimation term")
    term_mod = _floor(float(ensemble.mean_theta_sq), "model error term")
    d = ensemble.betas - ensemble.m_beta
    term_rob = _floor(
        float(np.einsum("bi,bi->", d @ c_f, d)) / (ensemble.b - 1), "robustness term"
    )
    v = term_est + term_mod + term_rob
    if v <= 0.0:
        raise NonpositiveVariance("variance objective is zero; BIC is undefined")
    n = ensemble.n_rows
    bic = n * float(np.log(v)) + k * float(np.log(n))
    return VarianceReport(
        term_estimation=term_est,
        term_model_error=term_mod,
        term_robustness=term_rob,
        v=v,
        bic=bic,
        k=k,
        n=n,
        fallback_fraction=ensemble.fallback_fraction,
    )
