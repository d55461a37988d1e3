"""Variance decomposition across dependent inputs with a model-error share.

Total Sobol indices S^T(A) = 1 - Var(E[h|W_A]) / Var(h) are estimated by
pick-freeze sampling: redraw the complement of A from its conditional
distribution given W_A and average the product estimator.  Dependent inputs
are handled through a Gaussian latent space, either analytic (given mean and
covariance) or a Gaussian copula fitted on training rows (normal-scores
correlation plus empirical marginals).

The per-variable attribution delta_j sums, over all input permutations, the
drop in unexplained variance when the variable joins the coalition of its
predecessors, weighted by a probability mass proportional to
L(pi) = (prod_k S^T(C_k(pi)))^-1.  The weights concentrate on orderings
whose coalitions leave variance unexplained, which is what keeps the
attribution of a correlated-but-inert input at zero.  Indices floor at
1e-12 inside L so that exhausted coalitions (S^T = 0) cancel out of the
normalized weights; increments are clamped at zero against Monte-Carlo
inversions, and the final deltas are rescaled to sum exactly to Var(h).
"""

from dataclasses import dataclass
from itertools import permutations
from math import factorial

import numpy as np

from .basis import design_matrix
from .dataset import CalibrationDataset
from .exceptions import TooManyInputs, ValidationError, ZeroOutputVariance
from .glr import FittedModel
from .rng import child_rng

ST_FLOOR = 1e-12
MAX_PME_INPUTS = 9
DEFAULT_SAMPLES = 20_000


class GaussianSampler:
    """Joint Gaussian input model with analytic conditionals."""

    kind = "gaussian_analytic"

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=np.float64).ravel()
        self.cov = np.asarray(cov, dtype=np.float64)
        self.d = self.mean.size
        if self.cov.shape != (self.d, self.d):
            raise ValidationError("mean and covariance dimensions disagree")
        self._chol = np.linalg.cholesky(self.cov)

    @classmethod
    def fit(cls, rows: np.ndarray) -> "GaussianSampler":
        rows = np.asarray(rows, dtype=np.float64)
        cov = np.cov(rows, rowvar=False, ddof=1)
        return cls(rows.mean(axis=0), np.atleast_2d(cov))

    def latent_from_normals(self, u: np.ndarray) -> np.ndarray:
        return self.mean + u @ self._chol.T

    def latent_cov(self) -> np.ndarray:
        return self.cov

    def latent_mean(self) -> np.ndarray:
        return self.mean

    def to_data(self, g: np.ndarray) -> np.ndarray:
        return g


class EmpiricalCopulaSampler:
    """Gaussian copula over empirical marginals.

    Margins are rank-transformed to normal scores to estimate the latent
    correlation; draws happen in the latent space and are pushed back
    through the empirical quantile functions, so conditioned coordinates
    are preserved exactly.
    """

    kind = "gaussian_copula_empirical"

    def __init__(self, rows: np.ndarray):
        from scipy.stats import norm, rankdata

        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 10:
            raise ValidationError("copula sampler needs at least 10 training rows")
        self.d = rows.shape[1]
        self._sorted = np.sort(rows, axis=0)
        n = rows.shape[0]
        self._pp = (np.arange(n) + 0.5) / n
        scores = norm.ppf((rankdata(rows, axis=0) - 0.5) / n)
        corr = np.corrcoef(scores, rowvar=False)
        corr = np.atleast_2d(corr)
        # guard: shrink toward identity until the latent correlation factorizes
        for shrink in (0.0, 1e-8, 1e-6, 1e-4):
            try:
                latent = (1 - shrink) * corr + shrink * np.eye(self.d)
                np.linalg.cholesky(latent)
                break
            except np.linalg.LinAlgError:
                continue
        else:
            raise ValidationError("normal-scores correlation is not positive definite")
        self._corr = latent
        self._chol = np.linalg.cholesky(latent)

    @classmethod
    def fit(cls, rows: np.ndarray) -> "EmpiricalCopulaSampler":
        return cls(rows)

    def latent_from_normals(self, u: np.ndarray) -> np.ndarray:
        return u @ self._chol.T

    def latent_cov(self) -> np.ndarray:
        return self._corr

    def latent_mean(self) -> np.ndarray:
        return np.zeros(self.d)

    def to_data(self, g: np.ndarray) -> np.ndarray:
        from scipy.stats import norm

        u = norm.cdf(g)
        out = np.empty_like(u)
        for j in range(self.d):
            out[:, j] = np.interp(u[:, j], self._pp, self._sorted[:, j])
        return out


def make_sampler(rows: np.ndarray, kind: str):
    if kind == "gaussian_analytic":
        return GaussianSampler.fit(rows)
    if kind == "gaussian_copula_empirical":
        return EmpiricalCopulaSampler.fit(rows)
    raise ValidationError(f"unknown sampler kind {kind!r}")


class _PickFreeze:
    """Shared-draw pick-freeze machinery; common random numbers across subsets."""

    def __init__(self, h, sampler, d: int, n_samples: int, seed: int):
        if n_samples < 1000:
            raise ValidationError("pick-freeze needs at least 1000 samples")
        self.h = h
        self.sampler = sampler
        self.d = d
        rng = child_rng(seed, "pickfreeze")
        self._g = sampler.latent_from_normals(rng.standard_normal((n_samples, d)))
        self._innov = rng.standard_normal((n_samples, d))
        self._hw = np.asarray(h(sampler.to_data(self._g)), dtype=np.float64).ravel()
        self.var_h = float(np.var(self._hw, ddof=1))
        if self.var_h <= 0.0:
            raise ZeroOutputVariance("model output has zero variance under the sampler")
        self._mu = sampler.latent_mean()
        self._cov = sampler.latent_cov()

    def total_index(self, subset) -> float:
        """S^T(A), clamped to [0, 1]; exact at the lattice ends."""
        a = sorted(subset)
        if len(a) == 0:
            return 1.0
        if len(a) == self.d:
            return 0.0
        c = [j for j in range(self.d) if j not in a]
        cov = self._cov
        saa = cov[np.ix_(a, a)]
        sca = cov[np.ix_(c, a)]
        gain = np.linalg.solve(saa, sca.T).T          # Sigma_CA Sigma_AA^-1
        schur = cov[np.ix_(c, c)] - gain @ cov[np.ix_(a, c)]
        schur = 0.5 * (schur + schur.T)
        low = np.linalg.cholesky(schur + 1e-14 * np.eye(len(c)))
        g = self._g
        g_new = g.copy()
        mean_c = self._mu[c] + (g[:, a] - self._mu[a]) @ gain.T
        g_new[:, c] = mean_c + self._innov[:, c] @ low.T
        h_new = np.asarray(self.h(self.sampler.to_data(g_new)), dtype=np.float64).ravel()
        hw = self._hw
        m = 0.5 * (hw.mean() + h_new.mean())
        var_cond = float(np.mean(hw * h_new) - m * m)
        var_tot = float(0.5 * (np.mean(hw * hw) + np.mean(h_new * h_new)) - m * m)
        if var_tot <= 0.0:
            raise ZeroOutputVariance("degenerate pick-freeze variance")
        return float(np.clip(1.0 - var_cond / var_tot, 0.0, 1.0))

    def stderr(self) -> float:
        """Crude standard error of one index estimate, for report metadata."""
        return float(np.std(self._hw * self._hw) / (np.sqrt(self._hw.size) * self.var_h))


def total_sobol(h, sampler, subset, n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> float:
    """Total Sobol index of coalition ``subset`` for output h(W)."""
    return _PickFreeze(h, sampler, sampler.d, n_samples, seed).total_index(subset)


def pme_weights_and_deltas(st_by_mask: np.ndarray, d: int) -> np.ndarray:
    """Permutation sum of the proportional-marginal attribution.

    ``st_by_mask[m]`` holds S^T of the coalition encoded by bitmask m.
    Returns deltas in index units (they sum to ~1 before rescaling).
    """
    if d > MAX_PME_INPUTS:
        raise TooManyInputs(f"exact permutation enumeration is capped at d={MAX_PME_INPUTS}")
    perms = list(permutations(range(d)))
    weights = np.empty(len(perms))
    increments = np.zeros((len(perms), d))
    for p_idx, pi in enumerate(perms):
        mask = 0
        prev_st = 1.0  # S^T(empty set)
        log_l = 0.0
        for k, j in enumerate(pi):
            mask |= 1 << j
            st = st_by_mask[mask]
            log_l -= np.log(max(st, ST_FLOOR))
            increments[p_idx, j] = max(prev_st - st, 0.0)
            prev_st = st
        weights[p_idx] = log_l
    # normalize p(pi) = L(pi) / sum L in log space
    weights = np.exp(weights - weights.max())
    weights /= weights.sum()
    return increments.T @ weights


@dataclass(frozen=True)
class PMEReport:
    """Per-variable variance attribution with an optional model-error share."""

    variables: tuple
    delta: np.ndarray
    share_pct: np.ndarray
    model_error_share_pct: float
    total_variance: float
    output_variance: float
    n_samples: int
    seed: int
    sampler_kind: str
    mc_tol_pct: float
    floored: bool


def pme_indices(h, sampler, d: int, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                variables=None, theta_sq: float = 0.0) -> PMEReport:
    """Proportional-marginal attribution of Var(h(W)) across the d inputs.

    All 2^d total indices are estimated once with common random numbers and
    cached; the permutation sum is exact.  ``theta_sq`` adds a model-error
    share on top of the deterministic output variance.
    """
    if d > MAX_PME_INPUTS:
        raise TooManyInputs(f"exact permutation enumeration is capped at d={MAX_PME_INPUTS}")
    pf = _PickFreeze(h, sampler, d, n_samples, seed)
    st = np.empty(1 << d)
    for mask in range(1 << d):
        subset = [j for j in range(d) if mask >> j & 1]
        st[mask] = pf.total_index(subset)
    deltas = pme_weights_and_deltas(st, d)
    floored = bool(np.any(st[1:(1 << d) - 1] <= ST_FLOOR)) if d > 1 else False
    total = deltas.sum()
    if total <= 0.0:
        raise ZeroOutputVariance("all attribution increments vanished")
    delta = deltas / total * pf.var_h
    total_variance = pf.var_h + float(theta_sq)
    share = 100.0 * delta / total_variance
    if variables is None:
        variables = tuple(f"w{j + 1}" for j in range(d))
    return PMEReport(
        variables=tuple(variables),
        delta=delta,
        share_pct=share,
        model_error_share_pct=100.0 * float(theta_sq) / total_variance,
        total_variance=total_variance,
        output_variance=pf.var_h,
        n_samples=n_samples,
        seed=seed,
        sampler_kind=sampler.kind,
        mc_tol_pct=100.0 * pf.stderr(),
        floored=floored,
    )


def decompose_model(model: FittedModel, train: CalibrationDataset,
                    sampler_kind: str = "gaussian_copula_empirical",
                    n_samples: int = DEFAULT_SAMPLES, seed: int = 0) -> PMEReport:
    """Attribute a fitted model's prediction variance to its inputs and to
    the model error theta^2 (shares of Var(h) + theta^2)."""
    basis = model.basis
    alpha = list(basis.alpha)
    rows = np.concatenate([train.x, train.z[:, alpha]], axis=1)
    sampler = make_sampler(rows, sampler_kind)
    d_x = basis.d_x

    def h(w):
        x = w[:, :d_x]
        z = np.zeros((w.shape[0], train.d_z))
        z[:, alpha] = w[:, d_x:]
        return design_matrix(basis, x, z) @ model.beta

    names = tuple(train.x_names) + tuple(train.z_names[a] for a in alpha)
    return pme_indices(
        h, sampler, rows.shape[1], n_samples=n_samples, seed=seed,
        variables=names, theta_sq=model.theta ** 2,
    )
