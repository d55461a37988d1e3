"""Bayesian estimation of target concentrations from sensor outputs.

Given the selected model per output and its bootstrap coefficient moments,
the sensor reading at a new time is a Gaussian around m(x) = F(x, z) E[beta]
with covariance C(x) combining model error, coefficient uncertainty and the
linearized effect of measurement noise on the targets.  The posterior over
x is evaluated in closed form on a grid (targets of dimension 1 or 2),
multiplied by a conditional-KDE prior fitted on the calibration data, and
summarized by the MAP point and central 95% credibility intervals.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import design_derivative, design_matrix
from .dataset import CalibrationDataset
from .exceptions import (
    DegeneratePrior,
    GridTooCoarse,
    SingularCovariance,
    ValidationError,
)
from .glr import FittedModel

JITTER = 1e-12


@dataclass(frozen=True)
class JointModel:
    """Per-output fitted models with their joint bootstrap moments.

    ``beta_mean`` and ``beta_cov`` cover the concatenated coefficient
    vectors of all outputs; the cross-output blocks are meaningful because
    every output was refit on the same bootstrap resamples.  ``sigma_x``
    holds the known measurement-error standard deviation of each target.
    """

    models: tuple
    beta_mean: np.ndarray
    beta_cov: np.ndarray
    theta_sq: np.ndarray
    sigma_x: np.ndarray

    @property
    def d_y(self) -> int:
        return len(self.models)

    @property
    def d_x(self) -> int:
        return self.models[0].basis.d_x

    @property
    def slices(self) -> tuple:
        out, start = [], 0
        for m in self.models:
            out.append(slice(start, start + m.k))
            start += m.k
        return tuple(out)

    @property
    def z_union(self) -> tuple:
        cols = set()
        for m in self.models:
            cols.update(m.basis.alpha)
        return tuple(sorted(cols))


def joint_from_ensembles(models, ensembles, sigma_x=None) -> JointModel:
    """Assemble a JointModel from per-output selection ensembles.

    The ensembles must come from the same bootstrap resamples (checked via
    their recorded seeds) so that the stacked covariance is a genuine joint
    covariance.
    """
    models = tuple(models)
    ensembles = tuple(ensembles)
    if len(models) != len(ensembles) or not models:
        raise ValidationError("need one ensemble per model")
    seeds = {e.resample_seeds for e in ensembles}
    if len(seeds) != 1:
        raise ValidationError("ensembles were not built on shared bootstrap resamples")
    d_x = models[0].basis.d_x
    if any(m.basis.d_x != d_x for m in models):
        raise ValidationError("models disagree on the number of targets")
    betas = np.concatenate([e.betas for e in ensembles], axis=1)
    mean = betas.mean(axis=0)
    dev = betas - mean
    cov = (dev.T @ dev) / (betas.shape[0] - 1)
    if sigma_x is None:
        sigma_x = np.zeros(d_x)
    sigma_x = np.broadcast_to(np.asarray(sigma_x, dtype=np.float64).ravel(), (d_x,)).copy()
    return JointModel(
        models=models,
        beta_mean=mean,
        beta_cov=cov,
        theta_sq=np.array([e.mean_theta_sq for e in ensembles]),
        sigma_x=sigma_x,
    )


def posterior_moments(jm: JointModel, x_row, z_row):
    """Mean m(x) and covariance C(x) of the sensor outputs at one candidate x."""
    mean, cov = _moments_on_grid(jm, np.atleast_2d(np.asarray(x_row, dtype=np.float64)),
                                 np.asarray(z_row, dtype=np.float64))
    return mean[0], cov[0]


def _moments_on_grid(jm: JointModel, xg: np.ndarray, z_row: np.ndarray):
    """Vectorized m(x) (G, d_y) and C(x) (G, d_y, d_y) over candidate targets."""
    g = xg.shape[0]
    d_y, d_x = jm.d_y, jm.d_x
    z_tile = np.broadcast_to(z_row, (g, z_row.size))
    feats = []
    derivs = []
    for m in jm.models:
        feats.append(design_matrix(m.basis, xg, z_tile))
        derivs.append([design_derivative(m.basis, j, xg, z_tile) for j in range(d_x)])

    mean = np.empty((g, d_y))
    for i, (m, sl) in enumerate(zip(jm.models, jm.slices)):
        mean[:, i] = feats[i] @ jm.beta_mean[sl]

    cov = np.zeros((g, d_y, d_y))
    idx = np.arange(d_y)
    cov[:, idx, idx] = jm.theta_sq
    second_moment = jm.beta_cov + np.outer(jm.beta_mean, jm.beta_mean)
    slices = jm.slices
    for i in range(d_y):
        for l in range(i, d_y):
            block = jm.beta_cov[slices[i], slices[l]]
            term = np.einsum("gk,kl,gl->g", feats[i], block, feats[l])
            for j in range(d_x):
                if jm.sigma_x[j] == 0.0:
                    continue
                mblock = second_moment[slices[i], slices[l]]
                term = term + jm.sigma_x[j] ** 2 * np.einsum(
                    "gk,kl,gl->g", derivs[i][j], mblock, derivs[l][j]
                )
            cov[:, i, l] += term
            if l != i:
                cov[:, l, i] += term
    cov[:, idx, idx] += JITTER
    return mean, cov


@dataclass(frozen=True)
class ConditionalPrior:
    """Prior density of the targets given the measured interferents.

    ``conditional_kde`` evaluates the ratio of a joint Gaussian-product KDE
    over (x, z_selected) to its z-marginal; ``flat`` is constant.
    """

    kind: str
    d_x: int
    z_cols: tuple = ()
    data: np.ndarray | None = None
    bandwidths: np.ndarray | None = None

    def log_conditional(self, xg: np.ndarray, z_row: np.ndarray) -> np.ndarray:
        if self.kind == "flat":
            return np.zeros(xg.shape[0])
        z_sel = np.asarray(z_row, dtype=np.float64)[list(self.z_cols)]
        hx = self.bandwidths[: self.d_x]
        hz = self.bandwidths[self.d_x:]
        # squared z-distance of every training point is shared by all grid points
        dz2 = (((z_sel - self.data[:, self.d_x:]) / hz) ** 2).sum(axis=1) if hz.size else 0.0
        dx2 = ((xg[:, None, :] - self.data[None, :, : self.d_x]) / hx) ** 2
        expo = -0.5 * (dx2.sum(axis=2) + dz2)
        top = expo.max()
        log_joint = np.log(np.exp(expo - top).sum(axis=1)) + top
        if hz.size:
            ztop = (-0.5 * dz2).max()
            log_marg = np.log(np.exp(-0.5 * dz2 - ztop).sum()) + ztop
        else:
            log_marg = np.log(float(self.data.shape[0]))
        # kernel normalization in the x-dimensions does not cancel in the ratio
        return log_joint - log_marg - np.log(hx).sum() - 0.5 * self.d_x * np.log(2 * np.pi)


def fit_prior(train: CalibrationDataset, z_cols=(), kind: str = "conditional_kde") -> ConditionalPrior:
    """Fit the conditional prior of x given the selected z columns.

    Uses Gaussian product kernels with per-dimension Silverman bandwidths
    h_d = sigma_d * ((d + 2) * n / 4)^(-1 / (d + 4)).
    """
    if kind == "flat":
        return ConditionalPrior(kind="flat", d_x=train.d_x)
    if kind != "conditional_kde":
        raise ValidationError(f"unknown prior kind {kind!r}")
    if train.n < 10:
        raise ValidationError("conditional KDE prior needs at least 10 rows")
    z_cols = tuple(sorted(int(c) for c in z_cols))
    data = np.concatenate([train.x, train.z[:, list(z_cols)]], axis=1)
    d = data.shape[1]
    sigma = data.std(axis=0, ddof=1)
    if np.any(sigma <= 0.0):
        raise DegeneratePrior("a prior dimension is empirically constant")
    factor = ((d + 2.0) * train.n / 4.0) ** (-1.0 / (d + 4.0))
    return ConditionalPrior(
        kind=kind,
        d_x=train.d_x,
        z_cols=z_cols,
        data=data,
        bandwidths=sigma * factor,
    )


def default_prior(train: CalibrationDataset, z_cols, kind: str = "conditional_kde") -> ConditionalPrior:
    """Pipeline rule for the prior of an inversion run.

    The conditional KDE exists to transfer information from the measured
    interferents; a model that selected none (the simple-model baseline)
    gets the uninformative flat prior instead of a marginal-KDE shrinkage.
    """
    if kind == "conditional_kde" and not tuple(z_cols):
        return ConditionalPrior(kind="flat", d_x=train.d_x)
    return fit_prior(train, z_cols, kind)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular evaluation grid for the posterior (d_x <= 2)."""

    lo: np.ndarray
    hi: np.ndarray
    points: np.ndarray

    @classmethod
    def from_train(cls, train: CalibrationDataset, extend: float = 0.5, points: int = 400):
        lo = train.x.min(axis=0)
        hi = train.x.max(axis=0)
        span = hi - lo
        return cls(
            lo=lo - extend * span,
            hi=hi + extend * span,
            points=np.full(train.d_x, points, dtype=np.intp),
        )

    def axes(self) -> tuple:
        return tuple(
            np.linspace(self.lo[j], self.hi[j], int(self.points[j]))
            for j in range(self.lo.size)
        )


@dataclass(frozen=True)
class PosteriorGrid:
    """Normalized posterior density tabulated on the grid."""

    axes: tuple
    log_density: np.ndarray
    density: np.ndarray
    log_norm: float

    def marginal(self, j: int) -> np.ndarray:
        dens = self.density
        if dens.ndim == 1:
            return dens
        other = 1 - j
        return np.trapezoid(dens, self.axes[other], axis=other)


@dataclass(frozen=True)
class InversionEstimate:
    grid: PosteriorGrid
    map_x: np.ndarray
    intervals: np.ndarray        # (d_x, 2)
    boundary_mode: bool = False


def _log_gaussian(y_row: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """log N(y; m(x), C(x)) per grid point, via stacked Cholesky."""
    try:
        low = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"output covariance not positive definite: {exc}") from exc
    resid = y_row - mean
    sol = np.linalg.solve(low, resid[..., None])[..., 0]
    maha = (sol ** 2).sum(axis=-1)
    logdet = 2.0 * np.log(np.einsum("...ii->...i", low)).sum(axis=-1)
    return -0.5 * (maha + logdet)


def _refine_peak(axis: np.ndarray, logd: np.ndarray, i: int) -> float:
    """Quadratic interpolation through the argmax cell and its neighbors."""
    if i == 0 or i == axis.size - 1:
        return float(axis[i])
    y0, y1, y2 = logd[i - 1], logd[i], logd[i + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom >= 0.0:
        return float(axis[i])
    shift = 0.5 * (y0 - y2) / denom
    step = axis[i + 1] - axis[i]
    return float(axis[i] + np.clip(shift, -1.0, 1.0) * step)


def _interval_from_marginal(axis: np.ndarray, marg: np.ndarray, level: float = 0.95):
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (marg[1:] + marg[:-1]) * np.diff(axis))])
    total = cdf[-1]
    if total <= 0.0:
        raise SingularCovariance("posterior marginal integrated to zero")
    cdf /= total
    lo_q, hi_q = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    return float(np.interp(lo_q, cdf, axis)), float(np.interp(hi_q, cdf, axis))


def estimate(jm: JointModel, prior: ConditionalPrior, z_row, y_row,
             grid: GridSpec, level: float = 0.95) -> InversionEstimate:
    """Posterior grid, MAP estimate and credibility intervals for one
    observation (z_row, y_row)."""
    d_x = jm.d_x
    if d_x > 2:
        raise ValidationError("grid inversion supports at most 2 target dimensions")
    z_row = np.asarray(z_row, dtype=np.float64).ravel()
    y_row = np.asarray(y_row, dtype=np.float64).ravel()
    axes = grid.axes()
    if d_x == 1:
        xg = axes[0][:, None]
        shape = (axes[0].size,)
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        xg = np.column_stack([m.ravel() for m in mesh])
        shape = mesh[0].shape

    mean, cov = _moments_on_grid(jm, xg, z_row)
    log_post = _log_gaussian(y_row, mean, cov) + prior.log_conditional(xg, z_row)
    log_post = log_post.reshape(shape)

    top = log_post.max()
    dens = np.exp(log_post - top)
    if d_x == 1:
        norm = np.trapezoid(dens, axes[0])
    else:
        norm = np.trapezoid(np.trapezoid(dens, axes[1], axis=1), axes[0])
    if norm <= 0.0 or not np.isfinite(norm):
        raise SingularCovariance("posterior density is not normalizable on the grid")
    dens = dens / norm
    pg = PosteriorGrid(axes=axes, log_density=log_post, density=dens,
                       log_norm=float(top + np.log(norm)))

    peak = np.unravel_index(int(np.argmax(log_post)), shape)
    boundary = any(i == 0 or i == axes[j].size - 1 for j, i in enumerate(peak))
    if boundary:
        warnings.warn("posterior mode on the grid boundary; widen the grid", GridTooCoarse)
    map_x = np.empty(d_x)
    for j in range(d_x):
        if d_x == 1:
            profile = log_post
        else:
            profile = log_post[:, peak[1]] if j == 0 else log_post[peak[0], :]
        map_x[j] = _refine_peak(axes[j], profile, peak[j])

    intervals = np.empty((d_x, 2))
    for j in range(d_x):
        intervals[j] = _interval_from_marginal(axes[j], pg.marginal(j), level)
    return InversionEstimate(grid=pg, map_x=map_x, intervals=intervals, boundary_mode=boundary)


@dataclass(frozen=True)
class PredictionMetrics:
    """Per-target-component inversion quality indicators."""

    r2: np.ndarray
    mae: np.ndarray
    interval_length_mean: np.ndarray
    coverage_pct: np.ndarray


def evaluate_predictions(x_hat: np.ndarray, intervals: np.ndarray, truth: np.ndarray) -> PredictionMetrics:
    """R^2, MAE, mean credibility-interval length and coverage per component."""
    x_hat = np.atleast_2d(np.asarray(x_hat, dtype=np.float64))
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    intervals = np.asarray(intervals, dtype=np.float64)
    if truth.shape[0] < 2:
        raise ValidationError("need at least 2 test rows to compute metrics")
    err = x_hat - truth
    sse = (err ** 2).sum(axis=0)
    sst = ((truth - truth.mean(axis=0)) ** 2).sum(axis=0)
    r2 = 1.0 - sse / sst
    mae = np.abs(err).mean(axis=0)
    lengths = (intervals[..., 1] - intervals[..., 0]).mean(axis=0)
    inside = (truth >= intervals[..., 0]) & (truth <= intervals[..., 1])
    coverage = 100.0 * inside.mean(axis=0)
    return PredictionMetrics(
        r2=np.atleast_1d(r2),
        mae=np.atleast_1d(mae),
        interval_length_mean=np.atleast_1d(lengths),
        coverage_pct=np.atleast_1d(coverage),
    )


@dataclass
class InversionResult:
    """Batch inversion over a test dataset."""

    x_map: np.ndarray           # (n, d_x)
    intervals: np.ndarray       # (n, d_x, 2)
    metrics: PredictionMetrics | None = None
    boundary_count: int = 0
    estimates: list = field(default_factory=list)


def invert_dataset(jm: JointModel, prior: ConditionalPrior, test: CalibrationDataset,
                   grid: GridSpec, truth: np.ndarray | None = None,
                   keep_grids: bool = False) -> InversionResult:
    """Invert every row of ``test``; compare against ``truth`` when given.

    ``truth`` defaults to the test dataset's own x columns (sensible for
    synthetic benchmarks where the clean targets are known).
    """
    n = test.n
    x_map = np.empty((n, jm.d_x))
    intervals = np.empty((n, jm.d_x, 2))
    boundary = 0
    grids = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GridTooCoarse)
        for i in range(n):
            est = estimate(jm, prior, test.z[i], test.y[i], grid)
            x_map[i] = est.map_x
            intervals[i] = est.intervals
            boundary += bool(est.boundary_mode)
            if keep_grids:
                grids.append(est)
    if truth is None:
        truth = test.x
    metrics = evaluate_predictions(x_map, intervals, truth) if truth.size else None
    return InversionResult(
        x_map=x_map, intervals=intervals, metrics=metrics,
        boundary_count=boundary, estimates=grids,
    )
