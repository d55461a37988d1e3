"""Calibration data model, CSV ingestion, splitting and the synthetic benchmark.

A :class:`CalibrationDataset` holds n time-aligned rows of target
concentrations ``x``, measured interferents ``z`` and sensor outputs ``y``.
Datasets are immutable after construction and safe to share across threads.

The synthetic generator draws the seven variables (x, z1..z5, u) from a
centered Gaussian with a two-parameter covariance, pushes them through a
fixed non-linear response with cross effects, and optionally perturbs every
recorded value with relative Gaussian noise.  The latent variable u is never
exposed in the generated datasets.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._validate import as_float_matrix, check_in_range, freeze
from .exceptions import (
    EmptyDataset,
    MissingColumn,
    MissingTimeIndex,
    NonNumericCell,
    NotPositiveDefinite,
    ValidationError,
)
from .rng import child_rng

SPLIT_KINDS = ("random_half", "even_odd_days", "alternating_day_pairs", "ends_vs_middle")

# sign pattern of the benchmark covariance, one entry per variable
# (x, z1, z2, z3, z4, z5, u)
_COV_SIGNS = np.array([1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0])


@dataclass(frozen=True)
class CalibrationDataset:
    """n rows of targets ``x`` (n, d_x), interferents ``z`` (n, d_z) and
    outputs ``y`` (n, d_y), with optional monotone ``time_index`` in days."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()
    y_names: tuple = ()
    time_index: np.ndarray | None = None

    def __post_init__(self):
        x = as_float_matrix(self.x, "x", allow_empty_cols=True)
        z = as_float_matrix(self.z, "z", allow_empty_cols=True)
        y = as_float_matrix(self.y, "y")
        n = y.shape[0]
        if x.shape[0] != n or z.shape[0] != n:
            raise ValidationError("x, z and y must have the same number of rows")
        if n == 0:
            raise EmptyDataset("dataset has no rows")
        x_names = tuple(self.x_names) or tuple(f"x{i + 1}" for i in range(x.shape[1]))
        z_names = tuple(self.z_names) or tuple(f"z{i + 1}" for i in range(z.shape[1]))
        y_names = tuple(self.y_names) or tuple(f"y{i + 1}" for i in range(y.shape[1]))
        if len(x_names) != x.shape[1] or len(z_names) != z.shape[1] or len(y_names) != y.shape[1]:
            raise ValidationError("column label counts do not match matrix shapes")
        labels = x_names + z_names + y_names
        if len(set(labels)) != len(labels):
            raise ValidationError("column labels must be unique across roles")
        t = self.time_index
        if t is not None:
            t = np.asarray(t, dtype=np.float64).ravel()
            if t.shape[0] != n:
                raise ValidationError("time_index length does not match row count")
            if not np.all(np.isfinite(t)):
                raise ValidationError("time_index contains non-finite values")
            if np.any(np.diff(t) < 0):
                raise ValidationError("time_index must be non-decreasing")
            t = freeze(t)
        object.__setattr__(self, "x", freeze(x))
        object.__setattr__(self, "z", freeze(z))
        object.__setattr__(self, "y", freeze(y))
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "z_names", z_names)
        object.__setattr__(self, "y_names", y_names)
        object.__setattr__(self, "time_index", t)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[1]

    def take(self, rows) -> "CalibrationDataset":
        """Row resample as a new dataset; duplicates allowed, time dropped."""
        rows = np.asarray(rows, dtype=np.intp)
        return CalibrationDataset(
            x=self.x[rows],
            z=self.z[rows],
            y=self.y[rows],
            x_names=self.x_names,
            z_names=self.z_names,
            y_names=self.y_names,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split rule.  ``seed`` only matters for ``random_half``."""

    kind: str = "random_half"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ValidationError(f"unknown split kind {self.kind!r}; expected one of {SPLIT_KINDS}")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the simulated benchmark.

    ``sigma_mes`` is a relative noise level: every recorded variable is
    perturbed with Gaussian noise of standard deviation
    ``sigma_mes * (marginal std of that variable)``.  The marginal std is 1
    for the Gaussian block; for y it is measured on the clean draw.
    """

    n: int
    rho: float = 0.0
    rho_u: float = 0.0
    alpha_u: float = 0.0
    sigma_mes: float = 0.0
    seed: int = 0

    def __post_init__(self):
        check_in_range(self.n, "n", lo=1)
        check_in_range(self.rho, "rho", lo=0.0, hi=1.0, hi_open=True)
        check_in_range(self.rho_u, "rho_u", lo=0.0, hi=1.0, hi_open=True)
        check_in_range(self.alpha_u, "alpha_u", lo=0.0)
        check_in_range(self.sigma_mes, "sigma_mes", lo=0.0)
        cov = build_covariance(self.rho, self.rho_u)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                f"covariance for rho={self.rho}, rho_u={self.rho_u} is not positive definite"
            ) from None


def build_covariance(rho: float, rho_u: float) -> np.ndarray:
    """7x7 covariance of (x, z1..z5, u).

    Unit diagonal; entry (i, j) = s_i * s_j * rho inside the measured block
    and s_i * rho_u against u, with sign pattern s = (+, +, -, +, +, -, +).
    The sign pattern extends to the u row: a uniformly positive u column
    would make the matrix indefinite for the strongly correlated settings
    this generator must support.
    """
    check_in_range(rho, "rho", lo=0.0, hi=1.0, hi_open=True)
    check_in_range(rho_u, "rho_u", lo=0.0, hi=1.0, hi_open=True)
    cov = np.outer(_COV_SIGNS, _COV_SIGNS)
    cov[:6, :6] *= rho
    cov[:6, 6] *= rho_u
    cov[6, :6] *= rho_u
    np.fill_diagonal(cov, 1.0)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            f"covariance for rho={rho}, rho_u={rho_u} is not positive definite"
        ) from None
    return cov


def synthetic_response(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Deterministic part of the benchmark sensor response.

    ``x`` is (n,) or (n, 1) and ``z`` is (n, 5).  The variables z4 and z5
    do not enter the response; x and z1 dominate, z2 is slightly weaker and
    z3 weaker still.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    z = np.asarray(z, dtype=np.float64)
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    return (
        1.5 * np.log(x + 4.0)
        + np.arctan(z1 / 2.0) * (1.0 + 0.05 * z1)
        + np.arctan(z2 / 2.0) * (1.0 + 0.05 * z2)
        + 0.1 * np.arctan(z3 / 2.0) * (1.0 + 0.05 * z3)
        + 3.0 * np.cos((z1 + z3) / 6.0)
        + 2.0 * np.cos((x + z2) / 6.0)
    )


def _draw_inputs(cov: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Joint Gaussian draw with rejection of rows where x <= -3.9."""
    chol = np.linalg.cholesky(cov)
    w = rng.standard_normal((n, 7)) @ chol.T
    bad = w[:, 0] <= -3.9
    while np.any(bad):
        k = int(bad.sum())
        w[bad] = rng.standard_normal((k, 7)) @ chol.T
        bad = w[:, 0] <= -3.9
    return w


def simulate(config: SyntheticConfig) -> tuple[CalibrationDataset, CalibrationDataset]:
    """Generate one (clean, noisy) dataset pair from the benchmark model.

    Returns the noise-free dataset and its perturbed twin; both expose only
    (x, z1..z5, y).  With ``sigma_mes == 0`` the two are identical.
    """
    cov = build_covariance(config.rho, config.rho_u)
    rng = child_rng(config.seed, "simulate")
    w = _draw_inputs(cov, config.n, rng)
    x = w[:, :1]
    z = w[:, 1:6]
    u = w[:, 6]
    y = (synthetic_response(x, z) + config.alpha_u * u).reshape(-1, 1)

    names = dict(x_names=("x",), z_names=("z1", "z2", "z3", "z4", "z5"), y_names=("y",))
    clean = CalibrationDataset(x=x, z=z, y=y, **names)
    if config.sigma_mes == 0.0:
        return clean, clean

    noise_rng = child_rng(config.seed, "noise")
    scale = np.concatenate([np.ones(6), [float(np.std(y))]])
    eps = noise_rng.standard_normal((config.n, 7)) * (config.sigma_mes * scale)
    noisy = CalibrationDataset(
        x=x + eps[:, :1], z=z + eps[:, 1:6], y=y + eps[:, 6:7], **names
    )
    return clean, noisy


def load_csv(path, role_map: dict) -> CalibrationDataset:
    """Load a calibration dataset from a headed CSV file.

    ``role_map`` maps column labels to one of ``x``, ``z``, ``y``, ``time``
    or ``ignore``.  Columns are grouped by role in role-map order.  Every
    non-ignored column must exist, and every cell in it must parse as a
    finite real ('.' decimal separator).  Lines starting with '#' are
    skipped, which lets re-ingested files carry a provenance comment.
    """
    roles = {"x": [], "z": [], "y": [], "time": []}
    for label, role in role_map.items():
        if role == "ignore":
            continue
        if role not in roles:
            raise ValidationError(f"unknown role {role!r} for column {label!r}")
        roles[role].append(label)
    if len(roles["time"]) > 1:
        raise ValidationError("at most one column may have the 'time' role")
    if not roles["y"]:
        raise ValidationError("role_map assigns no 'y' column")

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        col_of = {name: i for i, name in enumerate(header)}
        for label in (lbl for lst in roles.values() for lbl in lst):
            if label not in col_of:
                raise MissingColumn(f"column {label!r} not found in {path}")

        wanted = [(label, col_of[label]) for lst in roles.values() for label in lst]
        data = {label: [] for label, _ in wanted}
        for r, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            for label, idx in wanted:
                if idx >= len(row):
                    raise NonNumericCell(r, label, "<missing>")
                cell = row[idx].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise NonNumericCell(r, label, cell) from None
                if not math.isfinite(value):
                    raise NonNumericCell(r, label, cell)
                data[label].append(value)

    n = len(data[roles["y"][0]])
    if n == 0:
        raise EmptyDataset(f"{path}: no data rows")

    def stack(labels):
        if not labels:
            return np.empty((n, 0))
        return np.column_stack([np.asarray(data[label]) for label in labels])

    time_index = None
    if roles["time"]:
        time_index = np.asarray(data[roles["time"][0]])
    return CalibrationDataset(
        x=stack(roles["x"]),
        z=stack(roles["z"]),
        y=stack(roles["y"]),
        x_names=tuple(roles["x"]),
        z_names=tuple(roles["z"]),
        y_names=tuple(roles["y"]),
        time_index=time_index,
    )


def _day_numbers(ds: CalibrationDataset) -> np.ndarray:
    if ds.time_index is None:
        raise MissingTimeIndex("this split kind requires a time index")
    return np.floor(ds.time_index).astype(np.int64)


def split(ds: CalibrationDataset, spec: SplitSpec) -> tuple[CalibrationDataset, CalibrationDataset]:
    """Partition the rows into (train, test) according to ``spec``.

    random_half: uniform permutation, first ceil(n/2) rows to train.
    even_odd_days: train on even day numbers, test on odd ones.
    alternating_day_pairs: train on days 1,2,5,6,9,10,...
    ends_vs_middle: train on the first 10 and last 10 distinct days.
    """
    n = ds.n
    if spec.kind == "random_half":
        perm = child_rng(spec.seed, "split").permutation(n)
        cut = (n + 1) // 2
        train_rows, test_rows = np.sort(perm[:cut]), np.sort(perm[cut:])
    else:
        days = _day_numbers(ds)
        if spec.kind == "even_odd_days":
            in_train = days % 2 == 0
        elif spec.kind == "alternating_day_pairs":
            in_train = ((days - 1) // 2) % 2 == 0
        else:  # ends_vs_middle
            uniq = np.unique(days)
            train_days = set(uniq[:10]) | set(uniq[-10:])
            in_train = np.isin(days, sorted(train_days))
        train_rows = np.nonzero(in_train)[0]
        test_rows = np.nonzero(~in_train)[0]
    if train_rows.size == 0 or test_rows.size == 0:
        raise ValidationError(f"split {spec.kind!r} produced an empty side")

    def subset(rows):
        return CalibrationDataset(
            x=ds.x[rows],
            z=ds.z[rows],
            y=ds.y[rows],
            x_names=ds.x_names,
            z_names=ds.z_names,
            y_names=ds.y_names,
            time_index=None if ds.time_index is None else ds.time_index[rows],
        )

    return subset(train_rows), subset(test_rows)
