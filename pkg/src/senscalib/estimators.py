"""scikit-learn style estimators wrapping the selection and inversion cores.

Both estimators consume plain matrices so they compose with pipelines and
model-selection utilities: ``X`` stacks the target columns first and the
candidate interferent columns after them (``n_targets`` splits the two),
``Y`` holds the sensor outputs.

``InterferentSelector`` behaves like a feature selector: ``fit`` runs the
subset sweep per output, ``get_support``/``transform`` expose the selected
columns, ``predict`` evaluates the chosen forward models.

``ConcentrationEstimator`` is the inverse regressor: ``fit`` calibrates the
forward models plus the conditional prior, ``predict`` maps stacked
``[z, y]`` observations back to target estimates (with ``return_interval``
for credibility bounds).
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validate import as_float_matrix, check_same_rows
from .dataset import CalibrationDataset
from .exceptions import ValidationError
from .glr import predict as glr_predict
from .inversion import GridSpec, default_prior, invert_dataset, joint_from_ensembles
from .selection import CandidateRecord, SelectionConfig, _Engine, outer_bootstrap, sweep_outputs


def _dataset_from_arrays(X, Y, n_targets: int) -> CalibrationDataset:
    X = as_float_matrix(X, "X")
    Y = as_float_matrix(Y, "y")
    check_same_rows(X.shape[0], Y, "y")
    if not 0 <= n_targets <= X.shape[1]:
        raise ValidationError(f"n_targets={n_targets} out of range for {X.shape[1]} columns")
    return CalibrationDataset(x=X[:, :n_targets], z=X[:, n_targets:], y=Y)


class InterferentSelector(BaseEstimator):
    """Select the interferent columns worth keeping for calibration.

    Parameters
    ----------
    n_targets : int, default=1
        Leading columns of X treated as targets, included in every model.
    degree : int, default=3
        Total polynomial degree of the candidate bases.
    inner_bootstrap : int, default=200
        Bootstrap replicates behind the variance objective.
    outer_replicates : int, default=0
        When positive, rerun the sweep on that many resampled datasets to
        estimate per-variable selection frequencies.
    always_include : tuple of str, default=()
        Candidate-column labels (``"z1"``, ...) forced into every model.
    seed : int, default=0
    threads : int, default=1

    Attributes
    ----------
    results_ : list of SelectionResult, one per output column.
    support_ : bool array over the candidate columns (union across outputs).
    frequencies_ : (d_y, n_candidates) selection percentages.
    """

    def __init__(self, n_targets=1, degree=3, inner_bootstrap=200,
                 outer_replicates=0, always_include=(), seed=0, threads=1):
        self.n_targets = n_targets
        self.degree = degree
        self.inner_bootstrap = inner_bootstrap
        self.outer_replicates = outer_replicates
        self.always_include = always_include
        self.seed = seed
        self.threads = threads

    def _config(self):
        return SelectionConfig(
            inner_b=self.inner_bootstrap,
            seed=self.seed,
            always_include=tuple(self.always_include),
            threads=self.threads,
        )

    def fit(self, X, y):
        ds = _dataset_from_arrays(X, y, self.n_targets)
        config = self._config()
        if self.outer_replicates:
            self.results_ = [
                outer_bootstrap(ds, t, self.degree, self.outer_replicates, config)
                for t in range(ds.d_y)
            ]
        else:
            self.results_ = sweep_outputs(ds, self.degree, config)
        self.n_features_in_ = X.shape[1] if hasattr(X, "shape") else np.asarray(X).shape[1]
        n_cand = ds.d_z
        support = np.zeros(n_cand, dtype=bool)
        freqs = np.zeros((ds.d_y, n_cand))
        for t, res in enumerate(self.results_):
            for z in res.chosen.alpha:
                support[z] = True
            for z in range(n_cand):
                freqs[t, z] = res.frequency_pct[ds.z_names[z]]
        self.support_ = support
        self.frequencies_ = freqs
        self._dataset = ds
        return self

    def get_support(self, indices: bool = False):
        check_is_fitted(self, "support_")
        if indices:
            return np.nonzero(self.support_)[0]
        return self.support_

    def transform(self, X):
        """Keep the target columns plus the selected candidate columns."""
        check_is_fitted(self, "support_")
        X = as_float_matrix(X, "X")
        keep = np.concatenate([
            np.arange(self.n_targets),
            self.n_targets + np.nonzero(self.support_)[0],
        ])
        return X[:, keep]

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)

    def predict(self, X):
        """Forward predictions of every output from the chosen models."""
        check_is_fitted(self, "results_")
        X = as_float_matrix(X, "X")
        x, z = X[:, : self.n_targets], X[:, self.n_targets:]
        cols = [glr_predict(res.model, x, z) for res in self.results_]
        out = np.column_stack(cols)
        return out[:, 0] if out.shape[1] == 1 else out


class ConcentrationEstimator(BaseEstimator, RegressorMixin):
    """Estimate target concentrations from sensor outputs and interferents.

    ``fit(X, Y)`` calibrates one model per output column of Y (``X`` lays
    out targets first, candidates after).  ``predict(Zy)`` consumes stacked
    ``[z_candidates, y_outputs]`` rows and returns the MAP estimate of the
    targets; ``score`` is the usual R^2 against known targets.

    ``sigma_x`` is the known measurement-error standard deviation of each
    target (scalar or per-target); the prior is a conditional KDE on the
    calibration data unless ``prior="flat"``.
    """

    def __init__(self, n_targets=1, degree=3, inner_bootstrap=200, seed=0,
                 sigma_x=0.0, prior="conditional_kde", grid_points=400,
                 grid_extend=0.5, alpha=None, threads=1):
        self.n_targets = n_targets
        self.degree = degree
        self.inner_bootstrap = inner_bootstrap
        self.seed = seed
        self.sigma_x = sigma_x
        self.prior = prior
        self.grid_points = grid_points
        self.grid_extend = grid_extend
        self.alpha = alpha
        self.threads = threads

    def fit(self, X, y):
        ds = _dataset_from_arrays(X, y, self.n_targets)
        config = SelectionConfig(
            inner_b=self.inner_bootstrap, seed=self.seed, threads=self.threads,
        )
        if self.alpha is not None:
            # fixed variable subset: skip selection, keep the full basis on it
            engine = _Engine(ds, self.degree, config)
            alpha = tuple(sorted(self.alpha))
            idx = tuple(engine.term_columns(alpha).tolist())
            models, ensembles = [], []
            for t in range(ds.d_y):
                model, ensemble = engine.finalize(
                    t, CandidateRecord(alpha=alpha, terms=idx, report=None)
                )
                models.append(model)
                ensembles.append(ensemble)
        else:
            selections = sweep_outputs(ds, self.degree, config)
            models = [s.model for s in selections]
            ensembles = [s.ensemble for s in selections]
            self.selections_ = selections
        sigma = np.broadcast_to(
            np.asarray(self.sigma_x, dtype=np.float64).ravel(), (ds.d_x,)
        ).copy()
        self.joint_ = joint_from_ensembles(models, ensembles, sigma)
        self.prior_ = default_prior(ds, self.joint_.z_union, kind=self.prior)
        self.grid_ = GridSpec.from_train(ds, self.grid_extend, self.grid_points)
        self.models_ = models
        self._train = ds
        self.n_features_in_ = as_float_matrix(X, "X").shape[1]
        return self

    def _split_zy(self, zy):
        zy = as_float_matrix(zy, "Zy")
        d_z = self._train.d_z
        d_y = self._train.d_y
        if zy.shape[1] != d_z + d_y:
            raise ValidationError(
                f"expected {d_z} interferent + {d_y} output columns, got {zy.shape[1]}"
            )
        return zy[:, :d_z], zy[:, d_z:]

    def predict(self, X, return_interval: bool = False):
        check_is_fitted(self, "joint_")
        z, y = self._split_zy(X)
        test = CalibrationDataset(
            x=np.zeros((z.shape[0], self._train.d_x)),
            z=z,
            y=y,
            x_names=self._train.x_names,
            z_names=self._train.z_names,
            y_names=self._train.y_names,
        )
        res = invert_dataset(self.joint_, self.prior_, test, self.grid_, truth=np.empty(0))
        x_map = res.x_map[:, 0] if self._train.d_x == 1 else res.x_map
        if return_interval:
            return x_map, res.intervals
        return x_map
