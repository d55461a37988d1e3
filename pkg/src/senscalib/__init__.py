"""Interferent selection, sensitivity analysis and Bayesian inversion for
in-situ sensor calibration."""

__version__ = "0.1.0"

from .dataset import (
    CalibrationDataset,
    SplitSpec,
    SyntheticConfig,
    build_covariance,
    load_csv,
    simulate,
    split,
    synthetic_response,
)
from .basis import PolynomialBasis, evaluate, full_basis, partial_derivative
from .glr import FittedModel, GramCache, build_gram, fit, fit_from_gram, predict
from .uncertainty import (
    BootstrapEnsemble,
    VarianceReport,
    bootstrap_ensemble,
    f_moments,
    variance_objective,
)
from .selection import (
    CandidateRecord,
    ParetoEntry,
    SelectionConfig,
    SelectionResult,
    outer_bootstrap,
    reference_model,
    sweep,
    sweep_outputs,
)
from .pme import (
    EmpiricalCopulaSampler,
    GaussianSampler,
    PMEReport,
    decompose_model,
    pme_indices,
    total_sobol,
)
from .inversion import (
    ConditionalPrior,
    GridSpec,
    JointModel,
    PredictionMetrics,
    default_prior,
    estimate,
    evaluate_predictions,
    fit_prior,
    invert_dataset,
    joint_from_ensembles,
    posterior_moments,
)
from .resolution import ResolutionCurve, resolution_curve
from .estimators import ConcentrationEstimator, InterferentSelector

__all__ = [
    "CalibrationDataset",
    "SplitSpec",
    "SyntheticConfig",
    "build_covariance",
    "load_csv",
    "simulate",
    "split",
    "synthetic_response",
    "PolynomialBasis",
    "full_basis",
    "evaluate",
    "partial_derivative",
    "FittedModel",
    "GramCache",
    "fit",
    "predict",
    "build_gram",
    "fit_from_gram",
    "BootstrapEnsemble",
    "VarianceReport",
    "f_moments",
    "bootstrap_ensemble",
    "variance_objective",
    "SelectionConfig",
    "SelectionResult",
    "CandidateRecord",
    "ParetoEntry",
    "sweep",
    "sweep_outputs",
    "outer_bootstrap",
    "reference_model",
    "GaussianSampler",
    "EmpiricalCopulaSampler",
    "PMEReport",
    "total_sobol",
    "pme_indices",
    "decompose_model",
    "JointModel",
    "ConditionalPrior",
    "GridSpec",
    "PredictionMetrics",
    "joint_from_ensembles",
    "posterior_moments",
    "fit_prior",
    "default_prior",
    "estimate",
    "invert_dataset",
    "evaluate_predictions",
    "ResolutionCurve",
    "resolution_curve",
    "ConcentrationEstimator",
    "InterferentSelector",
    "__version__",
]
