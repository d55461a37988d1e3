"""Exception and warning types raised across the library.

Validation errors signal bad inputs or configuration (CLI exit code 2),
numerical errors signal a failed computation (CLI exit code 3).
"""


class CalibrationError(Exception):
    """Base class for all library errors."""


class ValidationError(CalibrationError):
    """Invalid input data or configuration."""


class NumericalError(CalibrationError):
    """A numerical procedure failed beyond recovery."""


# -- dataset ----------------------------------------------------------------

class MissingColumn(ValidationError):
    pass


class NonNumericCell(ValidationError):
    def __init__(self, row: int, col: str, value: str = ""):
        self.row = row
        self.col = col
        super().__init__(f"non-numeric cell at data row {row}, column {col!r}: {value!r}")


class EmptyDataset(ValidationError):
    pass


class MissingTimeIndex(ValidationError):
    pass


class NotPositiveDefinite(NumericalError):
    pass


# -- basis / regression -----------------------------------------------------

class DegenerateTerm(ValidationError):
    """A non-constant feature has zero empirical variance on the training set."""


class Underdetermined(ValidationError):
    """Fewer training rows than model terms."""


class NumericalFailure(NumericalError):
    pass


class SingularSubsystem(NumericalError):
    """A Gram subsystem could not be solved even with the pseudo-inverse."""


class AllReplicatesSingular(NumericalError):
    """Every bootstrap replicate needed the pseudo-inverse fallback."""


class NonpositiveVariance(NumericalError):
    """The variance objective collapsed to zero; BIC is undefined."""


class TooManyInterferents(ValidationError):
    """The exhaustive subset sweep is capped at 2**15 combinations."""


# -- pme / inversion / resolution -------------------------------------------

class TooManyInputs(ValidationError):
    """Exact permutation enumeration is capped at 9 inputs."""


class ZeroOutputVariance(NumericalError):
    pass


class DegeneratePrior(ValidationError):
    pass


class SingularCovariance(NumericalError):
    pass


class EmptyInput(ValidationError):
    pass


# -- warnings ----------------------------------------------------------------

class GridTooCoarse(UserWarning):
    """The posterior mode landed on the grid boundary."""


class ZeroModelError(UserWarning):
    """resolution threshold is trivially crossed because theta-hat is zero."""


class ReliabilityWarning(UserWarning):
    """More than 10% of bootstrap replicates needed the pseudo-inverse fallback."""
