"""Exception taxonomy for the LAGO engine.

Validation problems (bad shapes, impossible configs) raise plain ValueError;
the classes here mark *numerical* conditions a caller may want to catch and
handle (fall through to another algorithm branch, count a failed replicate,
map to a CLI exit code).
"""


class LagoError(Exception):
    """Base class for all numerical/stateful failures raised by this package."""


class SeparationError(LagoError):
    """Logistic fit diverged: some coefficient walked past the compactness cap."""


class RankDeficientError(LagoError):
    """Design matrix has linearly dependent columns; coefficients not identifiable."""


class NonFiniteError(LagoError):
    """A non-finite value appeared in the data or during iteration."""


class InfeasibleError(LagoError):
    """The constrained problem has no solution inside the component bounds."""


class NoThresholdError(LagoError):
    """No outcome level inside the feasible range satisfies the power constraint."""


class OutOfOrderStageError(LagoError):
    """Stage records must be ingested contiguously, starting at stage 1."""


class DegenerateVarianceError(LagoError):
    """A variance estimate needed in a test denominator is zero."""


class SingularCovarianceError(LagoError):
    """The coefficient covariance (sub)matrix cannot be inverted."""
