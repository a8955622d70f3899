"""Exception hierarchy shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class InsufficientEnsembleError(ToolkitError):
    """Ensemble too small for the requested statistic (N < 2)."""


class SingularCovarianceError(ToolkitError):
    """Covariance could not be factorized even after jitter escalation."""


class DegenerateWeightsError(ToolkitError):
    """All mixture log-weights are -inf; no component carries mass."""


class NonInvertibleError(ToolkitError):
    """Requested inverse does not exist (e.g. Ikeda map with u = 0)."""


class ConfigurationError(ToolkitError):
    """Invalid or inconsistent configuration input."""


class FilterDivergenceError(ToolkitError):
    """A filter analysis step lost all usable information."""


class TrainingDivergenceError(ToolkitError):
    """Flow training produced a non-finite loss."""


class SearchFailureError(ToolkitError):
    """Every grid-search cell diverged; no model can be selected."""
