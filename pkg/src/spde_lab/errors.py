"""Exception hierarchy. The CLI maps these onto exit codes."""


class SpdeLabError(Exception):
    """Base class for all library errors."""


class InvalidConfigurationError(SpdeLabError, ValueError):
    """Bad dimensions, parameters or configuration keys."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DimensionError(SpdeLabError, ValueError):
    pass


class UndefinedRatioError(SpdeLabError, ValueError):
    """The drift/diffusion ratio has a non-removable singularity."""


class ComputationError(SpdeLabError):
    """Numerical failure during a run (exit code 3)."""


class PathBlowUpError(ComputationError):
    def __init__(self, k, j, message=None):
        super().__init__(message or f"path left the admissible range at step {k}, cell {j}")
        self.k = k
        self.j = j


class WeightOverflowError(ComputationError):
    def __init__(self, k):
        super().__init__(f"non-finite log-weight at step {k}")
        self.k = k


class DegenerateWeightsError(ComputationError):
    pass


class InsufficientCoverageError(ComputationError):
    pass


class UnsupportedOrderError(SpdeLabError, ValueError):
    pass


class SchemaError(SpdeLabError, ValueError):
    """A summary document does not have the expected layout."""
