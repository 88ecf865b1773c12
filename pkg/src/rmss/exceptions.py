"""Exception and warning types shared across the package."""


class RmssError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RmssError):
    """Case file is syntactically malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(RmssError):
    """A required table or column is missing from the case file."""


class TopologyError(RmssError):
    """Network references are inconsistent (dangling bus, bad slack count)."""


class EmptySelection(RmssError):
    """An essential-component selector matched nothing."""


class NonConvergence(RmssError):
    """A power flow required by the pipeline failed to converge."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class JacobianSingular(RmssError):
    """Factorization of the network Jacobian failed."""


class NotConverged(RmssError):
    """Operation requires a converged power-flow solution."""


class UnknownBus(RmssError):
    """A referenced bus id does not exist in the case."""


class ZeroStep(RmssError):
    """Finite-difference step must be positive."""


class ModelEvaluationError(RmssError):
    """A sampled model evaluation failed; carries the sample index."""

    def __init__(self, message: str, sample_index: int | None = None):
        if sample_index is not None:
            message = f"sample {sample_index}: {message}"
        super().__init__(message)
        self.sample_index = sample_index


class InvalidProbability(RmssError):
    """Confidence level must lie strictly between 0 and 1."""


class DegenerateDirection(RmssError):
    """Metric is insensitive to every varying parameter (lambda' Sigma lambda ~ 0)."""


class MissingLimits(RmssError):
    """A metric bus has no voltage limits to count violations against."""


class NotPSD(RmssError):
    """Covariance matrix is not positive semidefinite."""


class AllSamplesFailed(RmssError):
    """Every Monte Carlo sample failed to converge."""


class ExcessiveFailureRate(RmssError):
    """Monte Carlo failure rate too high for a representative comparison."""


class DimensionMismatch(RmssError):
    """Two reports do not share metric/parameter ordering."""


class ConfigError(RmssError):
    """Invalid run configuration (CLI exit code 3)."""


class SingularityWarning(UserWarning):
    """A bus has no incident admittance; the system matrix will be singular."""
