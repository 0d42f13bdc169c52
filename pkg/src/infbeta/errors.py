"""Exception hierarchy."""


class InfBetaError(Exception):
    """Base class for all package errors."""


class DomainError(InfBetaError, ValueError):
    """An argument lies outside the domain of a function or distribution."""


class InvalidParameterError(InfBetaError, ValueError):
    """Parameters produce a non-finite likelihood or weights."""


class EstimationError(InfBetaError):
    """Base for failures raised while fitting."""

    def __init__(self, component, message):
        self.component = component
        super().__init__(f"[{component}] {message}")


class CollinearityError(EstimationError):
    """A normal matrix is singular or ill-conditioned."""


class ConvergenceError(EstimationError):
    """The iterative fit did not converge.

    ``result`` carries the last iterate when one is available.
    """

    def __init__(self, component, message, result=None):
        super().__init__(component, message)
        self.result = result


class DegenerateDataError(EstimationError):
    """The data cannot identify a model component."""


class DataError(InfBetaError):
    """Malformed input data (exit code 3 in the CLI)."""


class ConfigError(InfBetaError):
    """Malformed configuration or CLI usage (exit code 2 in the CLI)."""


class SchemaVersionError(ConfigError):
    """A persisted model file has an unknown schema version."""
