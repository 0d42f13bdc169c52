"""Zero- or one-inflated beta regression: fitting, inference and diagnostics."""
from .distribution import InflatedBetaParams
from .errors import (CollinearityError, ConfigError, ConvergenceError, DataError,
                     DegenerateDataError, DomainError, EstimationError, InfBetaError,
                     InvalidParameterError, SchemaVersionError)
from .links import LinkKind
from .numerics import RngStream
from .regression import (Dataset, FitError, FittedModel, ModelSpec, ParameterVector, fit,
                         inference_summary, likelihood_ratio_test, log_likelihood,
                         mean_response_ci)

__version__ = "0.1.0"

__all__ = [
    "CollinearityError", "ConfigError", "ConvergenceError", "DataError", "Dataset",
    "DegenerateDataError", "DomainError", "EstimationError", "FitError", "FittedModel",
    "InfBetaError", "InflatedBetaParams", "InvalidParameterError", "LinkKind", "ModelSpec",
    "ParameterVector", "RngStream", "SchemaVersionError", "fit", "inference_summary",
    "likelihood_ratio_test", "log_likelihood", "mean_response_ci", "__version__",
]
