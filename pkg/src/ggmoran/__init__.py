"""Generalised gamma population model: urn weights, Moran dynamics and limit diffusions."""

__version__ = "0.1.0"

from .errors import (DomainError, GGMoranError, InsufficientLengthError, InsufficientSampleError,
                     NumericInstabilityError, StepExplosionError)
from .urn_weights import GGParams, PYParams, WeightPair, gg_weights_approx, gg_weights_exact, py_weights

__all__ = [
    "__version__", "GGParams", "PYParams", "WeightPair", "gg_weights_exact", "gg_weights_approx",
    "py_weights", "GGMoranError", "DomainError", "NumericInstabilityError", "StepExplosionError",
    "InsufficientLengthError", "InsufficientSampleError",
]
