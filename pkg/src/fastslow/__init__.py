"""Numerical toolkit for fast-slow partially hyperbolic circle maps.

The fast variable x follows an expanding circle map f(., theta); the slow variable
theta drifts by eps * omega(x, theta) per step.
"""

from .errors import (ConfigError, DecompositionError, DegenerateOrbitError, DegenerateVarianceError,
                     ExprSyntaxError, FastSlowError, InterfaceError, InvalidDensityError,
                     InvalidMapError, NumericDomainError, PreconditionError, ResourceError,
                     SpectralGapError)
from .system import PRESETS, FastSlowSystem, build_system, preset

__version__ = "0.1.0"

__all__ = [
    "PRESETS", "FastSlowSystem", "build_system", "preset",
    "FastSlowError", "ConfigError", "ExprSyntaxError", "NumericDomainError", "InvalidMapError",
    "DegenerateOrbitError", "SpectralGapError", "DegenerateVarianceError", "DecompositionError",
    "InterfaceError", "PreconditionError", "ResourceError", "InvalidDensityError",
]
