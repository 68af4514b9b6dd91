"""Heat kernels of fractional powers ``-(-H)^α`` of elliptic operators.

The package evaluates the one-sided stable density, builds subordinated
kernels and semigroups from a base heat kernel, and measures the constants
in gradient, two-sided, Hölder and stability bounds.
"""

__version__ = "0.1.0"

from .errors import (CapacityError, ConfigError, DomainError, EllipticityError, FracHeatError,
                     NumericError, QuadratureError)
from .base_kernel import (CoefficientField, GaussianBase, Grid, assemble_operator,
                          checkerboard_field, heat_kernel_matrix)
from .subordinator import StableParams, density, laplace_check
from .subordination import (FreeSpaceKernel, GridKernel, QuadratureSpec, generator_apply,
                            spectral_oracle, subordinate_gradient, subordinate_matrix,
                            subordinate_pointwise)

__all__ = [
    "CapacityError", "ConfigError", "DomainError", "EllipticityError", "FracHeatError",
    "NumericError", "QuadratureError", "CoefficientField", "GaussianBase", "Grid",
    "assemble_operator", "checkerboard_field", "heat_kernel_matrix", "FreeSpaceKernel",
    "GridKernel", "StableParams", "density", "laplace_check",
    "QuadratureSpec", "generator_apply", "spectral_oracle", "subordinate_gradient",
    "subordinate_matrix", "subordinate_pointwise",
]
