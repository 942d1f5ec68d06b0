"""Exponential and classical time integrators for stiff nonlinear
diffusion problems, with a reproducible benchmark harness."""

from .densephi import expm, phi_combination_dense, phi_k
from .kiops import (
    KiopsStats,
    PhiCombinationTask,
    PhiConvergenceError,
    kiops_eval,
    substep_controller,
)
from .numcore import NumericError, OdeSystem, grid_l2_norm, jac_vec_fd, l2_norm
from .problems import (
    DEFAULT_TF_1D,
    DEFAULT_TF_2D,
    Diffusion1DParams,
    Diffusion2DParams,
    SingularFieldError,
    linear_operator_1d,
    make_system_1d,
    make_system_2d,
    two_wire_field,
)
from .steppers import (
    METHODS,
    DivergenceError,
    GmresStagnationError,
    IntegrationFailure,
    IntegrationResult,
    NewtonConvergenceError,
    StepperConfig,
    StepReport,
    gmres,
    integrate,
    make_stepper,
    newton_krylov_solve,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_TF_1D",
    "DEFAULT_TF_2D",
    "METHODS",
    "Diffusion1DParams",
    "Diffusion2DParams",
    "DivergenceError",
    "GmresStagnationError",
    "IntegrationFailure",
    "IntegrationResult",
    "KiopsStats",
    "NewtonConvergenceError",
    "NumericError",
    "OdeSystem",
    "PhiCombinationTask",
    "PhiConvergenceError",
    "SingularFieldError",
    "StepReport",
    "StepperConfig",
    "expm",
    "gmres",
    "grid_l2_norm",
    "integrate",
    "jac_vec_fd",
    "kiops_eval",
    "l2_norm",
    "linear_operator_1d",
    "make_stepper",
    "make_system_1d",
    "make_system_2d",
    "newton_krylov_solve",
    "phi_combination_dense",
    "phi_k",
    "substep_controller",
    "two_wire_field",
    "__version__",
]
