"""Numerical laboratory for the J-flow on flat Kähler tori."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DomainError,
    JFlowError,
    MonitorViolation,
    NoConvergence,
    PositivityLost,
    SolverStall,
    StepFailure,
)
from .geometry import (  # noqa: F401
    FULL,
    REDUCED,
    BackgroundForm,
    HermitianField,
    LatticeGrid,
    assemble_chi,
    complex_hessian,
    integrate_density,
    sigma_field,
    wedge_ratio_oracle,
)
