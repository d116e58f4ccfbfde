"""Simulation and a priori bound verification for 1D barotropic compressible
flow with degenerate, regularized viscosity."""
from .errors import (
    ConfigError,
    ConstructionError,
    DegvisError,
    DomainError,
    IncompleteCampaignError,
    InsufficientDataError,
    PositivityLossError,
    StructuralError,
    UserAbort,
)
from .grid import Grid1D, SimState
from .model import GasModel, TheoryBounds, theory_bounds
from .profiles import FarFieldStates, make_background, make_initial_family, validate_initial
from .solver import SolverConfig, run, step
from .harness import ExperimentConfig, run_campaign, verify_bounds, fit_eps_scaling

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConstructionError", "DegvisError", "DomainError", "IncompleteCampaignError",
    "InsufficientDataError", "PositivityLossError", "StructuralError", "UserAbort",
    "Grid1D", "SimState", "GasModel", "TheoryBounds", "theory_bounds", "FarFieldStates",
    "make_background", "make_initial_family", "validate_initial", "SolverConfig", "run", "step",
    "ExperimentConfig", "run_campaign", "verify_bounds", "fit_eps_scaling",
]
