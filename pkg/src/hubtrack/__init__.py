"""Exact tracking control of the driven 1D Fermi-Hubbard ring."""

__version__ = "0.1.0"

from .lattice import ParameterError, SectorBasis, SystemParams  # noqa: E402
from .operators import BondExpectation, HubbardModel  # noqa: E402
from .groundstate import GroundStateResult, ground_state, tight_binding_energy  # noqa: E402
from .dynamics import (  # noqa: E402
    ConstraintConfig,
    ConstraintViolation,
    IntegratorError,
    PulseSpec,
    TargetCurrent,
    TimeGrid,
    Trajectory,
    propagate_driven,
    propagate_tracking,
)

__all__ = [
    "BondExpectation",
    "ConstraintConfig",
    "ConstraintViolation",
    "GroundStateResult",
    "HubbardModel",
    "IntegratorError",
    "ParameterError",
    "PulseSpec",
    "SectorBasis",
    "SystemParams",
    "TargetCurrent",
    "TimeGrid",
    "Trajectory",
    "ground_state",
    "propagate_driven",
    "propagate_tracking",
    "tight_binding_energy",
]
