"""Evolving surface finite elements with ALE mesh motion.

Piecewise linear finite elements for advection-diffusion on moving surfaces,
with BDF1/BDF2 time stepping and either Lagrangian or arbitrary
Lagrangian-Eulerian (ALE) mesh motion.
"""

from .errors import ErrorReport, accumulate_norms, eoc, step_errors
from .exceptions import (
    ConfigError,
    DegenerateGradient,
    DegenerateTriangle,
    DomainError,
    EmptySeries,
    EsfemError,
    NoConvergence,
    NoExactSolution,
    SolverDiverged,
    WrongMotionKind,
)
from .fem import Assembler
from .manufactured import ManufacturedProblem, example1, example2, example3, example4
from .mesh import SurfaceMesh, refine_project
from .timestepping import SolverConfig, Stepper, TimeGrid, solve_linear

__version__ = "0.1.0"

__all__ = [
    "Assembler",
    "ConfigError",
    "DegenerateGradient",
    "DegenerateTriangle",
    "DomainError",
    "EmptySeries",
    "ErrorReport",
    "EsfemError",
    "ManufacturedProblem",
    "NoConvergence",
    "NoExactSolution",
    "SolverConfig",
    "SolverDiverged",
    "Stepper",
    "SurfaceMesh",
    "TimeGrid",
    "WrongMotionKind",
    "accumulate_norms",
    "eoc",
    "example1",
    "example2",
    "example3",
    "example4",
    "refine_project",
    "solve_linear",
    "step_errors",
]
