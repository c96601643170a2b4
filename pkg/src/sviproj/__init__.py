"""Incremental constraint projection methods for monotone stochastic
variational inequalities.

Modules
-------
core         block vectors, random streams and stochastic operators
projections  hard sets, soft constraints and the feasibility step
solver_ws    centralized method with weak-sharp and bounded-case rates
solver_tyk   regularized Cartesian method with per-agent schedules
oracles      exact references for small instances
metrics      run records, aggregation and rate fits
problems     shipped test problems
cli          experiment runner
"""
from .core import AffineProblem, BlockLayout, BlockVector, RngStream, SolutionSpec, StochasticProblem
from .errors import (
    CapabilityError,
    ConfigurationError,
    ConvergenceError,
    DataError,
    DivergenceError,
    GenerationError,
    InternalError,
    LayoutError,
    SviError,
    UsageError,
)
from .projections import ControlSequence, FeasibleSpec, HardSet, SoftConstraint
from .solver_tyk import TykSchedule, run_tyk
from .solver_ws import WsSchedule, run_ws

__version__ = "0.1.0"
