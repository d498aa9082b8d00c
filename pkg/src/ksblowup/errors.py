"""Exception hierarchy shared by all modules.

Each class maps to one failure kind named in the module contracts, so the
CLI can translate them into exit codes without string matching.
"""

from __future__ import annotations


class KSError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(KSError, ValueError):
    """Inconsistent or out-of-range input parameters."""


class DomainError(ParameterError):
    """Argument outside the domain of a closed-form expression."""


class ConfigurationError(ParameterError):
    """A numerical setup that cannot deliver a meaningful answer."""


class RefinementError(KSError):
    """Grid lacks a node the algorithm pivots on."""


class ResolutionError(KSError):
    """Grid does not resolve a required length scale."""


class TruncationError(KSError):
    """Outer cutoff leaves too much weighted mass outside the domain."""


class DivergenceError(KSError):
    """Integrand not integrable at the inner endpoint."""


class RangeError(KSError, OverflowError):
    """Tabulated values would overflow double precision."""


class ConvergenceError(KSError, RuntimeError):
    """Iterative solver failed to converge."""


class FitError(KSError):
    """Least-squares design matrix is degenerate or undersampled."""


class SamplingError(KSError):
    """Trajectory too sparse for the requested finite differences."""


class ProjectionError(KSError):
    """Orthogonality functional has no sign change in the bracket."""


class InvalidTrajectoryError(KSError):
    """Trajectory violates a structural requirement."""


class NotConcentratedError(KSError):
    """Partial mass never reaches the level used to define the core scale."""


class StepRejectedError(KSError):
    """Requested time step exceeds the explicit stability bound."""
