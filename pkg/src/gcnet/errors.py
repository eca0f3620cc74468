"""Exception hierarchy for the gcnet package.

Every failure a caller is expected to branch on has its own class; the CLI
maps these onto process exit codes (config -> 2, numerical -> 3, I/O -> 4).
"""

from __future__ import annotations


class GcnetError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(GcnetError):
    """Invalid configuration value, file, or command-line argument."""


# ----------------------------------------------------------------------------
# dynamics / propagation
# ----------------------------------------------------------------------------

class DynamicsError(GcnetError):
    """Right-hand-side evaluation left its validity domain."""


class DegenerateCostateError(DynamicsError):
    """Velocity costate norm below tolerance; thrust direction undefined."""


class SingularRadiusError(DynamicsError):
    """Radius fell below the configured floor (gravity singularity guard)."""


class NonPositiveMassError(DynamicsError):
    """Spacecraft mass at or below the configured floor."""


class BarrierDomainError(DynamicsError):
    """Throttle outside (0, 1), or barrier weight <= 0; log barrier undefined."""


class PropagationError(GcnetError):
    """Integration failed; `time` carries the failing integration time."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class StepBudgetError(PropagationError):
    """Adaptive integrator exceeded the configured step budget."""


# ----------------------------------------------------------------------------
# boundary-value solving / generation
# ----------------------------------------------------------------------------

class SolverError(GcnetError):
    """Base class for two-point boundary-value solver failures."""


class NoConvergenceError(SolverError):
    """No restart reached the residual threshold."""

    def __init__(self, message: str, best_residual: float | None = None):
        super().__init__(message)
        self.best_residual = best_residual


class ContinuationStageError(SolverError):
    """A barrier-continuation stage failed; `eps` names the first failing stage."""

    def __init__(self, message: str, eps: float):
        super().__init__(message)
        self.eps = eps


class ClosureError(GcnetError):
    """Free-boundary re-closure (multiplier or final mass) found no root."""


class GenerationYieldError(GcnetError):
    """Backward generation produced fewer valid trajectories than required."""


class DegenerateLabelError(GcnetError):
    """Expert labelling rejected a state too close to the target (duration guard)."""


# ----------------------------------------------------------------------------
# policy / training
# ----------------------------------------------------------------------------

class ZeroNormPredictionError(GcnetError):
    """Network emitted a (numerically) zero-norm thrust-direction vector."""


class TrainingDivergedError(GcnetError):
    """Loss became NaN/Inf during optimization."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class RefinementError(GcnetError):
    """A refinement step could not be evaluated on any batch trajectory."""


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

class FormatError(GcnetError):
    """Bad magic, unsupported version, or truncated/corrupt binary payload."""
