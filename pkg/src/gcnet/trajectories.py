"""Sampled optimal trajectories: the common currency between stages.

A trajectory stores equally spaced samples of states, costates, and the
controls the costates imply, together with its duration t*.  Times always
run forward from 0 to t*, whichever direction the generating integration
ran in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import make_landing_augmented_rhs, make_transfer_augmented_rhs, \
    sample_controls
from .errors import ConfigError
from .problems import ProblemDefinition
from .propagation import PropagationSpec, propagate


@dataclass
class OptimalTrajectory:
    t_star: float
    times: np.ndarray       # (n,), 0 .. t_star
    states: np.ndarray      # (n, state_dim)
    costates: np.ndarray    # (n, 7)
    controls: np.ndarray    # (n, control_dim)
    eps: float | None = None   # landing barrier weight in force, else None

    def __post_init__(self):
        if self.t_star <= 0.0:
            raise ConfigError(f"t_star must be positive, got {self.t_star}")

    @property
    def x0_star(self) -> np.ndarray:
        return self.states[0]

    @property
    def sample_count(self) -> int:
        return len(self.times)


def aug_tolerance_scale(problem: ProblemDefinition,
                        with_cost: bool = False) -> np.ndarray:
    """Componentwise absolute-tolerance scale for augmented propagation.

    The transfer is already nondimensional; the landing mixes km, km/s, kg
    and costates spanning four orders of magnitude, so the floor follows the
    natural scale of each component.
    """
    if problem.kind == "transfer":
        return np.ones(13)
    scale = np.concatenate([problem.input_scale, problem.costate_scale])
    if with_cost:
        scale = np.concatenate([scale, [problem.tof_scale]])
    return scale


def make_augmented_rhs(problem: ProblemDefinition, eps: float | None = None,
                       with_cost: bool = False):
    """Flat optimal-control right-hand side for this problem."""
    if problem.kind == "transfer":
        if with_cost:
            raise ConfigError("transfer cost is its duration; no quadrature")
        return make_transfer_augmented_rhs(problem.constants,
                                           r_floor=problem.r_floor)
    if eps is None:
        raise ConfigError("landing augmented dynamics need a barrier weight")
    return make_landing_augmented_rhs(problem.constants, eps,
                                      r_floor=problem.r_floor,
                                      m_floor=problem.m_floor,
                                      with_cost=with_cost)


def sample_optimal_trajectory(problem: ProblemDefinition, x0: np.ndarray,
                              costates0: np.ndarray, tof: float,
                              eps: float | None = None,
                              rel_tol: float = 1e-12,
                              abs_tol: float | None = None,
                              sample_count: int = 100) -> OptimalTrajectory:
    """Propagate (x0, costates0) forward for tof and sample the arc."""
    d = problem.state_dim
    rhs = make_augmented_rhs(problem, eps=eps)
    if abs_tol is None:
        abs_tol = rel_tol * aug_tolerance_scale(problem)
    spec = PropagationSpec(t0=0.0, tf=tof, rel_tol=rel_tol, abs_tol=abs_tol,
                           sample_count=sample_count)
    y0 = np.concatenate([x0, costates0])
    result = propagate(spec, rhs, y0)
    states = result.states[:, :d]
    costates = result.states[:, d:]
    controls = sample_controls(problem, states, costates, eps=eps)
    return OptimalTrajectory(t_star=tof, times=result.times, states=states,
                             costates=costates, controls=controls, eps=eps)
