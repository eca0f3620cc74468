"""Indirect solution of the two boundary-value problems by single shooting.

The decision vector stacks the seven initial costates and the arc duration.
Propagating the augmented (state + costate) system with controls eliminated
turns the optimality conditions into eight residuals:

* transfer: final position error (3), final velocity error (3), the
  final-time Hamiltonian (free final time), and ``|costates0| - 1``
  (the time-optimal conditions are homogeneous in the multipliers, so the
  overall scale must be pinned; lambda_J is part of the normalized vector).
* landing: final position error (3), final velocity error (3), the
  final-time Hamiltonian, and the final mass costate (free final mass).

Residuals and decisions are worked in per-problem scaled coordinates so one
Levenberg-Marquardt configuration covers both problems.  Restarts draw
costates uniformly on the unit sphere of scaled decision space and the
duration uniformly from the problem bracket.  The search runs at a relaxed
integration tolerance; surviving candidates are polished at the reporting
tolerance before acceptance.

The mass-optimal landing throttle is recovered through a barrier
continuation: a geometric barrier-weight schedule from 1 down past 1e-6,
each stage warm-started from the previous solution.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .dynamics import hamiltonian_from_augmented
from .errors import (
    ConfigError,
    ContinuationStageError,
    NoConvergenceError,
    PropagationError,
)
from .problems import ProblemDefinition
from .propagation import PropagationSpec, propagate
from .trajectories import OptimalTrajectory, aug_tolerance_scale, \
    make_augmented_rhs, sample_optimal_trajectory

logger = logging.getLogger(__name__)

# Residual wall returned for decisions outside the propagable domain; keeps
# MINPACK inside its trust-region logic instead of dying on an exception.
PENALTY_RESIDUAL = 1e3


@dataclass
class SolveConfig:
    restarts: int = 24
    seed: int = 0
    residual_threshold: float = 1e-8
    search_tol: float = 1e-9          # integration tolerance while searching
    final_tol: float = 1e-12          # integration tolerance for polish/report
    max_nfev_search: int = 400
    max_nfev_polish: int = 120
    sample_count: int = 100
    tof_min_factor: float = 1e-2      # duration guard, fraction of tof scale
    early_stop_residual: float | None = None   # stop at first good candidate

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.residual_threshold <= 0:
            raise ConfigError("residual_threshold must be positive")
        if self.early_stop_residual is not None \
                and self.early_stop_residual <= 0:
            raise ConfigError("early_stop_residual must be positive")


@dataclass
class TpbvpSolution:
    kind: str
    costates0: np.ndarray             # (7,)
    tof: float
    residual_norm: float              # scaled residual 2-norm
    residuals: np.ndarray             # (8,) scaled
    cost: float                       # tof (transfer) or barrier objective J
    trajectory: OptimalTrajectory
    eps: float | None = None
    restart_index: int = -1           # -1 for warm starts
    n_converged: int = 1
    converged_tofs: tuple = ()
    final_mass: float | None = None
    wall_time_s: float = 0.0

    @property
    def decision(self) -> np.ndarray:
        return np.concatenate([self.costates0, [self.tof]])


@dataclass
class ContinuationResult:
    schedule: tuple
    stages: list                      # [TpbvpSolution] in schedule order
    wall_time_s: float = 0.0

    @property
    def final(self) -> TpbvpSolution:
        return self.stages[-1]


# ----------------------------------------------------------------------------
# residuals
# ----------------------------------------------------------------------------

def _final_augmented_state(problem: ProblemDefinition, x0: np.ndarray,
                           costates0: np.ndarray, tof: float,
                           eps: float | None, rel_tol: float) -> np.ndarray:
    rhs = make_augmented_rhs(problem, eps=eps)
    abs_tol = rel_tol * aug_tolerance_scale(problem)
    spec = PropagationSpec(t0=0.0, tf=tof, rel_tol=rel_tol, abs_tol=abs_tol,
                           sample_count=2)
    return propagate(spec, rhs, np.concatenate([x0, costates0])).final_state


def _residuals_from_final(problem: ProblemDefinition, aug_f: np.ndarray,
                          costates0: np.ndarray, eps: float | None) -> np.ndarray:
    d = problem.state_dim
    scale = problem.residual_scale
    out = np.empty(8)
    out[0:3] = (aug_f[0:3] - problem.target[0:3]) * scale[0:3]
    out[3:6] = (aug_f[3:6] - problem.target[3:6]) * scale[3:6]
    out[6] = hamiltonian_from_augmented(problem, aug_f, eps=eps) * scale[6]
    if problem.kind == "transfer":
        out[7] = (float(np.linalg.norm(costates0)) - 1.0) * scale[7]
    else:
        out[7] = aug_f[d + 6] * scale[7]   # final mass costate
    return out


def transfer_residuals(problem: ProblemDefinition, costates0: np.ndarray,
                       tof: float, x0: np.ndarray | None = None,
                       rel_tol: float = 1e-12) -> np.ndarray:
    """Scaled residual vector (8,) for a transfer decision."""
    x0 = problem.x0 if x0 is None else x0
    aug_f = _final_augmented_state(problem, x0, costates0, tof, None, rel_tol)
    return _residuals_from_final(problem, aug_f, costates0, None)


def landing_residuals(problem: ProblemDefinition, costates0: np.ndarray,
                      tof: float, eps: float, x0: np.ndarray | None = None,
                      rel_tol: float = 1e-12) -> np.ndarray:
    """Scaled residual vector (8,) for a landing decision at barrier weight eps."""
    x0 = problem.x0 if x0 is None else x0
    aug_f = _final_augmented_state(problem, x0, costates0, tof, eps, rel_tol)
    return _residuals_from_final(problem, aug_f, costates0, eps)


def shooting_residuals(problem: ProblemDefinition, costates0: np.ndarray,
                       tof: float, eps: float | None = None,
                       x0: np.ndarray | None = None,
                       rel_tol: float = 1e-12) -> np.ndarray:
    if problem.kind == "transfer":
        return transfer_residuals(problem, costates0, tof, x0=x0, rel_tol=rel_tol)
    return landing_residuals(problem, costates0, tof, eps, x0=x0, rel_tol=rel_tol)


# ----------------------------------------------------------------------------
# solver
# ----------------------------------------------------------------------------

def _guess_draws(problem: ProblemDefinition, cfg: SolveConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Scaled costate guesses on the unit sphere + durations in the bracket."""
    z = rng.standard_normal((cfg.restarts, 7))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    z = z / norms
    if problem.kind == "transfer":
        # lambda_J >= 0 is necessary for a minimizing multiplier set.
        z[:, 6] = np.abs(z[:, 6])
    lo, hi = problem.tof_bracket
    tofs = rng.uniform(lo, hi, size=cfg.restarts)
    return z, tofs


def _make_scaled_residual_fn(problem: ProblemDefinition, x0: np.ndarray,
                             eps: float | None, rel_tol: float,
                             tof_min: float):
    cs = problem.costate_scale
    ts = problem.tof_scale

    def fn(z: np.ndarray) -> np.ndarray:
        tof = z[7] * ts
        if tof < tof_min:
            # smooth-ish wall pushing the duration back above the guard
            return np.full(8, PENALTY_RESIDUAL * (1.0 + (tof_min - tof) / ts))
        costates0 = z[:7] * cs
        try:
            return shooting_residuals(problem, costates0, tof, eps=eps,
                                      x0=x0, rel_tol=rel_tol)
        except PropagationError:
            return np.full(8, PENALTY_RESIDUAL)

    return fn


def _solution_cost(problem: ProblemDefinition, x0: np.ndarray,
                   costates0: np.ndarray, tof: float, eps: float | None,
                   rel_tol: float) -> tuple[float, float | None]:
    """(objective value, final mass) for restart screening and reports."""
    if problem.kind == "transfer":
        return tof, None
    rhs = make_augmented_rhs(problem, eps=eps, with_cost=True)
    abs_tol = rel_tol * aug_tolerance_scale(problem, with_cost=True)
    spec = PropagationSpec(t0=0.0, tf=tof, rel_tol=rel_tol, abs_tol=abs_tol,
                           sample_count=2)
    y0 = np.concatenate([x0, costates0, [0.0]])
    final = propagate(spec, rhs, y0).final_state
    return float(final[14]), float(final[6])


def solve_tpbvp(problem: ProblemDefinition, cfg: SolveConfig,
                eps: float | None = None, x0: np.ndarray | None = None,
                warm_starts: list[tuple[np.ndarray, float]] | None = None
                ) -> TpbvpSolution:
    """Multi-restart Levenberg-Marquardt shooting.

    ``warm_starts`` (costates0, tof) pairs are tried verbatim before any
    random restart; the landing problem requires ``eps``.  When
    ``cfg.early_stop_residual`` is set, the seed loop stops at the first
    candidate polished below it (trading the exhaustive lowest-cost sweep
    for speed; warm-started re-solves want this).
    """
    start = time.perf_counter()
    if problem.kind == "landing" and eps is None:
        raise ConfigError("landing solves need a barrier weight")
    x0 = problem.x0 if x0 is None else np.asarray(x0, float)
    tof_min = cfg.tof_min_factor * problem.tof_scale
    cs, ts = problem.costate_scale, problem.tof_scale

    seeds: list[np.ndarray] = []
    if warm_starts:
        for costates0, tof in warm_starts:
            seeds.append(np.concatenate([np.asarray(costates0, float) / cs,
                                         [tof / ts]]))
    rng = np.random.default_rng(cfg.seed)
    z_costates, tofs = _guess_draws(problem, cfg, rng)
    for i in range(cfg.restarts):
        seeds.append(np.concatenate([z_costates[i], [tofs[i] / ts]]))

    search_fn = _make_scaled_residual_fn(problem, x0, eps, cfg.search_tol,
                                         tof_min)
    polish_fn = _make_scaled_residual_fn(problem, x0, eps, cfg.final_tol,
                                         tof_min)

    converged: list[tuple[float, int, np.ndarray, float]] = []
    best_norm = np.inf
    for index, z0 in enumerate(seeds):
        try:
            fit = least_squares(search_fn, z0, method="lm",
                                max_nfev=cfg.max_nfev_search,
                                xtol=1e-14, ftol=1e-14, gtol=1e-14)
        except Exception:   # MINPACK-level breakdown: count the restart lost
            continue
        norm = float(np.linalg.norm(fit.fun))
        best_norm = min(best_norm, norm)
        # generous gate at search tolerance; the polish pass decides for real
        if norm > 1e-5:
            continue
        polished = least_squares(polish_fn, fit.x, method="lm",
                                 max_nfev=cfg.max_nfev_polish,
                                 xtol=1e-15, ftol=1e-15, gtol=1e-15)
        pnorm = float(np.linalg.norm(polished.fun))
        best_norm = min(best_norm, pnorm)
        tof = float(polished.x[7] * ts)
        if pnorm >= cfg.residual_threshold or tof < tof_min:
            continue
        if problem.kind == "transfer" and polished.x[6] * cs[6] < 0.0:
            continue   # nonnegative running-cost multiplier required
        costates0 = polished.x[:7] * cs
        cost, _ = _solution_cost(problem, x0, costates0, tof, eps,
                                 cfg.search_tol)
        converged.append((cost, index, polished.x.copy(), pnorm,
                          polished.fun.copy()))
        logger.info("restart %d converged: tof=%.6g cost=%.6g |res|=%.3g",
                    index, tof, cost, pnorm)
        if (cfg.early_stop_residual is not None
                and pnorm <= cfg.early_stop_residual):
            # good enough to skip the remaining seeds (warm-started solves)
            break

    if not converged:
        raise NoConvergenceError(
            f"no restart of {len(seeds)} reached {cfg.residual_threshold:g} "
            f"(best residual {best_norm:.3g})", best_residual=best_norm)

    converged.sort(key=lambda item: (item[0], item[1]))
    cost, index, z_best, pnorm, res_best = converged[0]
    costates0 = z_best[:7] * cs
    tof = float(z_best[7] * ts)
    cost, final_mass = _solution_cost(problem, x0, costates0, tof, eps,
                                      cfg.final_tol)
    trajectory = sample_optimal_trajectory(problem, x0, costates0, tof,
                                           eps=eps, rel_tol=cfg.final_tol,
                                           sample_count=cfg.sample_count)
    n_warm = len(warm_starts) if warm_starts else 0
    return TpbvpSolution(
        kind=problem.kind,
        costates0=costates0,
        tof=tof,
        residual_norm=pnorm,
        residuals=res_best,
        cost=cost,
        trajectory=trajectory,
        eps=eps,
        restart_index=index - n_warm,   # negative = warm start
        n_converged=len(converged),
        converged_tofs=tuple(float(item[2][7] * ts) for item in converged),
        final_mass=final_mass,
        wall_time_s=time.perf_counter() - start,
    )


# ----------------------------------------------------------------------------
# barrier continuation (landing)
# ----------------------------------------------------------------------------

def continuation_schedule(start: float = 1.0, ratio: float = 0.2,
                          floor: float = 1e-6) -> tuple:
    """Geometric barrier-weight schedule: start, start*ratio, ... < floor."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError("ratio must lie in (0, 1)")
    if not 0.0 < floor < start:
        raise ConfigError("floor must lie in (0, start)")
    values = [start]
    while values[-1] >= floor:
        values.append(values[-1] * ratio)
    return tuple(values)


def solve_landing_with_continuation(problem: ProblemDefinition,
                                    cfg: SolveConfig,
                                    schedule: tuple | None = None
                                    ) -> ContinuationResult:
    """Solve the landing by sweeping the barrier weight down a schedule.

    The first stage runs the full multi-restart search; every later stage
    warm-starts from its predecessor, with a few jittered retries before
    the stage is declared failed.
    """
    start_time = time.perf_counter()
    if problem.kind != "landing":
        raise ConfigError("continuation applies to the landing problem")
    if schedule is None:
        schedule = continuation_schedule()
    schedule = tuple(float(e) for e in schedule)
    if any(e <= 0.0 for e in schedule) or \
            any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError("schedule must be positive and strictly decreasing")
    stages: list[TpbvpSolution] = []
    rng = np.random.default_rng(cfg.seed + 1)
    for stage_idx, eps in enumerate(schedule):
        if stage_idx == 0:
            solution = solve_tpbvp(problem, cfg, eps=eps)
        else:
            prev = stages[-1]
            warm = [(prev.costates0, prev.tof)]
            # jittered fallbacks, tried only if the plain warm start fails
            stage_cfg = replace(cfg, restarts=1)
            solution = None
            for attempt in range(4):
                if attempt > 0:
                    jitter = 1.0 + 1e-4 * attempt * rng.standard_normal(7)
                    warm = [(prev.costates0 * jitter, prev.tof)]
                try:
                    solution = solve_tpbvp(problem, stage_cfg, eps=eps,
                                           warm_starts=warm)
                    break
                except NoConvergenceError:
                    continue
            if solution is None:
                raise ContinuationStageError(
                    f"continuation failed at barrier weight {eps:g}", eps=eps)
        stages.append(solution)
        logger.info("continuation eps=%.3g: tof=%.6g s cost=%.6g m_f=%s",
                    eps, solution.tof, solution.cost, solution.final_mass)
    return ContinuationResult(schedule=tuple(schedule), stages=stages,
                              wall_time_s=time.perf_counter() - start_time)
