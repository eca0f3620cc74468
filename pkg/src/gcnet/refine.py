"""Terminal-error refinement through forward ODE parameter sensitivities.

Behavioural cloning matches controls pointwise; this stage instead rolls
the policy-controlled dynamics out from each optimal initial state for the
optimal duration and descends the weighted squared miss at the endpoint.
The gradient chains the terminal sensitivity matrix dx(t*)/dtheta, obtained
from the variational equations, with the analytic loss derivative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset
from .errors import (ConfigError, PropagationError, RefinementError,
                     ZeroNormPredictionError)
from .neural_dynamics import PolicyControlledDynamics, state_tolerance_scale
from .policy import PolicyNetwork
from .problems import ProblemDefinition, get_problem
from .propagation import (PropagationSpec, SensitivityResult, propagate,
                          propagate_with_sensitivities)

logger = logging.getLogger(__name__)

GOLDEN_RATIO = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 20
    batch_size: int | None = None     # trajectories per step; None = all
    state_weights: np.ndarray | None = None
    step_mode: str = "line-search"    # or "adaptive-moment"
    alpha_max0: float = 1.0
    alpha_floor: float = 1e-12
    golden_evals: int = 12
    shrink_budget: int = 4
    lr: float = 1e-3                  # adaptive-moment mode only
    rel_tol: float = 1e-9
    seed: int = 0
    resample: bool = False            # fixed batch by default

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.step_mode not in ("line-search", "adaptive-moment"):
            raise ConfigError("step_mode must be line-search or "
                              "adaptive-moment")
        if self.alpha_max0 <= 0.0 or self.lr <= 0.0:
            raise ConfigError("alpha_max0 and lr must be positive")
        if self.golden_evals < 4 or self.shrink_budget < 1:
            raise ConfigError("golden_evals >= 4 and shrink_budget >= 1")
        if self.state_weights is not None:
            w = np.asarray(self.state_weights, float)
            if np.any(w < 0.0) or not np.any(w > 0.0):
                raise ConfigError("weights must be >= 0 and not all zero")


@dataclass
class RefineRecord:
    iteration: int
    train_loss: float
    val_loss: float
    alpha: float
    position_error: float             # batch mean terminal |dr|
    velocity_error: float             # batch mean terminal |dv|
    mass_error: float = 0.0           # batch mean terminal |dm|; landing only
    skipped: int = 0
    stalled: bool = False


def save_records(records: list[RefineRecord], path) -> None:
    """One record per iteration in a delimited text file."""
    header = ("iteration,train_loss,val_loss,alpha,position_error,"
              "velocity_error,mass_error,skipped,stalled")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in records:
            fh.write(f"{r.iteration},{r.train_loss:.12e},{r.val_loss:.12e},"
                     f"{r.alpha:.12e},{r.position_error:.12e},"
                     f"{r.velocity_error:.12e},{r.mass_error:.12e},"
                     f"{r.skipped},{int(r.stalled)}\n")


def load_records(path) -> list[RefineRecord]:
    records = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            f = line.strip().split(",")
            records.append(RefineRecord(
                iteration=int(f[0]), train_loss=float(f[1]),
                val_loss=float(f[2]), alpha=float(f[3]),
                position_error=float(f[4]), velocity_error=float(f[5]),
                mass_error=float(f[6]), skipped=int(f[7]),
                stalled=bool(int(f[8]))))
    return records


def default_state_weights(problem: ProblemDefinition) -> np.ndarray:
    """Inverse squared unit scales; the free final mass carries no weight."""
    w = 1.0 / problem.input_scale**2
    if problem.kind == "landing":
        w[6] = 0.0
    return w


def terminal_loss(x_final: np.ndarray, target: np.ndarray,
                  weights: np.ndarray) -> float:
    """Weighted squared miss at the endpoint."""
    x_final = np.asarray(x_final, float)
    target = np.asarray(target, float)
    weights = np.asarray(weights, float)
    if not (x_final.shape == target.shape == weights.shape):
        raise ConfigError("state, target, and weights must share one shape")
    diff = target - x_final
    return float(np.dot(weights, diff**2))


def loss_gradient(sens: SensitivityResult, target: np.ndarray,
                  weights: np.ndarray) -> np.ndarray:
    """d terminal_loss / d theta through the terminal sensitivity matrix."""
    diff = np.asarray(target, float) - sens.final_state
    dl_dx = -2.0 * np.asarray(weights, float) * diff
    if sens.final_sensitivity.shape[0] != dl_dx.size:
        raise ConfigError("sensitivity rows do not match the state dimension")
    return sens.final_sensitivity.T @ dl_dx


def _target_for(problem: ProblemDefinition) -> np.ndarray:
    if problem.kind == "transfer":
        return problem.target
    # free final mass: pad with 0, the weight vector zeroes it anyway
    return np.concatenate([problem.target, [0.0]])


def joint_abs_tol(problem: ProblemDefinition, rel_tol: float,
                  param_count: int) -> np.ndarray:
    """Per-component floor for the joint state+sensitivity system.

    Row i of dx/dtheta carries the units of state component i, so the
    sensitivity block repeats each state scale across the parameter axis.
    """
    scale = state_tolerance_scale(problem)
    return rel_tol * np.concatenate([scale, np.repeat(scale, param_count)])


def _endpoint(problem: ProblemDefinition, net: PolicyNetwork,
              x0: np.ndarray, duration: float, rel_tol: float) -> np.ndarray:
    system = PolicyControlledDynamics(problem, net)
    spec = PropagationSpec(0.0, duration, rel_tol=rel_tol,
                           abs_tol=rel_tol * state_tolerance_scale(problem),
                           sample_count=2)
    return propagate(spec, lambda t, y: system.rates(y), x0).final_state


def _batch_loss(problem, net, batch, weights, target, rel_tol) -> float:
    total, n = 0.0, 0
    for traj in batch:
        try:
            xf = _endpoint(problem, net, traj.states[0], traj.t_star, rel_tol)
        except (PropagationError, ZeroNormPredictionError):
            continue
        total += terminal_loss(xf, target, weights)
        n += 1
    if n == 0:
        raise RefinementError("every batch trajectory failed to propagate")
    return total / n


def validation_loss(net: PolicyNetwork, dataset: Dataset,
                    weights: np.ndarray | None = None,
                    rel_tol: float = 1e-9) -> float:
    """Mean terminal loss of the policy over a dataset's (x0*, t*) pairs."""
    problem = get_problem(dataset.problem)
    if weights is None:
        weights = default_state_weights(problem)
    return _batch_loss(problem, net, dataset.trajectories, weights,
                       _target_for(problem), rel_tol)


def _golden_section(fn, lo: float, hi: float,
                    evals: int) -> tuple[float, float]:
    """Golden-section minimization on [lo, hi]; returns (argmin, value)."""
    a, b = lo, hi
    c = b - GOLDEN_RATIO * (b - a)
    d = a + GOLDEN_RATIO * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max(0, evals - 2)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN_RATIO * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN_RATIO * (b - a)
            fd = fn(d)
    return (c, fc) if fc <= fd else (d, fd)


class _Adam:
    def __init__(self, size: int, lr: float):
        self.lr = lr
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad**2
        m_hat = self.m / (1.0 - 0.9**self.t)
        v_hat = self.v / (1.0 - 0.999**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def refine(net: PolicyNetwork, train_set: Dataset, val_set: Dataset,
           cfg: RefineConfig) -> tuple[PolicyNetwork, list[RefineRecord]]:
    """Descend the batch-mean terminal loss; keep the best net on val_set.

    Line-search mode accepts a step only when it lowers the batch loss, so
    with the default fixed batch the recorded training loss is exactly
    non-increasing (acceptance and the recorded value use one evaluator);
    a step that cannot improve within the shrink budget is recorded as a
    stall and leaves theta unchanged.
    """
    if train_set.problem != val_set.problem:
        raise ConfigError("train and validation datasets disagree on problem")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ConfigError("empty dataset")
    problem = get_problem(train_set.problem)
    weights = (default_state_weights(problem) if cfg.state_weights is None
               else np.asarray(cfg.state_weights, float))
    if weights.size != problem.state_dim:
        raise ConfigError("weights length must match the state dimension")
    target = _target_for(problem)
    rng = np.random.default_rng(cfg.seed)
    n_train = len(train_set)
    batch_size = min(cfg.batch_size or n_train, n_train)
    fixed_indices = rng.permutation(n_train)[:batch_size]

    theta = net.theta.copy()
    best_theta = theta.copy()
    best_val = validation_loss(net.with_theta(theta), val_set, weights,
                               cfg.rel_tol)
    records: list[RefineRecord] = []
    adam = _Adam(theta.size, cfg.lr) if cfg.step_mode == "adaptive-moment" \
        else None
    alpha_max = cfg.alpha_max0

    for it in range(cfg.iterations):
        indices = (rng.permutation(n_train)[:batch_size] if cfg.resample
                   else fixed_indices)
        batch = [train_set.trajectories[i] for i in indices]
        system = PolicyControlledDynamics(problem, net.with_theta(theta))

        grad = np.zeros_like(theta)
        dr_sum, dv_sum, dm_sum, used, skipped = 0.0, 0.0, 0.0, 0, 0
        for traj in batch:
            spec = PropagationSpec(
                0.0, traj.t_star, rel_tol=cfg.rel_tol,
                abs_tol=joint_abs_tol(problem, cfg.rel_tol, theta.size),
                sample_count=2)
            try:
                sens = propagate_with_sensitivities(spec, system,
                                                    traj.states[0])
            except (PropagationError, ZeroNormPredictionError) as exc:
                logger.warning("iteration %d: trajectory skipped (%s)",
                               it, exc)
                skipped += 1
                continue
            xf = sens.final_state
            grad += loss_gradient(sens, target, weights)
            dr_sum += float(np.linalg.norm(xf[0:3] - target[0:3]))
            dv_sum += float(np.linalg.norm(xf[3:6] - target[3:6]))
            if problem.kind == "landing":
                dm_sum += abs(float(xf[6]) - float(traj.states[-1, 6]))
            used += 1
        if used == 0:
            raise RefinementError(
                f"iteration {it}: every batch trajectory failed")
        grad /= used

        # Loss recorded for this iteration and compared against by the
        # line search; one evaluator for both keeps the recorded sequence
        # exactly non-increasing under the fixed default batch.
        def phi(a):
            return _batch_loss(problem, net.with_theta(theta - a * grad),
                               batch, weights, target, cfg.rel_tol)

        loss = phi(0.0)
        alpha, stalled = 0.0, False
        if cfg.step_mode == "adaptive-moment":
            theta = adam.step(theta, grad)
            alpha = cfg.lr
        else:
            gnorm = float(np.linalg.norm(grad))
            if gnorm == 0.0:
                stalled = True   # zero-error fixed point: nothing to do
            else:
                hi = alpha_max
                for _ in range(cfg.shrink_budget):
                    cand, val = _golden_section(phi, 0.0, hi,
                                                cfg.golden_evals)
                    if val < loss and cand > cfg.alpha_floor:
                        theta = theta - cand * grad
                        alpha = cand
                        alpha_max = 2.5 * cand
                        break
                    hi *= 0.25
                else:
                    stalled = True
                    logger.info("iteration %d: line search stalled", it)

        val_loss = validation_loss(net.with_theta(theta), val_set, weights,
                                   cfg.rel_tol)
        if val_loss < best_val:
            best_val = val_loss
            best_theta = theta.copy()
        records.append(RefineRecord(
            iteration=it, train_loss=loss, val_loss=val_loss, alpha=alpha,
            position_error=dr_sum / used, velocity_error=dv_sum / used,
            mass_error=dm_sum / used, skipped=skipped, stalled=stalled))
        logger.info("iteration %d: loss %.6e val %.6e alpha %.3e%s",
                    it, loss, val_loss, alpha, " (stall)" if stalled else "")

    return net.with_theta(best_theta), records
