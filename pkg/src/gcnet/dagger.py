"""Dataset-aggregation refinement: roll the policy out, solve the boundary
value problem from the states it actually visits, and retrain on the original
cloning data plus the aggregated hard cases.

The policy drifts off the optimal bundle, so states it reaches are exactly
the ones the cloning dataset never covered.  Each outer iteration labels
those states with the indirect solver (warm-started from the nearest known
optimal sample), keeps the ones where the policy disagrees with the expert
beyond a threshold, and retrains on the combined objective

    L = L_bc + w * L_aggregated,   w = 0.1 by default,

which guards the original data against being forgotten.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cloning import TrainConfig, _Adam, _loss_and_head_gradients, clone_loss
from .datasets import Dataset, extract_pairs
from .errors import (ConfigError, DegenerateLabelError, NoConvergenceError,
                     PropagationError, RefinementError,
                     ZeroNormPredictionError)
from .neural_dynamics import rollout
from .policy import PolicyNetwork
from .problems import ProblemDefinition, get_problem
from .shooting import SolveConfig, TpbvpSolution, solve_tpbvp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DaggerConfig:
    iterations: int = 2
    rollout_samples: int = 20         # states sampled per closed-loop arc
    threshold: float = 0.01           # per-state cloning-loss gate
    aggregate_weight: float = 0.1
    solve: SolveConfig = field(default_factory=lambda: SolveConfig(
        restarts=4, early_stop_residual=1e-8))
    retrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=50, lr0=1e-3, batch_size=1024))
    min_duration_factor: float = 1e-3  # of the problem's duration scale
    rollout_rel_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.rollout_samples < 2:
            raise ConfigError("rollout_samples must be >= 2")
        if self.threshold <= 0.0:
            raise ConfigError("threshold must be positive")
        if self.aggregate_weight < 0.0:
            raise ConfigError("aggregate_weight must be >= 0")
        if self.min_duration_factor <= 0.0:
            raise ConfigError("min_duration_factor must be positive")


@dataclass
class DaggerRecord:
    iteration: int
    labeled: int
    label_failures: int
    rollout_failures: int
    aggregated: int
    dg_size: int                      # cumulative aggregated trajectories
    retrain_loss: float               # combined objective, last epoch
    val_position_error: float         # mean terminal |dr| on D_V, natural units


@dataclass
class AggregationEntry:
    """Provenance of one aggregated expert trajectory."""
    iteration: int
    source_state: list
    pair_loss: float
    tof: float


def save_dagger_records(records: list[DaggerRecord], path) -> None:
    header = ("iteration,labeled,label_failures,rollout_failures,aggregated,"
              "dg_size,retrain_loss,val_position_error")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r in records:
            fh.write(f"{r.iteration},{r.labeled},{r.label_failures},"
                     f"{r.rollout_failures},{r.aggregated},{r.dg_size},"
                     f"{r.retrain_loss:.12e},{r.val_position_error:.12e}\n")


# ---------------------------------------------------------------------------
# expert labeling
# ---------------------------------------------------------------------------

def nearest_bundle_sample(problem: ProblemDefinition,
                          bundles: list[Dataset],
                          x: np.ndarray) -> tuple[np.ndarray, float]:
    """Costates and remaining duration at the stored optimal sample closest
    to x (Euclidean distance in nondimensional state coordinates)."""
    scale = problem.input_scale
    xn = np.asarray(x, float) / scale
    best = None
    best_dist = np.inf
    for bundle in bundles:
        for traj in bundle.trajectories:
            d = np.linalg.norm(traj.states / scale - xn, axis=1)
            k = int(np.argmin(d))
            if d[k] < best_dist:
                best_dist = float(d[k])
                best = (traj.costates[k].copy(),
                        float(traj.t_star - traj.times[k]))
    if best is None:
        raise ConfigError("no bundle samples available for warm starts")
    return best


def expert_label(problem: ProblemDefinition, x: np.ndarray,
                 bundles: list[Dataset], solve_cfg: SolveConfig,
                 eps: float | None = None,
                 min_duration: float | None = None) -> TpbvpSolution:
    """Optimal trajectory from x to the target, warm-started from the
    nearest stored optimal sample.  Rejects near-target states whose
    implied duration falls under the guard."""
    if min_duration is None:
        min_duration = 1e-3 * problem.tof_scale
    costates, remaining = nearest_bundle_sample(problem, bundles, x)
    if remaining < min_duration:
        raise DegenerateLabelError(
            f"remaining duration {remaining:.3e} under the guard "
            f"{min_duration:.3e}; state is too close to the target")
    return solve_tpbvp(problem, solve_cfg, eps=eps, x0=np.asarray(x, float),
                       warm_starts=[(costates, remaining)])


# ---------------------------------------------------------------------------
# weighted retraining
# ---------------------------------------------------------------------------

def combined_loss(net: PolicyNetwork, kind: str,
                  bc_pairs: tuple[np.ndarray, np.ndarray],
                  dg_pairs: tuple[np.ndarray, np.ndarray] | None,
                  weight: float) -> float:
    """The retraining objective: cloning loss on the original data plus
    `weight` times the cloning loss on the aggregated data."""
    loss = clone_loss(kind, net.forward_batch(bc_pairs[0]), bc_pairs[1])
    if dg_pairs is not None and len(dg_pairs[0]):
        loss += weight * clone_loss(kind, net.forward_batch(dg_pairs[0]),
                                    dg_pairs[1])
    return float(loss)


def _retrain(net: PolicyNetwork, kind: str,
             bc_pairs: tuple[np.ndarray, np.ndarray],
             dg_pairs: tuple[np.ndarray, np.ndarray] | None,
             cfg: TrainConfig, weight: float,
             rng: np.random.Generator) -> tuple[PolicyNetwork, float]:
    """Continue training from the current parameters on the combined
    objective; minibatches pair one original-data batch with one
    aggregated-data batch per step."""
    theta = net.theta.copy()
    x_bc, y_bc = bc_pairs
    have_dg = dg_pairs is not None and len(dg_pairs[0]) > 0
    if have_dg:
        x_dg, y_dg = dg_pairs
    adam = _Adam(theta.size, cfg.lr0)
    n = len(x_bc)
    batch = min(cfg.batch_size, n)
    last_loss = combined_loss(net, kind, bc_pairs, dg_pairs, weight)

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        if have_dg:
            dg_order = rng.permutation(len(x_dg))
            dg_pos = 0
        for start in range(0, n, batch):
            rows = order[start:start + batch]
            model = net.with_theta(theta)
            pred, cache = model.forward_batch(x_bc[rows], want_cache=True)
            loss, dheads = _loss_and_head_gradients(kind, pred, y_bc[rows])
            grad = model.backprop_batch(cache, dheads)
            if have_dg:
                take = min(batch, len(x_dg))
                if dg_pos + take > len(x_dg):
                    dg_order = rng.permutation(len(x_dg))
                    dg_pos = 0
                dg_rows = dg_order[dg_pos:dg_pos + take]
                dg_pos += take
                pred_dg, cache_dg = model.forward_batch(x_dg[dg_rows],
                                                        want_cache=True)
                loss_dg, dheads_dg = _loss_and_head_gradients(
                    kind, pred_dg, y_dg[dg_rows])
                loss += weight * loss_dg
                grad = grad + weight * model.backprop_batch(cache_dg,
                                                            dheads_dg)
            theta = adam.step(theta, grad)
            last_loss = float(loss)

    return net.with_theta(theta), last_loss


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

def _mean_terminal_position_error(problem: ProblemDefinition,
                                  net: PolicyNetwork, dataset: Dataset,
                                  rel_tol: float) -> float:
    errors = []
    for traj in dataset.trajectories:
        try:
            arc = rollout(problem, net, traj.states[0], traj.t_star,
                          rel_tol=rel_tol)
        except (PropagationError, ZeroNormPredictionError):
            continue
        errors.append(np.linalg.norm(arc.final_state[0:3]
                                     - problem.target[0:3]))
    if not errors:
        raise RefinementError("no validation trajectory could be rolled out")
    return float(np.mean(errors))


def dagger_refine(net: PolicyNetwork, d_bc: Dataset, d_t: Dataset,
                  d_v: Dataset, cfg: DaggerConfig
                  ) -> tuple[PolicyNetwork, Dataset, list[DaggerRecord],
                             list[AggregationEntry]]:
    """Iterate rollout -> expert labeling -> aggregation -> retraining.

    Returns the net with the lowest mean terminal position error on d_v
    (the input net included), the aggregated dataset, per-iteration records,
    and per-trajectory provenance for the aggregated data.
    """
    if not (d_bc.problem == d_t.problem == d_v.problem):
        raise ConfigError("datasets disagree on the problem")
    if len(d_bc) == 0 or len(d_t) == 0 or len(d_v) == 0:
        raise ConfigError("empty dataset")
    problem = get_problem(d_bc.problem)
    kind = d_bc.problem
    eps = d_bc.eps
    min_duration = cfg.min_duration_factor * problem.tof_scale
    solve_cfg = replace(cfg.solve, sample_count=d_bc.sample_count)
    rng = np.random.default_rng(cfg.seed)

    bc_pairs = extract_pairs(d_bc)
    d_dg = Dataset(problem=kind, trajectories=[], eps=eps)
    records: list[DaggerRecord] = []
    provenance: list[AggregationEntry] = []

    current = net.with_theta(net.theta.copy())
    best = current
    best_val = _mean_terminal_position_error(problem, current, d_v,
                                             cfg.rollout_rel_tol)

    for it in range(cfg.iterations):
        labeled = failures = rollout_failures = aggregated = 0
        for traj in d_t.trajectories:
            try:
                arc = rollout(problem, current, traj.states[0], traj.t_star,
                              rel_tol=cfg.rollout_rel_tol,
                              sample_count=cfg.rollout_samples)
            except (PropagationError, ZeroNormPredictionError) as exc:
                logger.warning("iteration %d: rollout failed (%s)", it, exc)
                rollout_failures += 1
                continue
            # sample 0 is the optimal initial state, already labeled in d_bc
            for x_j in arc.states[1:]:
                try:
                    sol = expert_label(problem, x_j, [d_bc, d_dg], solve_cfg,
                                       eps=eps, min_duration=min_duration)
                except (DegenerateLabelError, NoConvergenceError) as exc:
                    logger.info("iteration %d: state unlabeled (%s)", it, exc)
                    failures += 1
                    continue
                labeled += 1
                pred = current.forward_batch(x_j[None, :])
                target = sol.trajectory.controls[0][None, :]
                pair_loss = clone_loss(kind, pred, target)
                if pair_loss > cfg.threshold:
                    d_dg.trajectories.append(sol.trajectory)
                    aggregated += 1
                    provenance.append(AggregationEntry(
                        iteration=it, source_state=[float(v) for v in x_j],
                        pair_loss=float(pair_loss), tof=float(sol.tof)))
        if labeled == 0:
            raise RefinementError(
                f"iteration {it}: no rollout state could be expert-labeled")

        dg_pairs = extract_pairs(d_dg) if len(d_dg) else None
        current, retrain_loss = _retrain(current, kind, bc_pairs, dg_pairs,
                                         cfg.retrain, cfg.aggregate_weight,
                                         rng)
        val_error = _mean_terminal_position_error(problem, current, d_v,
                                                  cfg.rollout_rel_tol)
        if val_error < best_val:
            best_val = val_error
            best = current
        records.append(DaggerRecord(
            iteration=it, labeled=labeled, label_failures=failures,
            rollout_failures=rollout_failures, aggregated=aggregated,
            dg_size=len(d_dg), retrain_loss=retrain_loss,
            val_position_error=val_error))
        logger.info("iteration %d: labeled %d (failed %d) aggregated %d "
                    "val |dr| %.6e", it, labeled, failures, aggregated,
                    val_error)

    return best, d_dg, records, provenance
