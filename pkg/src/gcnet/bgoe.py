"""Backward generation of optimal trajectory bundles.

A converged nominal solution fixes final costates at the target.  Perturbing
those costates multiplicatively and re-closing the free-time condition
(H_f = 0) keeps the perturbed arc on the extremal field; integrating the
augmented system backward from the target then yields a new optimal
trajectory at a fraction of the cost of a fresh boundary-value solve.

The free-time closure differs per problem: the transfer's running-cost
multiplier enters the Hamiltonian additively and is solved in closed form;
the landing instead adjusts the free final mass with a scalar root solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynamics import (
    LandingCostates,
    TransferCostates,
    landing_controls_from_costates,
    sample_controls,
)
from .errors import (
    ConfigError,
    DegenerateCostateError,
    GenerationYieldError,
    PropagationError,
)
from .problems import ProblemDefinition
from .propagation import PropagationSpec, propagate
from .trajectories import (
    OptimalTrajectory,
    aug_tolerance_scale,
    make_augmented_rhs,
)

log = logging.getLogger(__name__)

MIN_YIELD_FRACTION = 0.9


@dataclass(frozen=True)
class BgoeConfig:
    """Bundle recipe: perturbation half-width and backward-time sampling."""

    delta: float                  # relative half-width of costate perturbation
    a: float = 1.0                # backward-time fraction of the nominal t*
    c_max: float = 0.0            # extra-time jitter: c ~ U(0, c_max)
    count: int = 1
    samples_per_traj: int = 100
    seed: int = 0
    rel_tol: float = 1e-12

    def __post_init__(self):
        if self.delta < 0.0:
            raise ConfigError(f"delta must be nonnegative, got {self.delta}")
        if not 0.0 < self.a <= 1.0:
            raise ConfigError(f"a must lie in (0, 1], got {self.a}")
        if self.c_max < 0.0:
            raise ConfigError(f"c_max must be nonnegative, got {self.c_max}")
        if self.count < 1:
            raise ConfigError(f"count must be at least 1, got {self.count}")
        if self.samples_per_traj < 2:
            raise ConfigError("samples_per_traj must be at least 2")


@dataclass
class BundleStats:
    """Per-bundle generation diagnostics."""

    requested: int
    generated: int
    failures: list[tuple[int, str]] = field(default_factory=list)
    final_mass_range: tuple[float, float] | None = None   # landing only

    @property
    def yield_fraction(self) -> float:
        return self.generated / self.requested


def transfer_closing_multiplier(lam_plus: np.ndarray, state_f: np.ndarray,
                                problem: ProblemDefinition) -> float:
    """Running-cost multiplier making H_f = 0 at the fixed terminal state.

    H is affine in the multiplier with unit coefficient, so
    lam_J = -(l_r . v + l_v . a(r, v, t_hat*)) with t_hat* = -l_v/|l_v|.
    """
    k = problem.constants
    r, v = state_f[:3], state_f[3:6]
    lr, lv = lam_plus[:3], lam_plus[3:6]
    lv_norm = float(np.linalg.norm(lv))
    if lv_norm <= 1e-300:
        raise DegenerateCostateError("perturbed l_v vanished at the target")
    rn = float(np.linalg.norm(r))
    acc = (-k.mu / rn**3) * r
    acc = acc + np.array([2.0 * k.omega * v[1] + k.omega**2 * r[0],
                          -2.0 * k.omega * v[0] + k.omega**2 * r[1],
                          0.0])
    # thrust term at the optimal direction: l_v . gamma * (-l_v/|l_v|)
    return -float(lr @ v + lv @ acc - k.gamma * lv_norm)


def perturb_final_costates_transfer(lam_f: TransferCostates, delta: float,
                                    rng: np.random.Generator,
                                    problem: ProblemDefinition,
                                    state_f: np.ndarray) -> TransferCostates:
    """Scale l_r, l_v componentwise by (1 + U(-delta, delta)); re-close l_J."""
    packed = lam_f.as_array()
    factors = 1.0 + rng.uniform(-delta, delta, size=6)
    lam_plus = packed.copy()
    lam_plus[:6] = packed[:6] * factors
    lam_plus[6] = transfer_closing_multiplier(lam_plus, state_f, problem)
    return TransferCostates.from_array(lam_plus)


def landing_terminal_hamiltonian(lam_plus: np.ndarray, r: np.ndarray,
                                 v: np.ndarray, m: float, eps: float,
                                 problem: ProblemDefinition) -> float:
    """H at the anchored terminal position/velocity for candidate mass m."""
    k = problem.constants
    lr, lv, lm = lam_plus[:3], lam_plus[3:6], float(lam_plus[6])
    ctrl = landing_controls_from_costates(lam_plus, m, eps, k)
    u, t_hat = float(ctrl[0]), ctrl[1:]
    rn = float(np.linalg.norm(r))
    acc = (-k.mu / rn**3) * r
    acc = acc + np.array([2.0 * k.omega * v[1] + k.omega**2 * r[0],
                          -2.0 * k.omega * v[0] + k.omega**2 * r[1],
                          0.0])
    acc = acc + u * k.c1 / m * t_hat
    running = u - eps * np.log(u * (1.0 - u))
    return float(lr @ v + lv @ acc
                 + lm * (-u * k.c1 / k.exhaust_velocity) + running)


def solve_final_mass(lam_plus: np.ndarray, m_f_nominal: float, eps: float,
                     problem: ProblemDefinition) -> float:
    """Root of H_f(m) = 0 near the nominal final mass.

    Expands a bracket around the nominal within [max(floor, 0.5 m_nom), m0]
    before falling back to the full interval.
    """
    r_t = problem.target[:3]
    v_t = problem.target[3:6]

    def h_of_m(m: float) -> float:
        return landing_terminal_hamiltonian(lam_plus, r_t, v_t, m, eps, problem)

    lo_limit = max(problem.m_floor, 0.5 * m_f_nominal)
    hi_limit = problem.m0
    half = 0.02 * m_f_nominal
    while half <= (hi_limit - lo_limit):
        lo = max(lo_limit, m_f_nominal - half)
        hi = min(hi_limit, m_f_nominal + half)
        if h_of_m(lo) * h_of_m(hi) < 0.0:
            return float(brentq(h_of_m, lo, hi, xtol=1e-12, rtol=1e-15))
        half *= 2.0
    h_lo, h_hi = h_of_m(lo_limit), h_of_m(hi_limit)
    if h_lo * h_hi < 0.0:
        return float(brentq(h_of_m, lo_limit, hi_limit, xtol=1e-12, rtol=1e-15))
    raise DegenerateCostateError(
        f"terminal Hamiltonian has no root in mass bracket "
        f"[{lo_limit:.3f}, {hi_limit:.3f}]: H = [{h_lo:.3e}, {h_hi:.3e}]")


def perturb_final_costates_landing(
        lam_f: LandingCostates, delta: float, rng: np.random.Generator,
        problem: ProblemDefinition, m_f_nominal: float,
        eps: float) -> tuple[LandingCostates, float]:
    """Scale l_r, l_v by (1 + U(-delta, delta)); keep l_m = 0 (free final
    mass); re-solve the final mass so H_f = 0."""
    packed = lam_f.as_array()
    factors = 1.0 + rng.uniform(-delta, delta, size=6)
    lam_plus = packed.copy()
    lam_plus[:6] = packed[:6] * factors
    lam_plus[6] = 0.0
    if np.linalg.norm(lam_plus[3:6]) <= 1e-300:
        raise DegenerateCostateError("perturbed l_v vanished at the target")
    m_f = solve_final_mass(lam_plus, m_f_nominal, eps, problem)
    if m_f <= problem.m_floor:
        raise DegenerateCostateError(
            f"adjusted final mass {m_f:.3f} at or below floor {problem.m_floor}")
    return LandingCostates.from_array(lam_plus), m_f


def _backward_trajectory(problem: ProblemDefinition, aug_f: np.ndarray,
                         duration: float, eps: float | None,
                         samples: int, rel_tol: float) -> OptimalTrajectory:
    """Integrate the augmented system backward and return it forward-ordered."""
    rhs = make_augmented_rhs(problem, eps)
    scale = aug_tolerance_scale(problem)
    spec = PropagationSpec(t0=duration, tf=0.0, rel_tol=rel_tol,
                           abs_tol=rel_tol * scale, sample_count=samples)
    res = propagate(spec, rhs, aug_f)
    times = res.times[::-1].copy()
    aug = res.states[::-1].copy()
    dim = problem.state_dim
    states = aug[:, :dim]
    costates = aug[:, dim:dim + 7]
    controls = sample_controls(problem, states, costates, eps)
    return OptimalTrajectory(t_star=duration, times=times, states=states,
                             costates=costates, controls=controls, eps=eps)


def generate_one(problem: ProblemDefinition, nominal: OptimalTrajectory,
                 cfg: BgoeConfig, rng: np.random.Generator
                 ) -> OptimalTrajectory:
    """One perturbed backward draw anchored at the problem target."""
    lam_f = nominal.costates[-1]
    c = rng.uniform(0.0, cfg.c_max) if cfg.c_max > 0.0 else 0.0
    duration = cfg.a * (1.0 + c) * nominal.t_star
    if problem.kind == "transfer":
        lam_plus = perturb_final_costates_transfer(
            TransferCostates.from_array(lam_f), cfg.delta, rng, problem,
            problem.target)
        aug_f = np.concatenate([problem.target, lam_plus.as_array()])
        return _backward_trajectory(problem, aug_f, duration, None,
                                    cfg.samples_per_traj, cfg.rel_tol)
    m_f_nominal = float(nominal.states[-1, 6])
    lam_plus, m_f = perturb_final_costates_landing(
        LandingCostates.from_array(lam_f), cfg.delta, rng, problem,
        m_f_nominal, nominal.eps)
    aug_f = np.concatenate([problem.target, [m_f], lam_plus.as_array()])
    return _backward_trajectory(problem, aug_f, duration, nominal.eps,
                                cfg.samples_per_traj, cfg.rel_tol)


def generate_bundle(problem: ProblemDefinition, nominal: OptimalTrajectory,
                    cfg: BgoeConfig
                    ) -> tuple[list[OptimalTrajectory], BundleStats]:
    """Draw cfg.count perturbed trajectories; fail if yield drops below 90%.

    Each draw gets its own child generator split from the seed, so results
    do not depend on evaluation order.
    """
    if problem.kind == "landing" and nominal.eps is None:
        raise ConfigError("landing nominal must carry its barrier weight")
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.count)
    bundle: list[OptimalTrajectory] = []
    stats = BundleStats(requested=cfg.count, generated=0)
    masses: list[float] = []
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        try:
            traj = generate_one(problem, nominal, cfg, rng)
        except (DegenerateCostateError, PropagationError) as exc:
            stats.failures.append((i, f"{type(exc).__name__}: {exc}"))
            log.debug("draw %d failed: %s", i, exc)
            continue
        bundle.append(traj)
        stats.generated += 1
        if problem.kind == "landing":
            masses.append(float(traj.states[-1, 6]))
    if masses:
        stats.final_mass_range = (min(masses), max(masses))
    if stats.generated < MIN_YIELD_FRACTION * cfg.count:
        raise GenerationYieldError(
            f"bundle yield {stats.generated}/{cfg.count} below "
            f"{MIN_YIELD_FRACTION:.0%}: first failure: "
            f"{stats.failures[0][1] if stats.failures else 'none recorded'}")
    log.info("bundle complete: %d/%d trajectories (delta=%g, a=%g, c_max=%g)",
             stats.generated, cfg.count, cfg.delta, cfg.a, cfg.c_max)
    return bundle, stats
