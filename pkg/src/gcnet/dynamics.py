"""Dynamics, costate dynamics, and pointwise-optimal control laws.

State conventions (internal units; see :mod:`gcnet.problems`):

* transfer state   ``(r, v)``            -> 6 components
* landing state    ``(r, v, m)``         -> 7 components
* transfer costates ``(l_r, l_v, l_J)``  -> 7 components (l_J multiplies the
  unit running cost of the time-optimal objective and is constant in time)
* landing costates ``(l_r, l_v, l_m)``   -> 7 components

Both frames rotate about +z with constant rate; with w = omega*z_hat the
translational dynamics are

    r_dot = v
    v_dot = -mu r / |r|^3 - 2 w x v - w x (w x r) + a_thrust

The costate rates are the negative state-gradients of the Hamiltonian
H = l_r.v + l_v.v_dot + (mass/cost terms), which for w = omega*z_hat gives

    l_r_dot = mu (l_v/|r|^3 - 3 (l_v.r) r/|r|^5) - omega^2 (l_vx, l_vy, 0)
    l_v_dot = -l_r - 2 w x l_v

(the omega^2 term has no z component because the centrifugal field is flat
along the spin axis).  Minimizing H over the controls yields the thrust
direction opposite the velocity costate, and, for the landing problem with
log-barrier-smoothed throttle bounds, an explicit interior throttle driven
by the switching function

    SF = 1 - |l_v| c1 / m - l_m c1 / (isp g0).

Flat "augmented" right-hand sides (state and costates stacked, controls
eliminated through the optimal laws) are produced by closure factories so
the integrator hot loop touches locals only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BarrierDomainError,
    DegenerateCostateError,
    NonPositiveMassError,
    SingularRadiusError,
)
from .problems import PhysicalConstants, ProblemDefinition

# Below this norm the thrust direction -l_v/|l_v| is considered undefined.
LV_NORM_FLOOR = 1e-14

# Augmented-vector layouts.
TRANSFER_AUG_DIM = 13   # r(3) v(3) l_r(3) l_v(3) l_J(1)
LANDING_AUG_DIM = 14    # r(3) v(3) m(1) l_r(3) l_v(3) l_m(1)


# ----------------------------------------------------------------------------
# typed containers
# ----------------------------------------------------------------------------

@dataclass
class TransferState:
    r: np.ndarray
    v: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v])

    @staticmethod
    def from_array(x: np.ndarray) -> "TransferState":
        return TransferState(r=np.asarray(x[:3], float), v=np.asarray(x[3:6], float))


@dataclass
class LandingState:
    r: np.ndarray
    v: np.ndarray
    m: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, [self.m]])

    @staticmethod
    def from_array(x: np.ndarray) -> "LandingState":
        return LandingState(r=np.asarray(x[:3], float), v=np.asarray(x[3:6], float),
                            m=float(x[6]))


@dataclass
class TransferCostates:
    lr: np.ndarray
    lv: np.ndarray
    lJ: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.lr, self.lv, [self.lJ]])

    @staticmethod
    def from_array(l: np.ndarray) -> "TransferCostates":
        return TransferCostates(lr=np.asarray(l[:3], float),
                                lv=np.asarray(l[3:6], float), lJ=float(l[6]))


@dataclass
class LandingCostates:
    lr: np.ndarray
    lv: np.ndarray
    lm: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.lr, self.lv, [self.lm]])

    @staticmethod
    def from_array(l: np.ndarray) -> "LandingCostates":
        return LandingCostates(lr=np.asarray(l[:3], float),
                               lv=np.asarray(l[3:6], float), lm=float(l[6]))


@dataclass
class ControlCommand:
    """Thrust direction (unit vector) and throttle in [0, 1].

    The transfer thrusts continuously; its throttle is 1 unless a test
    switches the engine off to probe the ballistic field.
    """
    t_hat: np.ndarray
    u: float = 1.0

    def __post_init__(self):
        n = float(np.linalg.norm(self.t_hat))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-9:
            if n > LV_NORM_FLOOR:   # tolerate tiny drift, reject garbage
                raise ValueError(f"t_hat must be a unit vector, |t_hat| = {n}")
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"throttle must lie in [0, 1], got {self.u}")


# ----------------------------------------------------------------------------
# pointwise control laws
# ----------------------------------------------------------------------------

def optimal_thrust_direction(lv: np.ndarray) -> np.ndarray:
    """Thrust direction minimizing the Hamiltonian: -l_v / |l_v|."""
    n = float(np.linalg.norm(lv))
    if n <= LV_NORM_FLOOR:
        raise DegenerateCostateError(f"|l_v| = {n} below {LV_NORM_FLOOR}")
    return -np.asarray(lv, float) / n


def switching_function(lv: np.ndarray, m: float, lm: float,
                       k: PhysicalConstants) -> float:
    """Landing throttle switching function at the optimal thrust direction."""
    if m <= 0.0:
        raise NonPositiveMassError(f"mass {m} <= 0")
    lv_norm = float(np.linalg.norm(lv))
    return 1.0 - lv_norm * k.c1 / m - lm * k.c1 / k.exhaust_velocity


def _throttle_terms(sf: float, eps: float) -> tuple[float, float]:
    """Return (u, 1-u) for the barrier-smoothed optimal throttle.

    Both values are computed cancellation-free: for sf < 0 the sum
    sf + sqrt(4 eps^2 + sf^2) is rewritten via its conjugate.
    """
    if eps <= 0.0:
        raise BarrierDomainError(f"barrier weight must be positive, got {eps}")
    q = math.sqrt(4.0 * eps * eps + sf * sf)
    if sf >= 0.0:
        denom = 2.0 * eps + sf + q
        return 2.0 * eps / denom, (sf + q) / denom
    conj = 4.0 * eps * eps / (q - sf)          # == sf + q, stably
    denom = 2.0 * eps + conj
    return 2.0 * eps / denom, conj / denom


def optimal_throttle(sf: float, eps: float) -> float:
    """Interior throttle minimizing SF*u - eps*log(u(1-u)); in (0, 1)."""
    return _throttle_terms(sf, eps)[0]


def transfer_controls_from_costates(costates: np.ndarray) -> np.ndarray:
    """Control vector [t_hat] for a packed transfer costate vector (7,)."""
    return optimal_thrust_direction(costates[3:6])


def landing_controls_from_costates(costates: np.ndarray, m: float, eps: float,
                                   k: PhysicalConstants) -> np.ndarray:
    """Control vector [u, t_hat] for a packed landing costate vector (7,)."""
    t_hat = optimal_thrust_direction(costates[3:6])
    sf = switching_function(costates[3:6], m, float(costates[6]), k)
    return np.concatenate([[optimal_throttle(sf, eps)], t_hat])


# ----------------------------------------------------------------------------
# plain right-hand sides (explicit command)
# ----------------------------------------------------------------------------

def _frame_acceleration(r: np.ndarray, v: np.ndarray, mu: float,
                        omega: float) -> np.ndarray:
    """Gravity + Coriolis + centrifugal acceleration for w = omega*z_hat."""
    rn = float(np.linalg.norm(r))
    if rn <= 0.0:
        raise SingularRadiusError("radius is zero")
    r3 = rn**3
    return np.array([
        -mu * r[0] / r3 + 2.0 * omega * v[1] + omega**2 * r[0],
        -mu * r[1] / r3 - 2.0 * omega * v[0] + omega**2 * r[1],
        -mu * r[2] / r3,
    ])


def transfer_rhs(state: TransferState, cmd: ControlCommand,
                 k: PhysicalConstants) -> np.ndarray:
    """State rate (6,) for the constant-acceleration transfer."""
    acc = _frame_acceleration(state.r, state.v, k.mu, k.omega)
    acc = acc + k.gamma * cmd.u * np.asarray(cmd.t_hat, float)
    return np.concatenate([state.v, acc])


def landing_rhs(state: LandingState, cmd: ControlCommand,
                k: PhysicalConstants) -> np.ndarray:
    """State rate (7,) for the throttled landing."""
    if state.m <= 0.0:
        raise NonPositiveMassError(f"mass {state.m} <= 0")
    acc = _frame_acceleration(state.r, state.v, k.mu, k.omega)
    acc = acc + cmd.u * k.c1 / state.m * np.asarray(cmd.t_hat, float)
    m_dot = -cmd.u * k.c1 / k.exhaust_velocity
    return np.concatenate([state.v, acc, [m_dot]])


# ----------------------------------------------------------------------------
# Hamiltonians
# ----------------------------------------------------------------------------

def transfer_hamiltonian(state: TransferState, costates: TransferCostates,
                         cmd: ControlCommand, k: PhysicalConstants) -> float:
    """H = l_r.v + l_v.v_dot + l_J (unit running cost times its multiplier)."""
    rate = transfer_rhs(state, cmd, k)
    return float(costates.lr @ state.v + costates.lv @ rate[3:6] + costates.lJ)


def landing_hamiltonian(state: LandingState, costates: LandingCostates,
                        cmd: ControlCommand, eps: float,
                        k: PhysicalConstants) -> float:
    """H = l_r.v + l_v.v_dot + l_m m_dot + u - eps*log(u(1-u))."""
    if not 0.0 < cmd.u < 1.0:
        raise BarrierDomainError(f"throttle {cmd.u} outside (0, 1)")
    if eps <= 0.0:
        raise BarrierDomainError(f"barrier weight must be positive, got {eps}")
    rate = landing_rhs(state, cmd, k)
    running = cmd.u - eps * math.log(cmd.u * (1.0 - cmd.u))
    return float(costates.lr @ state.v + costates.lv @ rate[3:6]
                 + costates.lm * rate[6] + running)


def hamiltonian_from_augmented(problem: ProblemDefinition, aug: np.ndarray,
                               eps: float | None = None) -> float:
    """Hamiltonian of a packed augmented vector with optimal controls.

    The landing throttle and its barrier terms are evaluated from the stable
    split of (u, 1-u), so near-bang-bang arcs do not underflow the log.
    """
    k = problem.constants
    if problem.kind == "transfer":
        r, v = aug[0:3], aug[3:6]
        lr, lv, lJ = aug[6:9], aug[9:12], float(aug[12])
        t_hat = optimal_thrust_direction(lv)
        acc = _frame_acceleration(r, v, k.mu, k.omega) + k.gamma * t_hat
        return float(lr @ v + lv @ acc + lJ)
    if eps is None:
        raise BarrierDomainError("landing Hamiltonian needs a barrier weight")
    r, v, m = aug[0:3], aug[3:6], float(aug[6])
    lr, lv, lm = aug[7:10], aug[10:13], float(aug[13])
    t_hat = optimal_thrust_direction(lv)
    sf = switching_function(lv, m, lm, k)
    u, one_minus_u = _throttle_terms(sf, eps)
    acc = _frame_acceleration(r, v, k.mu, k.omega) + u * k.c1 / m * t_hat
    m_dot = -u * k.c1 / k.exhaust_velocity
    running = u - eps * (math.log(u) + math.log(one_minus_u))
    return float(lr @ v + lv @ acc + lm * m_dot + running)


# ----------------------------------------------------------------------------
# flat augmented right-hand sides (closure factories; integrator hot path)
# ----------------------------------------------------------------------------

def make_transfer_augmented_rhs(k: PhysicalConstants, r_floor: float = 0.0):
    """f(t, y) for the 13-component transfer state+costate system."""
    mu, omega, gamma = k.mu, k.omega, k.gamma
    om2 = omega * omega

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        x, yy, z, vx, vy, vz, lrx, lry, lrz, lvx, lvy, lvz, lJ = y
        r2 = x * x + yy * yy + z * z
        rn = math.sqrt(r2)
        if rn <= r_floor:
            raise SingularRadiusError(f"radius {rn} at or below floor {r_floor}")
        r3 = rn * r2
        r5 = r3 * r2
        lv_n = math.sqrt(lvx * lvx + lvy * lvy + lvz * lvz)
        if lv_n <= LV_NORM_FLOOR:
            raise DegenerateCostateError(f"|l_v| = {lv_n} below {LV_NORM_FLOOR}")
        g = gamma / lv_n
        mur3 = mu / r3
        c5 = 3.0 * mu * (lvx * x + lvy * yy + lvz * z) / r5
        return np.array([
            vx, vy, vz,
            -mur3 * x + 2.0 * omega * vy + om2 * x - g * lvx,
            -mur3 * yy - 2.0 * omega * vx + om2 * yy - g * lvy,
            -mur3 * z - g * lvz,
            mur3 * lvx - c5 * x - om2 * lvx,
            mur3 * lvy - c5 * yy - om2 * lvy,
            mur3 * lvz - c5 * z,
            -lrx + 2.0 * omega * lvy,
            -lry - 2.0 * omega * lvx,
            -lrz,
            0.0,
        ])

    return rhs


def make_landing_augmented_rhs(k: PhysicalConstants, eps: float,
                               r_floor: float = 0.0, m_floor: float = 0.0,
                               with_cost: bool = False):
    """f(t, y) for the 14-component landing state+costate system.

    With ``with_cost`` a 15th component accumulates the running cost
    u - eps*log(u(1-u)), so objective values come out of the same
    error-controlled integration as the states.
    """
    if eps <= 0.0:
        raise BarrierDomainError(f"barrier weight must be positive, got {eps}")
    mu, omega, c1 = k.mu, k.omega, k.c1
    ve = k.exhaust_velocity
    om2 = omega * omega

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        x, yy, z, vx, vy, vz, m = y[0:7]
        lrx, lry, lrz, lvx, lvy, lvz, lm = y[7:14]
        if m <= m_floor:
            raise NonPositiveMassError(f"mass {m} at or below floor {m_floor}")
        r2 = x * x + yy * yy + z * z
        rn = math.sqrt(r2)
        if rn <= r_floor:
            raise SingularRadiusError(f"radius {rn} at or below floor {r_floor}")
        r3 = rn * r2
        r5 = r3 * r2
        lv_n = math.sqrt(lvx * lvx + lvy * lvy + lvz * lvz)
        if lv_n <= LV_NORM_FLOOR:
            raise DegenerateCostateError(f"|l_v| = {lv_n} below {LV_NORM_FLOOR}")
        sf = 1.0 - lv_n * c1 / m - lm * c1 / ve
        u, one_minus_u = _throttle_terms(sf, eps)
        a = u * c1 / (m * lv_n)                 # thrust acceleration / |l_v|
        mur3 = mu / r3
        c5 = 3.0 * mu * (lvx * x + lvy * yy + lvz * z) / r5
        out = np.empty(15 if with_cost else 14)
        out[0] = vx
        out[1] = vy
        out[2] = vz
        out[3] = -mur3 * x + 2.0 * omega * vy + om2 * x - a * lvx
        out[4] = -mur3 * yy - 2.0 * omega * vx + om2 * yy - a * lvy
        out[5] = -mur3 * z - a * lvz
        out[6] = -u * c1 / ve
        out[7] = mur3 * lvx - c5 * x - om2 * lvx
        out[8] = mur3 * lvy - c5 * yy - om2 * lvy
        out[9] = mur3 * lvz - c5 * z
        out[10] = -lrx + 2.0 * omega * lvy
        out[11] = -lry - 2.0 * omega * lvx
        out[12] = -lrz
        out[13] = -c1 * u * lv_n / (m * m)
        if with_cost:
            out[14] = u - eps * (math.log(u) + math.log(one_minus_u))
        return out

    return rhs


def transfer_augmented_rhs(t: float, y: np.ndarray,
                           k: PhysicalConstants) -> np.ndarray:
    """Single-shot convenience wrapper over :func:`make_transfer_augmented_rhs`."""
    return make_transfer_augmented_rhs(k)(t, y)


def landing_augmented_rhs(t: float, y: np.ndarray, eps: float,
                          k: PhysicalConstants) -> np.ndarray:
    """Single-shot convenience wrapper over :func:`make_landing_augmented_rhs`."""
    return make_landing_augmented_rhs(k, eps)(t, y)


def sample_controls(problem: ProblemDefinition, states: np.ndarray,
                    costates: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Optimal controls for rows of sampled states/costates.

    Returns (n, 3) thrust directions for the transfer or (n, 4) throttle +
    direction rows for the landing.
    """
    n = states.shape[0]
    out = np.empty((n, problem.control_dim))
    for i in range(n):
        if problem.kind == "transfer":
            out[i] = transfer_controls_from_costates(costates[i])
        else:
            out[i] = landing_controls_from_costates(
                costates[i], float(states[i, 6]), eps, problem.constants)
    return out
