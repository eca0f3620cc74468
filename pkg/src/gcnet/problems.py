"""Problem definitions: constants, boundary conditions, and unit systems.

Two optimal-control problems are covered:

* ``transfer``  -- time-optimal, constant-acceleration interplanetary
  rendezvous in a frame rotating with the target's circular orbit.
  Worked internally in canonical heliocentric units (length 1 au,
  gravitational parameter 1, so the time unit is one orbital year of a
  1-au circle divided by 2*pi).
* ``landing``   -- mass-optimal powered descent to a fixed site on a
  rotating asteroid.  Worked internally in km, s, kg; those scales keep
  the shooting Jacobian well conditioned without further scaling of the
  dynamics.

A :class:`ProblemDefinition` bundles everything downstream stages need:
internal-unit constants, initial and target states, conversion factors to
physical units, and the scale vectors used by the shooting solver and the
policy-network input layer.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Solar gravitational parameter [m^3/s^2] and astronomical unit [m].
MU_SUN_M3_S2 = 1.32712440018e20
AU_M = 1.495978707e11

# Canonical heliocentric time unit: sqrt(au^3 / mu_sun) [s].  One orbital
# period at 1 au is 2*pi of these, which defines the "year" used below.
TU_TRANSFER_S = math.sqrt(AU_M**3 / MU_SUN_M3_S2)
YEAR_S = 2.0 * math.pi * TU_TRANSFER_S


@dataclass(frozen=True)
class UnitSystem:
    """Conversion factors from internal units to SI (per internal unit)."""

    length_m: float
    time_s: float
    mass_kg: float

    @property
    def velocity_m_s(self) -> float:
        return self.length_m / self.time_s

    @property
    def acceleration_m_s2(self) -> float:
        return self.length_m / self.time_s**2


@dataclass(frozen=True)
class PhysicalConstants:
    """Dynamics constants in the owning problem's internal units.

    Fields unused by a problem are None: the transfer has a fixed thrust
    acceleration ``gamma`` and no mass flow; the landing has a thrust
    magnitude ``c1``, specific impulse ``isp`` and reference gravity ``g0``
    (exhaust velocity isp*g0).
    """

    mu: float
    omega: float
    gamma: float | None = None
    c1: float | None = None
    isp: float | None = None
    g0: float | None = None

    def __post_init__(self):
        for name in ("mu", "omega", "gamma", "c1", "isp", "g0"):
            value = getattr(self, name)
            if value is not None and value <= 0.0:
                raise ConfigError(f"constant {name} must be positive, got {value}")

    @property
    def exhaust_velocity(self) -> float:
        if self.isp is None or self.g0 is None:
            raise ConfigError("exhaust velocity undefined without isp and g0")
        return self.isp * self.g0


@dataclass(frozen=True)
class ProblemDefinition:
    """One boundary-value problem plus the scalings downstream code uses."""

    kind: str                      # "transfer" | "landing"
    constants: PhysicalConstants
    x0: np.ndarray                 # initial state, internal units
    target: np.ndarray             # (6,) target position+velocity, internal units
    units: UnitSystem
    input_scale: np.ndarray        # network input scaling, per state component
    costate_scale: np.ndarray      # decision-vector scaling for the solver
    residual_scale: np.ndarray     # (8,) residual scaling for the solver
    tof_scale: float               # time-of-flight decision scaling
    tof_bracket: tuple[float, float]  # restart sampling bracket, internal units
    r_floor: float                 # radius guard for propagation
    m_floor: float = 0.0           # mass guard (landing only)
    nominal_tof: float | None = None  # published optimal duration, internal units

    def __post_init__(self):
        if self.kind not in ("transfer", "landing"):
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        if self.x0.shape != (self.state_dim,):
            raise ConfigError(f"x0 must have shape ({self.state_dim},)")
        if self.target.shape != (6,):
            raise ConfigError("target must hold position and velocity (6,)")
        if self.tof_bracket[0] <= 0 or self.tof_bracket[1] <= self.tof_bracket[0]:
            raise ConfigError("tof bracket must be positive and increasing")

    # -- dimensions ----------------------------------------------------------

    @property
    def state_dim(self) -> int:
        return 6 if self.kind == "transfer" else 7

    @property
    def costate_dim(self) -> int:
        return 7   # (lambda_r, lambda_v, lambda_J) or (lambda_r, lambda_v, lambda_m)

    @property
    def control_dim(self) -> int:
        return 3 if self.kind == "transfer" else 4   # [t_hat] or [u, t_hat]

    @property
    def m0(self) -> float:
        if self.kind != "landing":
            raise ConfigError("m0 defined for the landing problem only")
        return float(self.x0[6])

    # -- unit conversions for reports ---------------------------------------

    def position_error_physical(self, err_internal: float) -> float:
        """Convert a position-error magnitude to report units (km or m)."""
        meters = err_internal * self.units.length_m
        return meters / 1e3 if self.kind == "transfer" else meters

    def velocity_error_physical(self, err_internal: float) -> float:
        """Convert a velocity-error magnitude to report units (km/s or m/s)."""
        m_s = err_internal * self.units.velocity_m_s
        return m_s / 1e3 if self.kind == "transfer" else m_s

    @property
    def report_units(self) -> tuple[str, str]:
        return ("km", "km/s") if self.kind == "transfer" else ("m", "m/s")


def transfer_problem(*,
                     target_radius: float = 1.3,
                     thrust_acceleration: float = 1.0e-4,
                     r0: tuple = (-1.1874388, -3.0578396, 0.3569406),
                     v0: tuple = (-48.17, 18.30, 0.64),
                     ) -> ProblemDefinition:
    """Time-optimal rendezvous onto a circular orbit, canonical units.

    The frame rotates with the target, whose angular rate satisfies
    Omega = sqrt(mu / R^3) exactly; the target sits at (R, 0, 0) at rest.
    Keyword units: target_radius in au, thrust_acceleration in m/s^2,
    r0 in au, v0 in km/s.
    """
    R = float(target_radius)
    if R <= 0.0:
        raise ConfigError("target_radius must be positive")
    mu = 1.0
    omega = math.sqrt(mu / R**3)
    gamma = float(thrust_acceleration) * TU_TRANSFER_S**2 / AU_M
    vu_m_s = AU_M / TU_TRANSFER_S
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float) * 1e3 / vu_m_s
    if r0.shape != (3,) or v0.shape != (3,):
        raise ConfigError("r0 and v0 must each hold three components")
    x0 = np.concatenate([r0, v0])
    target = np.array([R, 0.0, 0.0, 0.0, 0.0, 0.0])
    year_tu = YEAR_S / TU_TRANSFER_S   # = 2*pi
    return ProblemDefinition(
        kind="transfer",
        constants=PhysicalConstants(mu=mu, omega=omega, gamma=gamma),
        x0=x0,
        target=target,
        units=UnitSystem(length_m=AU_M, time_s=TU_TRANSFER_S, mass_kg=1.0),
        input_scale=np.ones(6),
        costate_scale=np.ones(7),
        residual_scale=np.ones(8),
        tof_scale=year_tu,
        tof_bracket=(2.0 * year_tu, 8.0 * year_tu),
        r_floor=0.05,
        nominal_tof=4.62 * year_tu,
    )


def landing_problem(*,
                    mu: float = 1530348199.0,
                    spin_rate: float = 0.00041596,
                    thrust: float = 80.0,
                    isp: float = 600.0,
                    g0: float = 9.8,
                    m0: float = 600.0,
                    r0: tuple = (100.0, 150.0, 0.0),
                    v0: tuple = (0.025, -0.025, 0.02),
                    site: tuple = (30.27, 90.33, 32.09),
                    ) -> ProblemDefinition:
    """Mass-optimal descent to a fixed site on a rotating asteroid, km/s/kg.

    Keyword units: mu in m^3/s^2, spin_rate in rad/s, thrust in N, isp in s,
    g0 in m/s^2, m0 in kg, r0 and site in km, v0 in km/s.

    Scale choices: the site radius |r_t| fixes the length scale, omega*|r_t|
    the velocity scale, and the costate scales follow from the switching
    function (velocity costates are O(m0/c1) where thrust arcs switch) so a
    unit ball in scaled decision space covers physically plausible costates.
    """
    mu = float(mu) * 1e-9             # m^3/s^2 -> km^3/s^2
    omega = float(spin_rate)          # rad/s
    c1 = float(thrust) * 1e-3         # N -> kg*km/s^2
    isp = float(isp)                  # s
    g0 = float(g0) * 1e-3             # m/s^2 -> km/s^2
    m0 = float(m0)
    r0 = np.asarray(r0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    site = np.asarray(site, dtype=float)
    if r0.shape != (3,) or v0.shape != (3,) or site.shape != (3,):
        raise ConfigError("r0, v0 and site must each hold three components")
    x0 = np.concatenate([r0, v0, [m0]])
    target = np.concatenate([site, np.zeros(3)])
    site_radius = float(np.linalg.norm(target[:3]))
    v_scale = omega * site_radius
    t_char = 1.0 / omega
    s_lv = m0 / c1                    # velocity-costate scale from SF ~ O(1)
    s_lr = omega * s_lv               # lambda_r ~ lambda_v / t_char
    s_lm = t_char / m0                # from lambda_m_dot ~ c1 |lambda_v| / m^2
    return ProblemDefinition(
        kind="landing",
        constants=PhysicalConstants(mu=mu, omega=omega, c1=c1, isp=isp, g0=g0),
        x0=x0,
        target=target,
        units=UnitSystem(length_m=1e3, time_s=1.0, mass_kg=1.0),
        input_scale=np.array([site_radius] * 3 + [v_scale] * 3 + [m0]),
        costate_scale=np.array([s_lr] * 3 + [s_lv] * 3 + [s_lm]),
        residual_scale=np.array([1.0 / site_radius] * 3 + [1.0 / v_scale] * 3
                                + [1.0, 1.0 / s_lm]),
        tof_scale=t_char,
        tof_bracket=(10.0 * 60.0, 80.0 * 60.0),
        r_floor=1.0,
        m_floor=1.0,
        nominal_tof=38.0 * 60.0,
    )


def get_problem(kind: str, overrides: dict | None = None) -> ProblemDefinition:
    """Build a problem, optionally overriding its physical constants.

    ``overrides`` maps factory keyword names to values; an unknown name
    raises :class:`ConfigError` listing the valid ones.
    """
    if kind == "transfer":
        factory = transfer_problem
    elif kind == "landing":
        factory = landing_problem
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    try:
        return factory(**(overrides or {}))
    except TypeError:
        valid = sorted(inspect.signature(factory).parameters)
        raise ConfigError(
            f"unknown constant override for {kind!r}; valid names: {valid}"
        ) from None
