"""Closed-loop dynamics: the policy network steering the spacecraft.

The network's head outputs map to the control vector of the owning problem
(thrust direction for the transfer; throttle plus direction for the
landing), with the raw direction head normalized before it touches the
dynamics.  The class implements the :class:`~gcnet.propagation.ParametricOde`
protocol, so terminal-state sensitivities dx(t*)/dtheta come from forward
variational propagation:

    d(dx/dtheta)/dt = (df/dx + df/dc dc/dx) dx/dtheta + df/dc dc/dtheta

where c is the control vector and dc/dx, dc/dtheta chain the analytic
network Jacobians through the direction normalization.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    ConfigError,
    DegenerateCostateError,
    NonPositiveMassError,
    SingularRadiusError,
)
from .policy import DIRECTION_NORM_FLOOR, PolicyNetwork, direction_slice
from .problems import ProblemDefinition
from .propagation import PropagationResult, PropagationSpec, propagate


class PolicyControlledDynamics:
    """State rates and analytic partials for a policy-steered spacecraft."""

    def __init__(self, problem: ProblemDefinition, net: PolicyNetwork):
        expected_heads = 3 if problem.kind == "transfer" else 4
        if net.input_dim != problem.state_dim:
            raise ConfigError(
                f"network input dim {net.input_dim} != state dim "
                f"{problem.state_dim}")
        if net.output_dim != expected_heads:
            raise ConfigError(
                f"network needs {expected_heads} heads for {problem.kind}")
        self.problem = problem
        self.net = net
        self.state_dim = problem.state_dim
        self.param_count = net.param_count
        self._dir = direction_slice(net.head_tags)
        if problem.kind == "landing":
            sig = [j for j, tag in enumerate(net.head_tags) if tag == "sigmoid"]
            if len(sig) != 1:
                raise ConfigError("landing networks need one sigmoid head")
            self._throttle = sig[0]
        else:
            self._throttle = None

    # -- control extraction ---------------------------------------------------

    def controls(self, x: np.ndarray) -> np.ndarray:
        """[t_hat] or [u, t_hat] with the direction normalized."""
        heads = self.net.heads(x)
        raw = heads[self._dir]
        n = float(np.linalg.norm(raw))
        if n <= DIRECTION_NORM_FLOOR:
            raise DegenerateCostateError(f"direction norm {n} below floor")
        t_hat = raw / n
        if self._throttle is None:
            return t_hat
        return np.concatenate([[heads[self._throttle]], t_hat])

    def _controls_and_jacobians(self, x: np.ndarray):
        heads, dheads_dx, dheads_dth = self.net.heads_and_jacobians(x)
        raw = heads[self._dir]
        n = float(np.linalg.norm(raw))
        if n <= DIRECTION_NORM_FLOOR:
            raise DegenerateCostateError(f"direction norm {n} below floor")
        t_hat = raw / n
        # normalization Jacobian: (I - y y^T) / |raw|
        proj = (np.eye(3) - np.outer(t_hat, t_hat)) / n
        if self._throttle is None:
            c = t_hat
            dc_dx = proj @ dheads_dx[self._dir]
            dc_dth = proj @ dheads_dth[self._dir]
        else:
            j = self._throttle
            c = np.concatenate([[heads[j]], t_hat])
            dc_dx = np.vstack([dheads_dx[j:j + 1],
                               proj @ dheads_dx[self._dir]])
            dc_dth = np.vstack([dheads_dth[j:j + 1],
                                proj @ dheads_dth[self._dir]])
        return c, dc_dx, dc_dth

    # -- dynamics and partials --------------------------------------------------

    def _rates(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        k = self.problem.constants
        r, v = x[0:3], x[3:6]
        rn = float(np.linalg.norm(r))
        if rn <= self.problem.r_floor:
            raise SingularRadiusError(
                f"radius {rn} at or below floor {self.problem.r_floor}")
        r3 = rn**3
        coriolis = np.array([2.0 * k.omega * v[1], -2.0 * k.omega * v[0], 0.0])
        centrifugal = np.array([k.omega**2 * r[0], k.omega**2 * r[1], 0.0])
        grav = -k.mu / r3 * r
        if self.problem.kind == "transfer":
            acc = grav + coriolis + centrifugal + k.gamma * c
            return np.concatenate([v, acc])
        u, t_hat = float(c[0]), c[1:4]
        m = float(x[6])
        if m <= self.problem.m_floor:
            raise NonPositiveMassError(
                f"mass {m} at or below floor {self.problem.m_floor}")
        acc = grav + coriolis + centrifugal + u * k.c1 / m * t_hat
        m_dot = -u * k.c1 / k.exhaust_velocity
        return np.concatenate([v, acc, [m_dot]])

    def _dfdx_fixed_control(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        """df/dx at frozen control: gravity gradient + frame terms (+ mass)."""
        k = self.problem.constants
        d = self.state_dim
        r = x[0:3]
        rn = float(np.linalg.norm(r))
        r3, r5 = rn**3, rn**5
        grav_grad = -k.mu * (np.eye(3) / r3 - 3.0 * np.outer(r, r) / r5)
        out = np.zeros((d, d))
        out[0:3, 3:6] = np.eye(3)
        out[3:6, 0:3] = grav_grad
        out[3, 0] += k.omega**2
        out[4, 1] += k.omega**2
        out[3, 4] += 2.0 * k.omega
        out[4, 3] -= 2.0 * k.omega
        if self.problem.kind == "landing":
            u, t_hat = float(c[0]), c[1:4]
            m = float(x[6])
            out[3:6, 6] = -u * k.c1 / m**2 * t_hat
        return out

    def _dfdc(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        """df/dc at the current control vector."""
        k = self.problem.constants
        d = self.state_dim
        if self.problem.kind == "transfer":
            out = np.zeros((d, 3))
            out[3:6, :] = k.gamma * np.eye(3)
            return out
        u, t_hat = float(c[0]), c[1:4]
        m = float(x[6])
        out = np.zeros((d, 4))
        # column 0: throttle; columns 1..3: direction
        out[3:6, 0] = k.c1 / m * t_hat
        out[3:6, 1:4] = u * k.c1 / m * np.eye(3)
        out[6, 0] = -k.c1 / k.exhaust_velocity
        return out

    def rates(self, x: np.ndarray) -> np.ndarray:
        return self._rates(x, self.controls(x))

    def rates_and_partials(self, x: np.ndarray):
        c, dc_dx, dc_dth = self._controls_and_jacobians(x)
        f = self._rates(x, c)
        dfdc = self._dfdc(x, c)
        dfdx = self._dfdx_fixed_control(x, c) + dfdc @ dc_dx
        dfdtheta = dfdc @ dc_dth
        return f, dfdx, dfdtheta


def rollout(problem: ProblemDefinition, net: PolicyNetwork, x0: np.ndarray,
            duration: float, rel_tol: float = 1e-9,
            abs_tol: float | np.ndarray | None = None,
            sample_count: int = 100) -> PropagationResult:
    """Closed-loop propagation of the policy for a fixed duration."""
    system = PolicyControlledDynamics(problem, net)
    if abs_tol is None:
        abs_tol = rel_tol * state_tolerance_scale(problem)
    spec = PropagationSpec(t0=0.0, tf=duration, rel_tol=rel_tol,
                           abs_tol=abs_tol, sample_count=sample_count)
    return propagate(spec, lambda t, y: system.rates(y), x0)


def state_tolerance_scale(problem: ProblemDefinition) -> np.ndarray:
    """Absolute-tolerance scale for state-only propagation."""
    if problem.kind == "transfer":
        return np.ones(6)
    return problem.input_scale.copy()
