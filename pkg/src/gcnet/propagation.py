"""Error-controlled propagation with dense output and parameter sensitivities.

The integrator contract is an adaptive scheme of order >= 7 with a dense
interpolant; scipy's DOP853 (order 8, order-7 interpolant) provides it.
Equally spaced samples are taken from the dense output of the same pass
that produces the final state, forward or backward in time.

Parameter sensitivities S = dx/dtheta evolve by the variational system

    S_dot = (df/dx + df/du du/dx) S + df/du du/dtheta,   S(t0) = 0,

propagated jointly with the state under one error control (no adjoint,
no checkpointing).  Systems expose rates and partials through the
:class:`ParametricOde` protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, runtime_checkable

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, DynamicsError, PropagationError, StepBudgetError

DEFAULT_TOL = 1e-12
DEFAULT_STEP_BUDGET = 5_000_000   # right-hand-side evaluations


@dataclass
class PropagationSpec:
    """One integration request; tf < t0 integrates backward."""

    t0: float
    tf: float
    rel_tol: float = DEFAULT_TOL
    abs_tol: float | np.ndarray = DEFAULT_TOL   # scalar or per-component
    sample_count: int = 100
    step_budget: int = DEFAULT_STEP_BUDGET

    def __post_init__(self):
        for name, tol in (("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)):
            values = np.atleast_1d(np.asarray(tol, float))
            if not np.all((values > 0.0) & (values <= 1e-3)):
                raise ConfigError(f"{name} must lie in (0, 1e-3], got {tol}")
        if self.sample_count < 2:
            raise ConfigError("sample_count must be at least 2")
        if self.tf == self.t0:
            raise ConfigError("tf must differ from t0")
        if self.step_budget <= 0:
            raise ConfigError("step_budget must be positive")


@dataclass
class PropagationResult:
    times: np.ndarray                 # (sample_count,), equally spaced t0..tf
    states: np.ndarray                # (sample_count, dim)
    final_state: np.ndarray           # states[-1], at exactly tf
    n_rhs_evals: int
    n_steps: int
    dense: Callable[[float], np.ndarray] | None = field(default=None, repr=False)


def propagate(spec: PropagationSpec,
              rhs: Callable[[float, np.ndarray], np.ndarray],
              y0: np.ndarray,
              dense: bool = False) -> PropagationResult:
    """Integrate rhs from (t0, y0) to tf and sample the dense interpolant."""
    budget = spec.step_budget
    count = [0]

    def guarded(t, y):
        count[0] += 1
        if count[0] > budget:
            raise StepBudgetError(
                f"step budget {budget} exhausted at t = {t}", time=float(t))
        try:
            return rhs(t, y)
        except DynamicsError as exc:
            raise PropagationError(str(exc), time=float(t)) from exc

    t_eval = np.linspace(spec.t0, spec.tf, spec.sample_count)
    sol = solve_ivp(guarded, (spec.t0, spec.tf), np.asarray(y0, float),
                    method="DOP853", rtol=spec.rel_tol, atol=spec.abs_tol,
                    t_eval=t_eval, dense_output=True)
    if not sol.success:
        reached = float(sol.t[-1]) if sol.t.size else spec.t0
        raise PropagationError(f"integration failed: {sol.message}", time=reached)
    states = sol.y.T.copy()
    return PropagationResult(
        times=t_eval,
        states=states,
        final_state=states[-1],
        n_rhs_evals=count[0],
        n_steps=len(sol.sol.ts) - 1,
        dense=sol.sol if dense else None,
    )


@runtime_checkable
class ParametricOde(Protocol):
    """Autonomous ODE with parameters: rates plus analytic partials."""

    state_dim: int
    param_count: int

    def rates(self, x: np.ndarray) -> np.ndarray:
        """f(x), shape (state_dim,)."""
        ...

    def rates_and_partials(
            self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """f(x), df/dx (d, d), df/dtheta (d, P)."""
        ...


@dataclass
class SensitivityResult:
    times: np.ndarray
    states: np.ndarray                # (sample_count, d); state part only
    final_state: np.ndarray           # (d,)
    final_sensitivity: np.ndarray     # (d, P) = dx(tf)/dtheta
    n_rhs_evals: int


def propagate_with_sensitivities(spec: PropagationSpec, system: ParametricOde,
                                 x0: np.ndarray) -> SensitivityResult:
    """Propagate state and dx/dtheta jointly from S(t0) = 0."""
    d, p = system.state_dim, system.param_count
    x0 = np.asarray(x0, float)
    if x0.shape != (d,):
        raise ConfigError(f"x0 must have shape ({d},)")

    def combined_rhs(t, y):
        x = y[:d]
        s = y[d:].reshape(d, p)
        f, dfdx, dfdtheta = system.rates_and_partials(x)
        out = np.empty_like(y)
        out[:d] = f
        ds = out[d:].reshape(d, p)
        np.matmul(dfdx, s, out=ds)
        ds += dfdtheta
        return out

    y0 = np.zeros(d + d * p)
    y0[:d] = x0
    result = propagate(spec, combined_rhs, y0)
    return SensitivityResult(
        times=result.times,
        states=result.states[:, :d].copy(),
        final_state=result.final_state[:d].copy(),
        final_sensitivity=result.final_state[d:].reshape(d, p).copy(),
        n_rhs_evals=result.n_rhs_evals,
    )
