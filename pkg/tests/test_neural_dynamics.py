"""Closed-loop policy dynamics: rates vs the open-loop right-hand side,
analytic state/parameter partials vs finite differences, rollouts."""
import numpy as np
import pytest

from gcnet.dynamics import (
    ControlCommand,
    LandingState,
    TransferState,
    landing_rhs,
    transfer_rhs,
)
from gcnet.errors import ConfigError
from gcnet.neural_dynamics import (
    PolicyControlledDynamics,
    rollout,
    state_tolerance_scale,
)
from gcnet.policy import initialize_policy, normalize_direction
from gcnet.problems import landing_problem, transfer_problem
from gcnet.propagation import propagate_with_sensitivities, PropagationSpec

import oracles


@pytest.fixture(scope="module")
def transfer():
    return transfer_problem()


@pytest.fixture(scope="module")
def landing():
    return landing_problem()


def transfer_net(transfer, seed=0):
    net = initialize_policy("transfer", transfer.input_scale, hidden=(8, 8),
                            seed=seed)
    rng = np.random.default_rng(seed + 1)
    return net.with_theta(net.theta + 0.3 * rng.standard_normal(net.param_count))


def landing_net(landing, seed=0):
    net = initialize_policy("landing", landing.input_scale, hidden=(8, 8),
                            seed=seed)
    rng = np.random.default_rng(seed + 1)
    return net.with_theta(net.theta + 0.3 * rng.standard_normal(net.param_count))


def random_transfer_states(transfer, n, seed):
    rng = np.random.default_rng(seed)
    base = np.concatenate([transfer.x0])
    out = base + 0.2 * rng.standard_normal((n, 6)) * transfer.input_scale
    return out


def random_landing_states(landing, n, seed):
    rng = np.random.default_rng(seed)
    out = landing.x0 + 0.05 * rng.standard_normal((n, 7)) * landing.input_scale
    out[:, 6] = np.clip(out[:, 6], 550.0, 650.0)
    return out


class TestGuards:
    def test_input_dim_mismatch(self, transfer, landing):
        with pytest.raises(ConfigError):
            PolicyControlledDynamics(landing, transfer_net(transfer))
        with pytest.raises(ConfigError):
            PolicyControlledDynamics(transfer, landing_net(landing))

    def test_dims_exported(self, transfer):
        net = transfer_net(transfer)
        sys_ = PolicyControlledDynamics(transfer, net)
        assert sys_.state_dim == 6
        assert sys_.param_count == net.param_count


class TestRates:
    def test_transfer_rates_match_open_loop_rhs(self, transfer):
        net = transfer_net(transfer)
        sys_ = PolicyControlledDynamics(transfer, net)
        for x in random_transfer_states(transfer, 20, 2):
            t_hat = normalize_direction(net.heads(x))
            expect = transfer_rhs(TransferState.from_array(x), ControlCommand(t_hat=t_hat),
                                  transfer.constants)
            np.testing.assert_allclose(sys_.rates(x), expect, rtol=1e-13,
                                       atol=1e-16)

    def test_landing_rates_match_open_loop_rhs(self, landing):
        net = landing_net(landing)
        sys_ = PolicyControlledDynamics(landing, net)
        for x in random_landing_states(landing, 20, 3):
            heads = net.heads(x)
            cmd = ControlCommand(t_hat=normalize_direction(heads[1:4]),
                                 u=float(heads[0]))
            expect = landing_rhs(LandingState.from_array(x), cmd, landing.constants)
            np.testing.assert_allclose(sys_.rates(x), expect, rtol=1e-13,
                                       atol=1e-16)

    def test_controls_unit_direction(self, landing):
        net = landing_net(landing, seed=4)
        sys_ = PolicyControlledDynamics(landing, net)
        for x in random_landing_states(landing, 10, 5):
            c = sys_.controls(x)
            assert 0.0 < c[0] < 1.0
            assert np.linalg.norm(c[1:4]) == pytest.approx(1.0, abs=1e-12)


class TestPartials:
    def test_transfer_partials_match_fd(self, transfer):
        net = transfer_net(transfer, seed=6)
        sys_ = PolicyControlledDynamics(transfer, net)
        for x in random_transfer_states(transfer, 5, 7):
            f, dfdx, dfdth = sys_.rates_and_partials(x)
            np.testing.assert_allclose(f, sys_.rates(x), rtol=1e-14)
            fd_x = oracles.central_jacobian(sys_.rates, x, h=1e-6)
            assert oracles.relative_error(dfdx, fd_x, floor=1e-4) < 1e-5

            def with_theta(th, x=x):
                return PolicyControlledDynamics(
                    transfer, net.with_theta(th)).rates(x)
            fd_th = oracles.central_jacobian(with_theta, net.theta, h=1e-6)
            assert oracles.relative_error(dfdth, fd_th, floor=1e-4) < 1e-5

    def test_landing_partials_match_fd(self, landing):
        net = landing_net(landing, seed=8)
        sys_ = PolicyControlledDynamics(landing, net)
        for x in random_landing_states(landing, 5, 9):
            f, dfdx, dfdth = sys_.rates_and_partials(x)
            fd_x = oracles.central_jacobian(sys_.rates, x, h=1e-6)
            assert oracles.relative_error(dfdx, fd_x, floor=1e-4) < 1e-5

            def with_theta(th, x=x):
                return PolicyControlledDynamics(
                    landing, net.with_theta(th)).rates(x)
            fd_th = oracles.central_jacobian(with_theta, net.theta, h=1e-6)
            assert oracles.relative_error(dfdth, fd_th, floor=1e-4) < 1e-5

    def test_terminal_sensitivity_matches_fd(self, transfer):
        # dx(tf)/dtheta via variational propagation vs central differences
        net = initialize_policy("transfer", transfer.input_scale, hidden=(4,),
                                seed=10)
        rng = np.random.default_rng(11)
        net = net.with_theta(net.theta + 0.2 * rng.standard_normal(net.param_count))
        sys_ = PolicyControlledDynamics(transfer, net)
        x0 = transfer.x0.copy()
        tf = 0.3
        spec = PropagationSpec(0.0, tf, rel_tol=1e-11, abs_tol=1e-11,
                               sample_count=2)
        sens = propagate_with_sensitivities(spec, sys_, x0)

        probe = rng.standard_normal(net.param_count)
        h = 1e-6

        def endpoint(scale):
            shifted = PolicyControlledDynamics(
                transfer, net.with_theta(net.theta + scale * probe))
            spec2 = PropagationSpec(0.0, tf, rel_tol=1e-12, abs_tol=1e-12,
                                    sample_count=2)
            from gcnet.propagation import propagate
            return propagate(spec2, lambda t, y: shifted.rates(y), x0).final_state

        fd_dir = (endpoint(h) - endpoint(-h)) / (2.0 * h)
        got = sens.final_sensitivity @ probe
        assert oracles.relative_error(got, fd_dir, floor=1e-7) < 1e-5


class TestRollout:
    def test_rollout_grid_and_determinism(self, transfer):
        net = transfer_net(transfer, seed=12)
        a = rollout(transfer, net, transfer.x0, 1.0, sample_count=33)
        b = rollout(transfer, net, transfer.x0, 1.0, sample_count=33)
        assert a.times.shape == (33,)
        assert a.times[0] == 0.0 and a.times[-1] == pytest.approx(1.0)
        assert a.states.shape == (33, 6)
        np.testing.assert_array_equal(a.states, b.states)

    def test_landing_rollout_burns_mass(self, landing):
        net = landing_net(landing, seed=13)
        res = rollout(landing, net, landing.x0, 300.0, sample_count=20)
        m = res.states[:, 6]
        assert np.all(np.diff(m) < 0.0)
        assert m[-1] > landing.m_floor

    def test_tolerance_scale_shapes(self, transfer, landing):
        assert state_tolerance_scale(transfer).shape == (6,)
        np.testing.assert_array_equal(state_tolerance_scale(landing),
                                      landing.input_scale)
