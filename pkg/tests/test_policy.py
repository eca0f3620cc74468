"""Policy network: forward values, analytic Jacobians vs finite differences,
initialization, normalization helpers, and the weights file format."""
import numpy as np
import pytest

from gcnet.errors import ConfigError, FormatError, ZeroNormPredictionError
from gcnet.policy import (
    PolicyNetwork,
    direction_slice,
    initialize_policy,
    layer_shapes,
    normalize_direction,
    parameter_count,
    softplus,
)

import oracles


def make_net(input_dim=6, hidden=(8, 8), head_tags=("linear",) * 3, seed=0,
             input_scale=None):
    n = parameter_count(input_dim, hidden, len(head_tags))
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n) * 0.5
    return PolicyNetwork(input_dim=input_dim, hidden=hidden,
                         head_tags=head_tags, theta=theta,
                         input_scale=input_scale)


class TestStructure:
    def test_layer_shapes_and_param_count(self):
        shapes = layer_shapes(6, (32, 32, 32), 3)
        assert shapes == [(32, 6), (32, 32), (32, 32), (3, 32)]
        assert parameter_count(6, (32, 32, 32), 3) == \
            32 * 6 + 32 + 32 * 32 + 32 + 32 * 32 + 32 + 3 * 32 + 3

    def test_theta_length_enforced(self):
        with pytest.raises(ConfigError):
            PolicyNetwork(input_dim=6, hidden=(4,),
                          head_tags=("linear",) * 3, theta=np.zeros(3))

    def test_layers_are_views(self):
        net = make_net()
        w0, _ = net.layers()[0]
        w0[0, 0] = 123.0
        assert net.theta[0] == 123.0

    def test_bad_head_tag(self):
        with pytest.raises(ConfigError):
            PolicyNetwork(input_dim=6, hidden=(4,), head_tags=("relu",),
                          theta=np.zeros(parameter_count(6, (4,), 1)))


class TestForwardValues:
    def test_zero_theta_linear_heads_are_zero(self):
        net = make_net(hidden=(5, 5))
        net = net.with_theta(np.zeros_like(net.theta))
        out = net.heads(np.ones(6))
        np.testing.assert_array_equal(out, np.zeros(3))
        with pytest.raises(ZeroNormPredictionError):
            normalize_direction(out)

    def test_zero_theta_sigmoid_head_is_half(self):
        net = make_net(input_dim=7, head_tags=("sigmoid",) + ("linear",) * 3)
        net = net.with_theta(np.zeros_like(net.theta))
        out = net.heads(np.ones(7))
        assert out[0] == pytest.approx(0.5, abs=1e-15)

    def test_single_neuron_softplus_of_zero(self):
        # x=0 -> preactivation 0 -> softplus -> ln 2 -> unit output weight
        theta = np.array([1.0, 0.0,    # W0, b0
                          1.0, 0.0])   # W1, b1
        net = PolicyNetwork(input_dim=1, hidden=(1,), head_tags=("linear",),
                            theta=theta)
        out = net.heads(np.zeros(1))
        assert out[0] == pytest.approx(np.log(2.0), rel=1e-15)

    def test_batch_matches_single(self):
        net = make_net(input_dim=7, head_tags=("sigmoid",) + ("linear",) * 3,
                       seed=3)
        rng = np.random.default_rng(4)
        xs = rng.standard_normal((11, 7))
        batch = net.forward_batch(xs)
        for x, row in zip(xs, batch):
            np.testing.assert_allclose(net.heads(x), row, rtol=1e-14, atol=0)

    def test_sigmoid_head_strictly_bounded(self):
        net = make_net(input_dim=7, head_tags=("sigmoid",) + ("linear",) * 3,
                       seed=5)
        rng = np.random.default_rng(6)
        out = net.forward_batch(rng.standard_normal((200, 7)) * 10)
        assert np.all(out[:, 0] > 0.0) and np.all(out[:, 0] < 1.0)

    def test_input_scale_divides_inputs(self):
        scale = np.array([2.0, 4.0, 8.0, 1.0, 1.0, 1.0])
        net = make_net(seed=7, input_scale=scale)
        plain = make_net(seed=7)
        x = np.array([2.0, 4.0, 8.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(net.heads(x), plain.heads(np.ones(6)),
                                   rtol=1e-15)

    def test_softplus_overflow_safe(self):
        z = np.array([-800.0, 0.0, 800.0])
        s = softplus(z)
        assert s[0] == 0.0
        assert s[1] == pytest.approx(np.log(2.0))
        assert s[2] == pytest.approx(800.0)
        assert np.all(np.isfinite(s))


class TestJacobians:
    @pytest.mark.parametrize("head_tags,input_dim", [
        (("linear",) * 3, 6),
        (("sigmoid",) + ("linear",) * 3, 7),
    ])
    def test_input_jacobian_matches_fd(self, head_tags, input_dim):
        rng = np.random.default_rng(8)
        for trial in range(50):
            net = make_net(input_dim=input_dim, hidden=(6, 5),
                           head_tags=head_tags, seed=100 + trial)
            x = rng.standard_normal(input_dim)
            _, dx, _ = net.heads_and_jacobians(x)
            fd = oracles.central_jacobian(net.heads, x, h=1e-6)
            assert oracles.relative_error(dx, fd, floor=1e-4) < 1e-5

    @pytest.mark.parametrize("head_tags,input_dim", [
        (("linear",) * 3, 6),
        (("sigmoid",) + ("linear",) * 3, 7),
    ])
    def test_param_jacobian_matches_fd(self, head_tags, input_dim):
        rng = np.random.default_rng(9)
        for trial in range(50):
            net = make_net(input_dim=input_dim, hidden=(5, 4),
                           head_tags=head_tags, seed=200 + trial)
            x = rng.standard_normal(input_dim)
            _, _, dtheta = net.heads_and_jacobians(x)
            fd = oracles.central_jacobian(
                lambda th: net.with_theta(th).heads(x), net.theta, h=1e-6)
            assert oracles.relative_error(dtheta, fd, floor=1e-4) < 1e-5

    def test_sigmoid_bias_gradient_quarter_at_zero_theta(self):
        net = make_net(input_dim=7, hidden=(4, 4),
                       head_tags=("sigmoid",) + ("linear",) * 3)
        net = net.with_theta(np.zeros_like(net.theta))
        _, _, dtheta = net.heads_and_jacobians(np.ones(7))
        # final-layer biases sit at the very end of theta
        n_heads = 4
        bias_block = dtheta[:, -n_heads:]
        assert bias_block[0, 0] == pytest.approx(0.25, abs=1e-15)

    def test_zero_final_weights_kill_input_jacobian(self):
        net = make_net(seed=11)
        w, b = net.layers()[-1]
        w[:] = 0.0
        _, dx, _ = net.heads_and_jacobians(np.ones(6))
        np.testing.assert_array_equal(dx, np.zeros_like(dx))

    def test_dead_path_parameters_have_zero_gradient(self):
        # zeroing the last-layer weights makes all upstream parameter
        # gradients vanish (only last-layer bias gradients survive)
        net = make_net(seed=12)
        w, _ = net.layers()[-1]
        w[:] = 0.0
        _, _, dtheta = net.heads_and_jacobians(np.ones(6))
        n_out, n_in = w.shape
        upstream = dtheta[:, :net.param_count - n_out * n_in - n_out]
        np.testing.assert_array_equal(upstream, np.zeros_like(upstream))

    def test_backprop_batch_consistent_with_per_state_jacobians(self):
        net = make_net(input_dim=7, head_tags=("sigmoid",) + ("linear",) * 3,
                       seed=13)
        rng = np.random.default_rng(14)
        xs = rng.standard_normal((6, 7))
        cotangents = rng.standard_normal((6, 4))
        _, cache = net.forward_batch(xs, want_cache=True)
        grad = net.backprop_batch(cache, cotangents)
        expect = np.zeros_like(net.theta)
        for x, c in zip(xs, cotangents):
            _, _, dtheta = net.heads_and_jacobians(x)
            expect += c @ dtheta
        np.testing.assert_allclose(grad, expect, rtol=1e-10, atol=1e-12)


class TestNormalization:
    def test_unit_norm_and_scale_invariance(self):
        rng = np.random.default_rng(15)
        raw = rng.standard_normal(3)
        t1 = normalize_direction(raw)
        t2 = normalize_direction(raw * 1e6)
        assert np.linalg.norm(t1) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(t1, t2, rtol=0, atol=1e-12)

    def test_zero_norm_raises(self):
        with pytest.raises(ZeroNormPredictionError):
            normalize_direction(np.zeros(3))

    def test_direction_slice(self):
        assert direction_slice(("linear",) * 3) == slice(0, 3)
        assert direction_slice(("sigmoid", "linear", "linear", "linear")) == \
            slice(1, 4)


class TestInitialization:
    def test_deterministic_and_problem_shapes(self):
        a = initialize_policy("transfer", np.ones(6), hidden=(16, 16), seed=1)
        b = initialize_policy("transfer", np.ones(6), hidden=(16, 16), seed=1)
        np.testing.assert_array_equal(a.theta, b.theta)
        assert a.input_dim == 6 and a.head_tags == ("linear",) * 3
        c = initialize_policy("landing", np.ones(7), seed=1)
        assert c.input_dim == 7
        assert c.head_tags == ("sigmoid", "linear", "linear", "linear")

    def test_biases_start_at_zero(self):
        net = initialize_policy("transfer", np.ones(6), hidden=(8,), seed=2)
        for _, b in net.layers():
            np.testing.assert_array_equal(b, np.zeros_like(b))


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        net = make_net(input_dim=7, head_tags=("sigmoid",) + ("linear",) * 3,
                       seed=16, input_scale=np.arange(1.0, 8.0))
        p1 = tmp_path / "net.wts"
        net.save(p1)
        loaded = PolicyNetwork.load(p1)
        np.testing.assert_array_equal(loaded.theta, net.theta)
        assert loaded.hidden == net.hidden
        assert loaded.head_tags == net.head_tags
        np.testing.assert_array_equal(loaded.input_scale, net.input_scale)
        p2 = tmp_path / "again.wts"
        loaded.save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_payload_rejected(self, tmp_path):
        net = make_net()
        path = tmp_path / "net.wts"
        net.save(path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(FormatError):
            PolicyNetwork.load(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.wts"
        path.write_bytes(b"NOTWEIGH" + b"\x00" * 32)
        with pytest.raises(FormatError):
            PolicyNetwork.load(path)

    def test_unknown_version_rejected(self, tmp_path):
        net = make_net()
        path = tmp_path / "net.wts"
        net.save(path)
        blob = bytearray(path.read_bytes())
        blob[8] = 200
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            PolicyNetwork.load(path)
