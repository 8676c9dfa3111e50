"""Tests for the dense network core and checkpoints."""

import json

import numpy as np
import pytest

from geonav.core.exceptions import ArchitectureMismatchError, NonFiniteError, ShapeMismatchError
from geonav.learn.neural import (
    AdamState,
    Mlp,
    adam_step,
    assert_finite,
    backward,
    forward,
    load_checkpoint,
    polyak_update,
    save_checkpoint,
)


@pytest.fixture
def net():
    return Mlp([4, 6, 5, 2], "tanh", np.random.default_rng(11))


def _loss(net, x, upstream):
    return float(np.sum(upstream * forward(net, x)))


class TestMlp:
    """Test cases for network construction and the forward pass."""

    def test_shapes(self, net):
        assert [w.shape for w in net.weights] == [(4, 6), (6, 5), (5, 2)]
        assert forward(net, np.zeros(4)).shape == (2,)
        assert forward(net, np.zeros((7, 4))).shape == (7, 2)

    def test_tanh_output_is_bounded(self, net):
        out = forward(net, np.random.default_rng(0).normal(scale=100.0, size=(20, 4)))
        assert np.all(np.abs(out) <= 1.0)

    def test_zero_initialized_without_rng(self):
        net = Mlp([3, 4, 1])
        assert np.array_equal(forward(net, np.ones(3)), np.zeros(1))

    def test_same_rng_same_network(self):
        a = Mlp([4, 6, 2], "tanh", np.random.default_rng(5))
        b = Mlp([4, 6, 2], "tanh", np.random.default_rng(5))
        assert a.checksum() == b.checksum()

    def test_wrong_input_width(self, net):
        with pytest.raises(ShapeMismatchError):
            forward(net, np.zeros(3))

    @pytest.mark.parametrize("dims", [[4], [4, 0, 2], []])
    def test_invalid_dims(self, dims):
        with pytest.raises(ShapeMismatchError):
            Mlp(dims)

    def test_unknown_activation(self):
        with pytest.raises(ValueError):
            Mlp([2, 2], "sigmoid")

    def test_copy_is_independent(self, net):
        clone = net.copy()
        clone.weights[0][0, 0] += 1.0
        assert clone.checksum() != net.checksum()
        assert clone.same_architecture(net)

    def test_load_flat_size_checked(self, net):
        with pytest.raises(ShapeMismatchError):
            net.load_flat(np.zeros(3))

    def test_flat_round_trip(self, net):
        other = Mlp(net.layer_dims, "tanh")
        other.load_flat(net.flat())
        assert other.checksum() == net.checksum()


class TestBackward:
    """Test cases for reverse-mode gradients against central differences."""

    def test_parameter_gradients(self, net):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(5, 4))
        upstream = rng.normal(size=(5, 2))
        grads, _ = backward(net, x, upstream)
        eps = 1e-6
        for param, grad in zip(net.params(), grads.params()):
            for idx in [(0,) * param.ndim, tuple(s - 1 for s in param.shape)]:
                saved = param[idx]
                param[idx] = saved + eps
                up = _loss(net, x, upstream)
                param[idx] = saved - eps
                down = _loss(net, x, upstream)
                param[idx] = saved
                assert grad[idx] == pytest.approx((up - down) / (2 * eps), rel=1e-4, abs=1e-7)

    def test_input_gradient(self, net):
        rng = np.random.default_rng(4)
        x = rng.normal(size=4)
        upstream = np.array([1.0, -2.0])
        _, input_grad = backward(net, x, upstream)
        assert input_grad.shape == (4,)
        eps = 1e-6
        for k in range(4):
            step = np.zeros(4)
            step[k] = eps
            numeric = (_loss(net, x + step, upstream) - _loss(net, x - step, upstream)) / (2 * eps)
            assert input_grad[k] == pytest.approx(numeric, rel=1e-4, abs=1e-7)

    def test_upstream_shape_checked(self, net):
        with pytest.raises(ShapeMismatchError):
            backward(net, np.zeros((3, 4)), np.zeros((3, 3)))


class TestAdam:
    """Test cases for the Adam update."""

    def test_two_steps_constant_gradient(self):
        p = [np.array([1.0])]
        state = AdamState.for_params(p, lr=0.1)
        for _ in range(2):
            adam_step(p, [np.array([0.5])], state)
        assert state.t == 2
        assert p[0][0] == pytest.approx(1.0 - 2 * 0.1 * 0.5 / (0.5 + 1e-8), rel=1e-12)

    def test_non_finite_gradient_changes_nothing(self):
        p = [np.array([1.0, 2.0])]
        state = AdamState.for_params(p)
        with pytest.raises(NonFiniteError):
            adam_step(p, [np.array([0.1, np.nan])], state)
        assert np.array_equal(p[0], [1.0, 2.0])
        assert state.t == 0

    def test_shape_mismatch(self):
        p = [np.zeros(2)]
        with pytest.raises(ShapeMismatchError):
            adam_step(p, [np.zeros(3)], AdamState.for_params(p))

    def test_state_arrays_round_trip(self):
        p = [np.zeros((2, 2)), np.zeros(2)]
        state = AdamState.for_params(p)
        adam_step(p, [np.ones((2, 2)), np.ones(2)], state)
        restored = AdamState.for_params(p)
        restored.load_arrays(state.arrays())
        assert restored.t == 1
        assert all(np.array_equal(a, b) for a, b in zip(restored.m, state.m))
        assert all(np.array_equal(a, b) for a, b in zip(restored.v, state.v))


class TestPolyak:
    """Test cases for target tracking."""

    def test_full_step_copies(self, net):
        target = Mlp(net.layer_dims, "tanh")
        polyak_update(target, net, 1.0)
        assert np.allclose(target.flat(), net.flat())

    def test_slow_tracking_converges(self):
        online = Mlp([2, 2])
        online.load_flat(np.ones(online.flat().size))
        target = Mlp([2, 2])
        for _ in range(1000):
            polyak_update(target, online, 0.005)
        assert np.all(np.abs(target.flat() - 1.0) < 0.01)

    def test_architecture_mismatch(self):
        with pytest.raises(ArchitectureMismatchError):
            polyak_update(Mlp([2, 3]), Mlp([2, 4]), 0.5)


class TestCheckpoints:
    """Test cases for checkpoint files."""

    def test_round_trip(self, net, tmp_path):
        path = save_checkpoint(
            tmp_path / "ckpt" / "model.json", {"actor": net, "critic": Mlp([3, 1])},
            arrays={"extra": np.arange(6.0).reshape(2, 3)}, metadata={"role": "teacher"},
        )
        assert path.with_suffix(".bin").exists()
        ckpt = load_checkpoint(path)
        assert ckpt.networks["actor"].checksum() == net.checksum()
        assert ckpt.networks["actor"].output_activation == "tanh"
        assert ckpt.networks["critic"].layer_dims == [3, 1]
        assert np.array_equal(ckpt.arrays["extra"], np.arange(6.0).reshape(2, 3))
        assert ckpt.metadata == {"role": "teacher"}

    def test_tampered_sidecar(self, net, tmp_path):
        path = save_checkpoint(tmp_path / "model.json", {"actor": net})
        payload = bytearray(path.with_suffix(".bin").read_bytes())
        payload[0] ^= 0xFF
        path.with_suffix(".bin").write_bytes(bytes(payload))
        with pytest.raises(ValueError, match="checksum"):
            load_checkpoint(path)

    def test_foreign_manifest(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"format": "other"}), encoding="utf-8")
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestAssertFinite:
    """Test cases for assert_finite."""

    def test_passes_value_through(self):
        assert assert_finite(1.5, "loss") == 1.5

    def test_raises_with_diagnostics(self):
        with pytest.raises(NonFiniteError) as exc:
            assert_finite(float("inf"), "loss", step=3.0)
        assert exc.value.diagnostics == {"step": 3.0}
