"""
Tests for optimizers, gradient clipping and the Module parameter container.
"""

import numpy as np
import pytest

from moesearch.core.errors import ParameterError
from moesearch.core.module import Module
from moesearch.core.optim import SGD, Adam, Lamb, clip_grad_norm, create_optimizer
from moesearch.core.tensor import Tensor, parameter, tensor_sum


def quadratic_step(optimizer, param, target):
    optimizer.zero_grad()
    diff = param - target
    tensor_sum(diff * diff).backward()
    optimizer.step()


class TestOptimizers:
    @pytest.mark.parametrize("kind", ["sgd", "adam"])
    def test_minimizes_quadratic(self, kind):
        param = parameter(np.array([3.0, -2.0, 0.5]))
        target = np.array([1.0, 1.0, 1.0])
        optimizer = create_optimizer(kind, [param], lr=0.05)
        for _ in range(600):
            quadratic_step(optimizer, param, target)
        np.testing.assert_allclose(param.data, target, atol=0.05)

    def test_lamb_reduces_quadratic(self):
        param = parameter(np.array([3.0, -2.0, 0.5]))
        target = np.ones(3)
        optimizer = create_optimizer("lamb", [param], lr=0.01)
        start = float(((param.data - target) ** 2).sum())
        for _ in range(200):
            quadratic_step(optimizer, param, target)
        assert float(((param.data - target) ** 2).sum()) < 0.1 * start

    def test_sgd_single_step(self):
        param = parameter(np.array([1.0]))
        param.grad = np.array([2.0])
        SGD([param], lr=0.1).step()
        np.testing.assert_allclose(param.data, [0.8])

    def test_adam_first_step_is_lr_times_sign(self):
        param = parameter(np.array([1.0, 1.0]))
        param.grad = np.array([4.0, -0.01])
        Adam([param], lr=0.1).step()
        np.testing.assert_allclose(param.data, [0.9, 1.1], rtol=1e-6)

    def test_params_without_grad_are_untouched(self):
        used = parameter(np.array([1.0]))
        idle = parameter(np.array([5.0]))
        optimizer = Adam([used, idle], lr=0.1)
        used.grad = np.array([1.0])
        optimizer.step()
        assert idle.data[0] == 5.0
        assert optimizer.state_dict().keys() == {"step_count", "m.0", "v.0", "t.0"}

    def test_state_dict_round_trip(self):
        a = parameter(np.array([1.0, 2.0]))
        b = parameter(np.array([1.0, 2.0]))
        first = Adam([a], lr=0.1)
        for _ in range(3):
            quadratic_step(first, a, np.zeros(2))
        second = Adam([b], lr=0.1)
        b.data = a.data.copy()
        second.load_state_dict(first.state_dict())
        quadratic_step(first, a, np.zeros(2))
        quadratic_step(second, b, np.zeros(2))
        np.testing.assert_array_equal(a.data, b.data)
        assert second.step_count == first.step_count

    def test_lamb_trust_ratio_scales_with_weight_norm(self):
        small = parameter(np.array([0.1, 0.0]))
        large = parameter(np.array([10.0, 0.0]))
        small.grad = np.array([1.0, 0.0])
        large.grad = np.array([1.0, 0.0])
        Lamb([small], lr=0.1).step()
        Lamb([large], lr=0.1).step()
        assert (10.0 - large.data[0]) > (0.1 - small.data[0])

    def test_invalid_learning_rate(self):
        with pytest.raises(ParameterError):
            SGD([parameter(np.zeros(1))], lr=0.0)

    def test_unknown_optimizer(self):
        with pytest.raises(ParameterError, match="unknown optimizer"):
            create_optimizer("rmsprop", [], lr=0.1)


class TestClipGradNorm:
    def test_clips_global_norm(self):
        a, b = parameter(np.zeros(1)), parameter(np.zeros(1))
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        norm = clip_grad_norm([a, b], max_norm=1.0)
        assert norm == pytest.approx(5.0)
        assert np.hypot(a.grad[0], b.grad[0]) == pytest.approx(1.0)

    def test_below_threshold_unchanged(self):
        a = parameter(np.zeros(2))
        a.grad = np.array([0.3, 0.4])
        clip_grad_norm([a], max_norm=1.0)
        np.testing.assert_array_equal(a.grad, [0.3, 0.4])

    def test_no_grads(self):
        assert clip_grad_norm([parameter(np.zeros(2))], 1.0) == 0.0


class _Child(Module):
    def __init__(self):
        self.weight = parameter(np.ones((2, 2)))
        self.constant = Tensor(np.ones(2))


class _Parent(Module):
    def __init__(self):
        self.first = _Child()
        self.blocks = [_Child(), _Child()]
        self.bias = parameter(np.zeros(2))
        self.alias = self.bias


class TestModule:
    def test_parameter_discovery_order(self):
        names = [name for name, _ in _Parent().named_parameters()]
        assert names == ["first.weight", "blocks.0.weight", "blocks.1.weight", "bias"]

    def test_num_parameters_skips_constants_and_aliases(self):
        assert _Parent().num_parameters() == 3 * 4 + 2

    def test_train_eval_propagates(self):
        model = _Parent().eval()
        assert not any(m.training for m in model.modules())
        model.train()
        assert all(m.training for m in model.modules())

    def test_state_dict_round_trip(self):
        source, target = _Parent(), _Parent()
        source.bias.data += 3.0
        target.load_state_dict(source.state_dict())
        np.testing.assert_array_equal(target.bias.data, [3.0, 3.0])

    def test_strict_load_reports_mismatch(self):
        state = _Parent().state_dict()
        del state["bias"]
        with pytest.raises(KeyError, match="bias"):
            _Parent().load_state_dict(state)
        _Parent().load_state_dict(state, strict=False)

    def test_shape_mismatch(self):
        state = _Parent().state_dict()
        state["bias"] = np.zeros(3)
        with pytest.raises(ValueError, match="shape mismatch"):
            _Parent().load_state_dict(state)
