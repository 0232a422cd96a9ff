"""
Tests for the neural-network functions in moesearch.core.functional.
"""

import numpy as np
import pytest

from moesearch.core import functional as F
from moesearch.core.errors import DataError, DimensionError, ParameterError
from moesearch.core.rng import RngStream
from moesearch.core.tensor import Tensor, parameter


class TestSoftmax:
    def test_rows_sum_to_one(self, np_rng):
        out = F.softmax(Tensor(np_rng.normal(size=(4, 7))))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0)

    def test_stable_for_large_logits(self):
        out = F.softmax(Tensor([[1000.0, 1000.0, -1000.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.0]])

    def test_log_softmax_matches_log_of_softmax(self, np_rng):
        x = Tensor(np_rng.normal(size=(3, 5)))
        np.testing.assert_allclose(F.log_softmax(x).data, np.log(F.softmax(x).data))


class TestGumbelSoftmax:
    def test_zero_noise_hook_gives_plain_softmax(self):
        alpha = Tensor([[0.5, -1.0, 2.0]])
        with F.gumbel_noise_disabled():
            sample = F.gumbel_softmax(alpha, 2.0, rng=RngStream(0))
        np.testing.assert_allclose(sample.data, F.softmax(Tensor(alpha.data / 2.0)).data)

    def test_hook_restores_noise(self):
        alpha = Tensor(np.zeros((1, 4)))
        with F.gumbel_noise_disabled():
            pass
        sample = F.gumbel_softmax(alpha, 1.0, rng=RngStream(3))
        assert not np.allclose(sample.data, 0.25)

    def test_hard_sample_is_one_hot(self):
        alpha = parameter(np.zeros((3, 5)))
        sample = F.gumbel_softmax(alpha, 1.0, rng=RngStream(1), hard=True)
        assert set(np.unique(sample.data)) <= {0.0, 1.0}
        np.testing.assert_array_equal(sample.data.sum(axis=-1), 1.0)
        assert sample.requires_grad

    def test_same_stream_same_sample(self):
        alpha = Tensor(np.zeros((2, 4)))
        a = F.gumbel_softmax(alpha, 0.5, rng=RngStream(9, 2))
        b = F.gumbel_softmax(alpha, 0.5, rng=RngStream(9, 2))
        np.testing.assert_array_equal(a.data, b.data)

    def test_low_temperature_approaches_one_hot(self):
        alpha = Tensor([[0.0, 3.0, 1.0]])
        sample = F.gumbel_softmax(alpha, 1e-3, noise=np.zeros((1, 3)))
        np.testing.assert_allclose(sample.data, [[0.0, 1.0, 0.0]], atol=1e-12)

    @pytest.mark.parametrize("temperature", [0.0, -1.0])
    def test_rejects_non_positive_temperature(self, temperature):
        with pytest.raises(ParameterError):
            F.gumbel_softmax(Tensor([[0.0, 1.0]]), temperature, rng=RngStream(0))

    def test_needs_rng_or_noise(self):
        with pytest.raises(ParameterError):
            F.gumbel_softmax(Tensor([[0.0, 1.0]]), 1.0)

    def test_noise_shape_checked(self):
        with pytest.raises(DimensionError):
            F.gumbel_softmax(Tensor([[0.0, 1.0]]), 1.0, noise=np.zeros(3))

    def test_gumbel_noise_mean_is_euler_gamma(self):
        noise = F.sample_gumbel(200_000, RngStream(5))
        assert abs(noise.mean() - np.euler_gamma) < 0.01


class TestCrossEntropy:
    def test_uniform_logits_give_log_vocab(self):
        loss = F.cross_entropy(Tensor(np.zeros((6, 10))), np.arange(6))
        assert loss.item() == pytest.approx(np.log(10))

    def test_confident_correct_prediction_is_near_zero(self):
        logits = np.full((2, 3), -50.0)
        logits[0, 1] = logits[1, 2] = 50.0
        assert F.cross_entropy(Tensor(logits), np.array([1, 2])).item() < 1e-12

    def test_out_of_range_target(self):
        with pytest.raises(DataError, match="out of range"):
            F.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))

    def test_float_targets_rejected(self):
        with pytest.raises(DataError):
            F.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0.0, 1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            F.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 1, 2]))
        with pytest.raises(DimensionError):
            F.cross_entropy(Tensor(np.zeros((2, 2, 3))), np.array([0, 1]))


class TestLayerNorm:
    def test_output_is_normalized(self, np_rng):
        x = Tensor(np_rng.normal(3.0, 2.0, size=(4, 16)))
        out = F.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16)))
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)

    def test_parameter_shape_checked(self):
        with pytest.raises(DimensionError):
            F.layer_norm(Tensor(np.zeros((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert F.dropout(x, 0.5, None, training=False) is x

    def test_zero_rate_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        assert F.dropout(x, 0.0, None, training=True) is x

    def test_inverted_scaling(self):
        out = F.dropout(Tensor(np.ones(100_000)), 0.25, RngStream(0), training=True)
        kept = out.data[out.data > 0]
        np.testing.assert_allclose(kept, 1.0 / 0.75)
        assert abs(out.data.mean() - 1.0) < 0.02

    @pytest.mark.parametrize("rate", [-0.1, 1.0, 1.5])
    def test_rate_range(self, rate):
        with pytest.raises(ParameterError):
            F.dropout(Tensor(np.ones(2)), rate, RngStream(0), training=True)

    def test_training_needs_rng(self):
        with pytest.raises(ParameterError):
            F.dropout(Tensor(np.ones(2)), 0.5, None, training=True)


class TestSelection:
    def test_causal_mask_hides_future(self):
        scores = F.causal_mask(Tensor(np.zeros((3, 3))))
        assert np.isneginf(scores.data[0, 1]) and np.isneginf(scores.data[1, 2])
        assert scores.data[2, 0] == 0.0 and scores.data[1, 1] == 0.0

    def test_causal_mask_needs_square(self):
        with pytest.raises(DimensionError):
            F.causal_mask(Tensor(np.zeros((2, 3))))

    def test_argmax_ties_go_to_lower_index(self):
        assert F.argmax(np.array([1.0, 3.0, 3.0, 0.0])) == 1
        np.testing.assert_array_equal(F.one_hot_argmax(np.array([2.0, 2.0])), [1.0, 0.0])

    def test_topk_descending_with_stable_ties(self):
        values, idx = F.topk(Tensor([[0.5, 2.0, 0.5, 2.0, 1.0]]), 3)
        np.testing.assert_array_equal(idx, [[1, 3, 4]])
        np.testing.assert_array_equal(values.data, [[2.0, 2.0, 1.0]])

    @pytest.mark.parametrize("k", [0, 4])
    def test_topk_range(self, k):
        with pytest.raises(ParameterError):
            F.topk(Tensor(np.zeros((1, 3))), k)

    def test_embedding_lookup_and_range(self):
        weight = Tensor(np.arange(6.0).reshape(3, 2))
        np.testing.assert_array_equal(F.embedding(weight, np.array([2, 0])).data, [[4, 5], [0, 1]])
        with pytest.raises(DataError):
            F.embedding(weight, np.array([3]))
