"""
Tests for architecture descriptors, sampling, rendering and retraining.
"""

import json
import math

import numpy as np
import pytest

from moesearch.blocks.specs import BlockSpec
from moesearch.core import functional as F
from moesearch.core.errors import (
    CoverageError,
    DataError,
    NumericAbort,
    ParameterError,
    SpecError,
)
from moesearch.core.rng import RngStream, StreamId
from moesearch.core.tensor import Tensor
from moesearch.io.corpus import BatchIterator
from moesearch.search.engine import OptimizerSettings, Phase1Config, run_phase1
from moesearch.search.finalize import (
    ArchitectureDescriptor,
    Phase2Config,
    baseline_descriptor,
    evaluate,
    instantiate,
    load_descriptor,
    parse_architecture_rendering,
    render_architecture,
    run_phase2,
    sample_architecture,
    save_descriptor,
)
from moesearch.search.supernet import build_search_network

from .conftest import MODEL_DIM, fake_latency_us

MOE_SLOTS = ["mha:h=2", "moe:d=16:e=2:k=1"]
DENSE_SLOTS = ["mha:h=2", "ffl:d=16"]


@pytest.fixture
def descriptor():
    return ArchitectureDescriptor(
        slots=MOE_SLOTS,
        model_dim=MODEL_DIM,
        estimated_latency_us=fake_latency_us("mha:h=2") + fake_latency_us("moe:d=16:e=2:k=1"),
        baseline_latency_us=fake_latency_us("mha:h=2") + fake_latency_us("ffl:d=16"),
        target_ratio=0.9,
        seed=3,
        source="searched",
        alpha_snapshot=[[0.1, 0.2], [0.3, -0.4]],
        vocab_size=20,
        max_seq_len=8,
        target_met=True,
    )


@pytest.fixture
def train_batches(tiny_corpus):
    return BatchIterator(tiny_corpus.split_ids("train")[:161], batch_size=4, seq_len=8, seed=0)


@pytest.fixture
def valid_batches(tiny_corpus):
    return BatchIterator(tiny_corpus.split_ids("valid"), batch_size=4, seq_len=8, shuffle=False)


class TestDescriptor:
    def test_json_round_trip(self, descriptor, tmp_path, tiny_table):
        path = save_descriptor(descriptor, tmp_path / "architecture.json")
        loaded = load_descriptor(path, tiny_table)
        assert loaded.to_dict() == descriptor.to_dict()
        assert loaded.keys == MOE_SLOTS and loaded.has_moe
        assert json.loads(path.read_text())["slots"] == MOE_SLOTS

    def test_latency_ratio(self, descriptor):
        expected = descriptor.estimated_latency_us / descriptor.baseline_latency_us
        assert descriptor.latency_ratio() == pytest.approx(expected)
        assert ArchitectureDescriptor(["skip"], MODEL_DIM).latency_ratio() is None

    def test_verify_rejects_stale_latency(self, descriptor, tiny_table):
        descriptor.estimated_latency_us *= 1.01
        with pytest.raises(DataError, match="does not match"):
            descriptor.verify(tiny_table)

    def test_verify_fills_missing_latency(self, tiny_table):
        manual = ArchitectureDescriptor(DENSE_SLOTS, MODEL_DIM)
        manual.verify(tiny_table)
        expected = fake_latency_us("mha:h=2") + fake_latency_us("ffl:d=16")
        assert manual.estimated_latency_us == pytest.approx(expected)

    def test_verify_needs_every_key(self, tiny_table):
        with pytest.raises(CoverageError):
            ArchitectureDescriptor(["mha:h=4"], MODEL_DIM).verify(tiny_table)

    def test_validation(self):
        with pytest.raises(SpecError):
            ArchitectureDescriptor([], MODEL_DIM)
        with pytest.raises(SpecError):
            ArchitectureDescriptor(["mha:h=3"], MODEL_DIM)
        with pytest.raises(SpecError, match="source"):
            ArchitectureDescriptor(["skip"], MODEL_DIM, source="guessed")
        with pytest.raises(SpecError):
            ArchitectureDescriptor.from_dict({"slots": ["mha:h=0"], "model_dim": 8})

    def test_load_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_descriptor(tmp_path / "absent.json")
        broken = tmp_path / "broken.json"
        broken.write_text("{not json")
        with pytest.raises(DataError, match="not valid JSON"):
            load_descriptor(broken)
        old = tmp_path / "old.json"
        old.write_text(json.dumps({"format_version": 0, "slots": ["skip"], "model_dim": 8}))
        with pytest.raises(DataError, match="format_version"):
            load_descriptor(old)
        bare = tmp_path / "bare.json"
        bare.write_text(json.dumps({"slots": ["skip"]}))
        with pytest.raises(DataError, match="model_dim"):
            load_descriptor(bare)


class TestSampling:
    def test_picks_highest_alpha_per_slot(self, tiny_backbone, tiny_space, tiny_table):
        net = build_search_network(tiny_backbone, tiny_space, 20, 8, 0)
        net.set_alpha([np.array([0.0, 0.1, 2.0, 0.0, 0.0]), np.array([0.0, 0.0, 0.0, 0.0, 1.0])])
        chosen = sample_architecture(net, tiny_table, target_ratio=0.9, seed=1)
        assert chosen.keys == ["mha:h=2", "moe:d=16:e=2:k=1"]
        assert chosen.source == "searched" and chosen.seed == 1
        assert chosen.vocab_size == 20 and chosen.max_seq_len == 8
        assert chosen.alpha_snapshot[1] == [0.0, 0.0, 0.0, 0.0, 1.0]
        assert chosen.estimated_latency_us == pytest.approx(
            fake_latency_us("mha:h=2") + fake_latency_us("moe:d=16:e=2:k=1")
        )

    def test_ties_go_to_first_option(self, tiny_backbone, tiny_space, tiny_table):
        net = build_search_network(tiny_backbone, tiny_space, 20, 8, 0)
        assert sample_architecture(net, tiny_table).keys == ["skip", "skip"]

    def test_target_met_flag(self, tiny_backbone, tiny_space, tiny_table):
        net = build_search_network(tiny_backbone, tiny_space, 20, 8, 0)
        net.set_alpha([np.eye(5)[2], np.eye(5)[2]])
        # two 2-head attention blocks cost more than the backbone
        assert sample_architecture(net, tiny_table, target_ratio=1.0).target_met is False
        net.set_alpha([np.eye(5)[0], np.eye(5)[0]])
        assert sample_architecture(net, tiny_table, target_ratio=0.1).target_met is True
        assert sample_architecture(net, tiny_table).target_met is None

    def test_baseline_descriptor(self, tiny_backbone, tiny_table):
        baseline = baseline_descriptor(tiny_backbone, tiny_table, target_ratio=1.0)
        assert baseline.keys == DENSE_SLOTS
        assert baseline.latency_ratio() == 1.0
        assert baseline_descriptor(tiny_backbone).estimated_latency_us is None


class TestRendering:
    def test_round_trip(self, descriptor):
        text = render_architecture(descriptor)
        assert text.startswith("# model_dim=8 slots=2 estimated_us=")
        assert "MoE feed-forward, inner 16, 2 experts, top-1" in text
        assert parse_architecture_rendering(text) == descriptor.slots

    def test_rejects_out_of_order_slots(self):
        with pytest.raises(DataError, match="slot indices"):
            parse_architecture_rendering("  1 | skip | Skip\n  0 | skip | Skip\n")
        with pytest.raises(DataError):
            parse_architecture_rendering("skip\n")


class TestInstantiate:
    def test_uses_recorded_sizes(self, descriptor):
        net = instantiate(descriptor, seed=0)
        assert net.vocab_size == 20 and net.max_seq_len == 8 and net.keys == MOE_SLOTS

    def test_needs_sizes(self):
        with pytest.raises(SpecError, match="vocab_size"):
            instantiate(ArchitectureDescriptor(["skip"], MODEL_DIM))

    def test_fresh_weights_are_seeded(self, descriptor):
        a = instantiate(descriptor, seed=4)
        b = instantiate(descriptor, seed=4)
        c = instantiate(descriptor, seed=RngStream(5))
        assert np.array_equal(a.head.weight.data, b.head.weight.data)
        assert not np.array_equal(a.head.weight.data, c.head.weight.data)

    def test_search_weights_never_reach_the_final_network(
        self, tiny_backbone, tiny_space, tiny_table, tiny_corpus, train_batches
    ):
        vocab = tiny_corpus.vocab_size
        search_net = build_search_network(
            tiny_backbone, tiny_space, vocab, 8, RngStream(0, StreamId.INIT, (1,))
        )
        cfg = Phase1Config(epochs=1, arch_data_fraction=0.4, dropout=0.0, moe_dropout=0.0)
        run_phase1(search_net, tiny_table, cfg, train_batches)
        chosen = sample_architecture(search_net, tiny_table)

        final = instantiate(chosen, vocab_size=vocab, max_seq_len=8)
        searched = [p.data for p in search_net.network_parameters()]
        for name, value in final.state_dict().items():
            if np.all(value == value.flat[0]):
                continue  # constant init (norm gains, biases) matches untouched options
            assert not any(
                s.shape == value.shape and np.array_equal(s, value) for s in searched
            ), name

        # wreck every trained search weight; a fresh instantiation must not notice
        for p in search_net.network_parameters():
            p.data = p.data * 100.0 + 1.0
        again = instantiate(chosen, vocab_size=vocab, max_seq_len=8)
        before, after = final.state_dict(), again.state_dict()
        assert before.keys() == after.keys()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])

        retrain = Phase2Config(epochs=1, dropout=0.0, moe_dropout=0.0)
        first = run_phase2(final, train_batches, retrain).metrics.to_frame()
        second = run_phase2(again, train_batches, retrain).metrics.to_frame()
        np.testing.assert_array_equal(first["ce"].to_numpy(), second["ce"].to_numpy())


class TestRetraining:
    def _config(self, **overrides):
        values = dict(epochs=2, optimizer=OptimizerSettings("adam", 0.01), dropout=0.0,
                      moe_dropout=0.0)
        values.update(overrides)
        return Phase2Config(**values)

    def test_cross_entropy_decreases(self, tiny_corpus, train_batches):
        arch = ArchitectureDescriptor(DENSE_SLOTS, MODEL_DIM)
        net = instantiate(arch, vocab_size=tiny_corpus.vocab_size, max_seq_len=8)
        result = run_phase2(net, train_batches, self._config(epochs=4))
        ce = result.metrics.to_frame()["ce"].to_numpy()
        assert ce[-5:].mean() < ce[:5].mean()

    def test_dense_network_logs_zero_balance(self, tiny_corpus, train_batches, valid_batches):
        arch = ArchitectureDescriptor(DENSE_SLOTS, MODEL_DIM)
        net = instantiate(arch, vocab_size=tiny_corpus.vocab_size, max_seq_len=8)
        result = run_phase2(net, train_batches, self._config(), valid=valid_batches)
        frame = result.metrics.to_frame()
        assert (frame["balance_loss"] == 0.0).all()
        assert (frame["max_expert_fraction"] == 0.0).all()
        assert len(result.routing) == 0
        assert list(frame["phase"]).count("valid") == 2 and len(result.validation) == 2

    def test_moe_network_logs_routing(self, tiny_corpus, train_batches):
        arch = ArchitectureDescriptor(MOE_SLOTS, MODEL_DIM)
        net = instantiate(arch, vocab_size=tiny_corpus.vocab_size, max_seq_len=8)
        result = run_phase2(net, train_batches, self._config(epochs=1, router_jitter=0.01))
        frame = result.metrics.to_frame()
        assert (frame["balance_loss"] > 0).all()
        assert ((frame["max_expert_fraction"] > 0) & (frame["max_expert_fraction"] <= 1)).all()
        # one layer with two experts per step
        assert len(result.routing) == 2 * len(train_batches)
        routing = result.routing.to_frame()
        sums = routing.groupby("step")["token_fraction"].sum()
        np.testing.assert_allclose(sums, 1.0)

    def test_non_finite_loss_aborts(self, tiny_corpus, train_batches, mocker):
        mocker.patch.object(F, "cross_entropy", return_value=Tensor(np.array(np.inf)))
        net = instantiate(
            ArchitectureDescriptor(DENSE_SLOTS, MODEL_DIM),
            vocab_size=tiny_corpus.vocab_size, max_seq_len=8,
        )
        with pytest.raises(NumericAbort) as excinfo:
            run_phase2(net, train_batches, self._config())
        assert excinfo.value.snapshot["step"] == 0

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            Phase2Config(epochs=0)
        with pytest.raises(ParameterError):
            Phase2Config(balance_coefficient=-1.0)
        with pytest.raises(ParameterError):
            Phase2Config(router_jitter=-0.1)
        assert Phase2Config(optimizer={"kind": "lamb", "lr": 0.1}).optimizer.kind == "lamb"


class TestEvaluate:
    def test_scores_are_consistent(self, tiny_corpus, valid_batches):
        net = instantiate(
            ArchitectureDescriptor(MOE_SLOTS, MODEL_DIM),
            vocab_size=tiny_corpus.vocab_size, max_seq_len=8, dropout=0.1,
        )
        scores = evaluate(net, valid_batches)
        assert scores.bpc == pytest.approx(scores.ce / math.log(2))
        assert scores.ppl == pytest.approx(math.exp(scores.ce))
        assert scores.tokens == valid_batches.tokens_covered
        assert 0 < scores.max_expert_fraction <= 1
        assert net.training

    def test_eval_is_deterministic_with_dropout(self, tiny_corpus, valid_batches):
        net = instantiate(
            ArchitectureDescriptor(DENSE_SLOTS, MODEL_DIM),
            vocab_size=tiny_corpus.vocab_size, max_seq_len=8, dropout=0.5,
        )
        assert evaluate(net, valid_batches) == evaluate(net, valid_batches)


def test_block_spec_slots_accepted():
    descriptor = ArchitectureDescriptor([BlockSpec.skip(), "ffl:d=16"], MODEL_DIM)
    assert descriptor.keys == ["skip", "ffl:d=16"]
