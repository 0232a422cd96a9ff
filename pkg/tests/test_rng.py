"""
Tests for the seeded random streams.
"""

import numpy as np

from moesearch.core.rng import RngStream, RngStreams, StreamId


def test_same_key_same_draws():
    a = RngStream(42, StreamId.GUMBEL, (3,))
    b = RngStream(42, StreamId.GUMBEL, (3,))
    np.testing.assert_array_equal(a.uniform(10), b.uniform(10))
    np.testing.assert_array_equal(a.permutation(20), b.permutation(20))


def test_streams_are_independent_of_each_other():
    streams = RngStreams(7)
    gumbel_only = RngStreams(7)
    # heavy use of the dropout stream must not shift the Gumbel sequence
    streams.dropout.uniform(10_000)
    np.testing.assert_array_equal(streams.gumbel.uniform(5), gumbel_only.gumbel.uniform(5))


def test_different_stream_ids_differ():
    assert not np.array_equal(
        RngStream(1, StreamId.DATA).uniform(8), RngStream(1, StreamId.SUBSET).uniform(8)
    )


def test_derive_extends_the_key():
    parent = RngStream(5, StreamId.INIT, (1,))
    child = parent.derive(2, 0)
    assert child.sub_keys == (1, 2, 0)
    np.testing.assert_array_equal(child.normal(4), RngStream(5, StreamId.INIT, (1, 2, 0)).normal(4))
    assert not np.array_equal(parent.derive(0).uniform(4), parent.derive(1).uniform(4))


def test_state_round_trip_resumes_sequence():
    stream = RngStream(11, StreamId.ROUTING)
    stream.uniform(3)
    state = stream.get_state()
    expected = stream.uniform(6)
    fresh = RngStream(11, StreamId.ROUTING)
    fresh.set_state(state)
    np.testing.assert_array_equal(fresh.uniform(6), expected)


def test_streams_state_restores_every_concern():
    streams = RngStreams(3)
    streams.data.permutation(10)
    streams.gumbel.uniform(4)
    state = streams.get_state()
    expected = (streams.data.permutation(10), streams.gumbel.uniform(4))

    restored = RngStreams(3)
    restored.set_state(state)
    np.testing.assert_array_equal(restored.data.permutation(10), expected[0])
    np.testing.assert_array_equal(restored.gumbel.uniform(4), expected[1])


def test_negative_seed_is_masked():
    assert RngStream(-1).seed == (1 << 64) - 1


def test_choice_without_replacement_is_distinct():
    picks = RngStream(0, StreamId.SUBSET).choice(50, size=20)
    assert len(set(picks.tolist())) == 20
