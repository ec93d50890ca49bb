from fractions import Fraction

import numpy as np
import pytest

from emergence.world import (
    AttributeSpace,
    ConfigurationError,
    attribute_accuracy,
    batch_rewards,
    build_discrimination_batch,
    compute_reward,
    encode_onehot,
    enumerate_objects,
    split_dataset,
    split_sizes,
)


def test_enumeration_counts():
    assert len(enumerate_objects(AttributeSpace(2, 5))) == 25
    assert list(enumerate_objects(AttributeSpace(1, 2))) == [(0,), (1,)]
    objs = list(enumerate_objects(AttributeSpace(3, 4)))
    assert len(objs) == 64 and len(set(objs)) == 64


def test_space_validation_and_limit():
    with pytest.raises(ConfigurationError):
        AttributeSpace(0, 3)
    with pytest.raises(ConfigurationError):
        AttributeSpace(2, 1)
    with pytest.raises(ConfigurationError, match="exceeds"):
        enumerate_objects(AttributeSpace(10, 10))


def test_onehot_examples():
    space = AttributeSpace(2, 3)
    np.testing.assert_array_equal(encode_onehot((0, 2), space), [1, 0, 0, 0, 0, 1])
    codes = {tuple(encode_onehot(o, space)) for o in enumerate_objects(space)}
    assert len(codes) == 9
    assert all(sum(c) == 2 for c in codes)
    with pytest.raises(IndexError):
        encode_onehot((0, 3), space)


def test_split_sizes():
    assert split_sizes(1000, (0.8, 0.1, 0.1)) == (800, 100, 100)
    assert split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    with pytest.raises(ConfigurationError, match="sum"):
        split_sizes(10, (0.8, 0.1, 0.0))
    with pytest.raises(ConfigurationError, match="empty"):
        split_sizes(4, (0.9, 0.05, 0.05))


def test_split_partition_and_determinism():
    ds = enumerate_objects(AttributeSpace(3, 4))
    a = split_dataset(ds, (0.8, 0.1, 0.1), 5)
    b = split_dataset(ds, (0.8, 0.1, 0.1), 5)
    c = split_dataset(ds, (0.8, 0.1, 0.1), 6)
    for x, y in zip(a, b):
        assert np.array_equal(x.objects, y.objects)
    assert not np.array_equal(a[0].objects, c[0].objects)
    seen = [o for part in a for o in part]
    assert sorted(seen) == sorted(ds)
    assert len(set(seen)) == len(ds)


def test_two_object_batch():
    space = AttributeSpace(1, 2)
    ds = enumerate_objects(space)
    batch = build_discrimination_batch(ds, 2, 50, np.random.default_rng(0))
    for i in range(len(batch)):
        ep = batch[i]
        assert set(ep.candidates) == {(0,), (1,)}
        assert ep.target_index in (0, 1)
        assert ep.candidates[ep.target_index] == ep.target


def test_candidates_distinct_and_target_once():
    ds = enumerate_objects(AttributeSpace(2, 3))
    batch = build_discrimination_batch(ds, 4, 2000, np.random.default_rng(1))
    assert all(len(set(row)) == 4 for row in batch.candidates)
    hits = (batch.candidates == batch.targets[:, None]).sum(axis=1)
    assert np.all(hits == 1)
    assert np.all(batch.candidates[np.arange(len(batch)), batch.target_index] == batch.targets)
    assert batch.receiver_inputs().shape == (2000, 4, 6)


def test_target_position_is_uniform():
    ds = enumerate_objects(AttributeSpace(2, 4))
    n_ep, n = 100_000, 4
    batch = build_discrimination_batch(ds, n, n_ep, np.random.default_rng(2))
    counts = np.bincount(batch.target_index, minlength=n)
    sigma = np.sqrt(n_ep * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - n_ep / n) < 3 * sigma)


def test_too_many_candidates():
    ds = enumerate_objects(AttributeSpace(1, 3))
    with pytest.raises(ConfigurationError):
        build_discrimination_batch(ds, 4, 1, np.random.default_rng(0))


def test_rewards():
    ds = enumerate_objects(AttributeSpace(1, 3))
    ep = build_discrimination_batch(ds, 3, 1, np.random.default_rng(0))[0]
    assert compute_reward("discrimination", ep, ep.target_index) == 1.0
    assert compute_reward("discrimination", ep, (ep.target_index + 1) % 3) == 0.0
    with pytest.raises(IndexError):
        compute_reward("discrimination", ep, 3)
    assert compute_reward("reconstruction", (1, 2), (1, 0)) == 0.0
    assert attribute_accuracy((1, 2), (1, 0)) == 0.5
    assert compute_reward("reconstruction", (1, 2), (1, 2)) == 1.0


def test_uniform_receiver_expected_reward_is_exactly_one_over_n():
    # every action enumerated with probability 1/N on each episode of a tiny split
    ds = enumerate_objects(AttributeSpace(1, 3))
    for n in (2, 3):
        batch = build_discrimination_batch(ds, n, 20, np.random.default_rng(n))
        for i in range(len(batch)):
            ep = batch[i]
            expected = sum(Fraction(int(compute_reward("discrimination", ep, a)), n) for a in range(n))
            assert expected == Fraction(1, n)
    assert batch_rewards(batch, batch.target_index).sum() == len(batch)
