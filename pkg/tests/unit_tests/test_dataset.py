import numpy as np
import pytest

from ipccf.dataset import (BprBatch, BprSampler, InteractionDataset, active_subsample, load_interactions,
                           load_split_interactions, sample_bpr_batch, split_train_test, split_validation)
from ipccf.utils import ConfigError, DataError


def test_load_adjacency_list_assigns_indices_by_first_appearance(write_interactions):
    path = write_interactions("# comment\nu1 a b c\n\nu2 b d\nu1 a\n")
    data = load_interactions(path)
    assert data.num_users == 2
    assert data.num_items == 4
    assert data.user_ids == ['u1', 'u2']
    assert data.item_ids == ['a', 'b', 'c', 'd']
    assert list(data.train_adjacency[0]) == [0, 1, 2]
    assert list(data.train_adjacency[1]) == [1, 3]
    assert data.num_train == 5
    assert not data.is_split


def test_load_pair_per_line(write_interactions):
    path = write_interactions("u1 a\nu2 a\nu1 b\n")
    data = load_interactions(path, format='pair-per-line')
    assert data.num_users == 2 and data.num_items == 2
    assert list(data.train_adjacency[0]) == [0, 1]


def test_malformed_pair_line_reports_line_number(write_interactions):
    path = write_interactions("u1 a\nu2 a b\n")
    with pytest.raises(DataError, match=':2:'):
        load_interactions(path, format='pair-per-line')


def test_invalid_utf8_is_a_data_error(write_interactions):
    path = write_interactions(b"u1 a\n\xff\xfe b\n")
    with pytest.raises(DataError, match=':2:'):
        load_interactions(path)


def test_zero_interactions_is_a_data_error(write_interactions):
    path = write_interactions("# only comments\nu1\n")
    with pytest.raises(DataError, match='zero interactions'):
        load_interactions(path)


def test_missing_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_interactions(str(tmp_path / 'missing.txt'))


def test_unknown_format_is_a_config_error(write_interactions):
    with pytest.raises(ConfigError):
        load_interactions(write_interactions("u1 a\n"), format='csv')


def test_split_keeps_every_interaction_and_one_item_per_side():
    records = [('u0', ['a']), ('u1', ['a', 'b']), ('u2', ['a', 'b', 'c', 'd', 'e'])]
    data = InteractionDataset.from_adjacency(records)
    split = split_train_test(data, ratio=0.8, seed=0)
    assert split.is_split
    assert list(split.train_adjacency[0]) == [0] and len(split.test_adjacency[0]) == 0
    assert len(split.train_adjacency[1]) == 1 and len(split.test_adjacency[1]) == 1
    assert len(split.train_adjacency[2]) == 4 and len(split.test_adjacency[2]) == 1
    for u in range(3):
        union = np.union1d(split.train_adjacency[u], split.test_adjacency[u])
        assert len(union) == len(data.train_adjacency[u])
        assert len(np.intersect1d(split.train_adjacency[u], split.test_adjacency[u])) == 0


def test_split_is_deterministic_per_seed():
    data = InteractionDataset.from_adjacency([(f"u{u}", [f"i{i}" for i in range(10)]) for u in range(5)])
    first = split_train_test(data, 0.8, seed=4)
    second = split_train_test(data, 0.8, seed=4)
    for a, b in zip(first.test_adjacency, second.test_adjacency):
        np.testing.assert_array_equal(a, b)


def test_split_ratio_bounds():
    data = InteractionDataset.from_adjacency([('u', ['a', 'b'])])
    with pytest.raises(ConfigError):
        split_train_test(data, ratio=1.0)


def test_load_split_interactions_shares_ids_and_drops_overlap(write_interactions):
    train = write_interactions("u1 a b\nu2 c\n", name='train.txt')
    test = write_interactions("u1 b d\nu3 a\n", name='test.txt')
    data = load_split_interactions(train, test)
    assert data.is_split
    assert data.num_users == 3 and data.num_items == 4
    assert [data.raw_item(i) for i in data.test_adjacency[0]] == ['d']
    assert data.raw_user(2) == 'u3' and len(data.train_adjacency[2]) == 0


def test_active_subsample_keeps_most_active_users():
    data = InteractionDataset.from_adjacency([('u0', ['a']), ('u1', ['a', 'b', 'c']), ('u2', ['d', 'e'])])
    small = active_subsample(data, 2)
    assert small.user_ids == ['u1', 'u2']
    assert small.num_items == 5


def test_bpr_batch_lengths_must_agree():
    with pytest.raises(DataError):
        BprBatch(users=np.zeros(2), pos_items=np.zeros(2), neg_items=np.zeros(3))


def test_sampled_triples_respect_train_interactions(toy_dataset):
    batch = sample_bpr_batch(toy_dataset, 100_000, np.random.default_rng(0))
    assert len(batch) == 100_000
    assert np.all((batch.neg_items >= 0) & (batch.neg_items < toy_dataset.num_items))
    train = toy_dataset.train_matrix
    assert np.all(np.asarray(train[batch.users, batch.pos_items]).ravel() == 1)
    assert np.all(np.asarray(train[batch.users, batch.neg_items]).ravel() == 0)


def test_sampler_is_built_once_per_dataset(toy_dataset):
    assert toy_dataset.bpr_sampler is toy_dataset.bpr_sampler
    a = sample_bpr_batch(toy_dataset, 64, np.random.default_rng(9))
    b = BprSampler(toy_dataset).sample(64, np.random.default_rng(9))
    np.testing.assert_array_equal(a.neg_items, b.neg_items)


def test_sampling_is_seeded(toy_dataset):
    a = sample_bpr_batch(toy_dataset, 50, np.random.default_rng(5))
    b = sample_bpr_batch(toy_dataset, 50, np.random.default_rng(5))
    np.testing.assert_array_equal(a.neg_items, b.neg_items)


def test_saturated_user_cannot_be_sampled():
    data = InteractionDataset.from_adjacency([('u0', ['a', 'b']), ('u1', ['a'])])
    with pytest.raises(DataError, match='every item'):
        BprSampler(data)


def test_batch_size_must_be_positive(toy_dataset):
    with pytest.raises(ConfigError):
        sample_bpr_batch(toy_dataset, 0, np.random.default_rng(0))


def test_raw_ids_and_indices_are_a_bijection(write_interactions):
    path = write_interactions("u7 x y\nu3 y z w\nu9 x\nu3 q\n")
    data = load_interactions(path)
    assert len(set(data.user_ids)) == data.num_users and len(set(data.item_ids)) == data.num_items
    for index, raw in enumerate(data.user_ids):
        assert data.user_index[raw] == index and data.raw_user(index) == raw
    for index, raw in enumerate(data.item_ids):
        assert data.item_index[raw] == index and data.raw_item(index) == raw
    for raw, index in data.user_index.items():
        assert data.user_ids[index] == raw
    for raw, index in data.item_index.items():
        assert data.item_ids[index] == raw


def test_validation_carve_out_partitions_train_items(toy_dataset):
    carved = split_validation(toy_dataset, 0.5, seed=1)
    assert carved.num_validation > 0
    assert carved.num_interactions == toy_dataset.num_interactions
    for u in range(toy_dataset.num_users):
        train, validation = carved.train_adjacency[u], carved.validation_adjacency[u]
        assert len(train) >= min(1, len(toy_dataset.train_adjacency[u]))
        assert not np.intersect1d(train, validation).size
        np.testing.assert_array_equal(np.union1d(train, validation), toy_dataset.train_adjacency[u])
        np.testing.assert_array_equal(carved.test_adjacency[u], toy_dataset.test_adjacency[u])
    again = split_validation(toy_dataset, 0.5, seed=1)
    for a, b in zip(carved.validation_adjacency, again.validation_adjacency):
        np.testing.assert_array_equal(a, b)


def test_validation_ratio_zero_and_bounds(toy_dataset):
    assert split_validation(toy_dataset, 0.0).num_validation == 0
    with pytest.raises(ConfigError):
        split_validation(toy_dataset, 1.0)
