import os
import dataclasses
import numpy as np
import pandas as pd
import pytest

from ipccf.dataset import InteractionDataset
from ipccf.evaluation import (EvalReport, evaluate, full_rank_topk, mad_metric, ranking_metrics,
                              sparsity_report)
from ipccf.utils import ConfigError


def make_dataset(train, test, num_items):
    """Split dataset from per-user train and test item index lists."""
    num_users = len(train)
    return InteractionDataset(num_users=num_users, num_items=num_items,
                              train_adjacency=[np.asarray(t, dtype=np.int64) for t in train],
                              test_adjacency=[np.asarray(t, dtype=np.int64) for t in test],
                              user_ids=[f"u{u}" for u in range(num_users)],
                              item_ids=[f"i{i}" for i in range(num_items)], is_split=True)


def random_instance(rng, num_users, num_items, dim=4):
    train, test = [], []
    for _ in range(num_users):
        items = rng.permutation(num_items)
        n_train, n_test = rng.integers(0, num_items // 2), rng.integers(0, num_items // 2)
        train.append(np.sort(items[:n_train]))
        test.append(np.sort(items[n_train:n_train + n_test]))
    emb = rng.integers(-2, 3, size=(num_users + num_items, dim)).astype(np.float64)  # integer scores tie exactly
    return make_dataset(train, test, num_items), emb


def brute_force_metrics(emb, dataset, k):
    """Enumerate and sort every (user, item) score; ties by ascending item index."""
    nu = dataset.num_users
    rows = []
    for u in range(nu):
        relevant = set(dataset.test_adjacency[u].tolist())
        if not relevant:
            continue
        train = set(dataset.train_adjacency[u].tolist())
        scored = [(-float(emb[u] @ emb[nu + i]), i) for i in range(dataset.num_items) if i not in train]
        top = [i for _, i in sorted(scored)][:k]
        hits = [i in relevant for i in top]
        dcg = sum(1 / np.log2(r + 2) for r, hit in enumerate(hits) if hit)
        idcg = sum(1 / np.log2(r + 2) for r in range(min(k, len(relevant))))
        rows.append((sum(hits) / k, sum(hits) / len(relevant), dcg / idcg))
    return tuple(np.mean(rows, axis=0)) if rows else (0.0, 0.0, 0.0)


def test_worked_example():
    dataset = make_dataset([[]], [[0]], num_items=2)
    p, r, n = ranking_metrics({0: np.array([0, 1])}, dataset.test_adjacency, k=2)
    assert (p, r, n) == pytest.approx((0.5, 1.0, 1.0))


def test_ideal_and_empty_rankings():
    test = [np.array([0, 1, 2])]
    assert ranking_metrics({0: np.array([2, 0])}, test, k=2)[2] == pytest.approx(1.0)
    assert ranking_metrics({0: np.array([3, 4])}, test, k=2) == (0.0, 0.0, 0.0)


def test_users_without_test_items_are_skipped():
    test = [np.array([0]), np.array([], dtype=np.int64)]
    assert ranking_metrics({0: np.array([0]), 1: np.array([0])}, test, k=1) == pytest.approx((1.0, 1.0, 1.0))
    assert ranking_metrics({1: np.array([0])}, test, k=1) == (0.0, 0.0, 0.0)


def test_ranking_rejects_non_positive_k():
    with pytest.raises(ConfigError):
        ranking_metrics({}, [], k=0)


def check_against_brute_force(seed: int) -> None:
    rng = np.random.default_rng(seed)
    dataset, emb = random_instance(rng, int(rng.integers(2, 50)), int(rng.integers(4, 50)))
    for k in (1, 5, 20):
        ranked = full_rank_topk(emb, dataset, k)
        np.testing.assert_allclose(ranking_metrics(ranked, dataset.test_adjacency, k),
                                   brute_force_metrics(emb, dataset, k), atol=1e-12)


@pytest.mark.parametrize('seed', range(10))
def test_metrics_match_brute_force(seed):
    check_against_brute_force(seed)


@pytest.mark.slow
def test_metrics_match_brute_force_on_a_thousand_instances():
    for seed in range(1000):
        check_against_brute_force(seed)


def test_train_items_are_masked():
    rng = np.random.default_rng(1)
    dataset, emb = random_instance(rng, 20, 15)
    for user, items in full_rank_topk(emb, dataset, 10).items():
        assert not np.intersect1d(items, dataset.train_adjacency[user]).size


def test_masked_item_forces_the_other():
    dataset = make_dataset([[0]], [[1]], num_items=2)
    emb = np.array([[1.0], [5.0], [-5.0]])
    np.testing.assert_array_equal(full_rank_topk(emb, dataset, 1)[0], [1])


def test_k_larger_than_catalogue_truncates():
    dataset = make_dataset([[0, 2]], [[1]], num_items=5)
    emb = np.ones((6, 2))
    ranked = full_rank_topk(emb, dataset, 10)[0]
    np.testing.assert_array_equal(ranked, [1, 3, 4])


def test_ndcg_ignores_order_below_k():
    test = [np.array([0, 3])]
    first = ranking_metrics({0: np.array([0, 1, 2, 3, 4])}, test, k=2)
    second = ranking_metrics({0: np.array([0, 1, 4, 3, 2])}, test, k=2)
    assert first == pytest.approx(second)


def test_mad_extremes():
    assert mad_metric(np.tile([[1.0, 2.0]], (5, 1)), (0, 5)) == pytest.approx(0.0, abs=1e-12)
    assert mad_metric(np.eye(4), (0, 4)) == pytest.approx(1.0)
    assert mad_metric(np.eye(4), (1, 2)) == 0.0
    with pytest.raises(ConfigError):
        mad_metric(np.eye(4), (2, 2))


def test_mad_of_random_embeddings_is_near_one():
    emb = np.random.default_rng(0).normal(size=(500, 32))
    assert 0.8 <= mad_metric(emb, (0, 500)) <= 1.2


def test_sampled_mad_matches_exact():
    emb = np.random.default_rng(2).normal(size=(300, 3))
    exact = mad_metric(emb, (0, 300))
    sampled = mad_metric(emb, (0, 300), sample=3000 * 10, seed=5, exact_limit=100)
    assert abs(exact - sampled) < 0.02


def test_single_bucket_equals_global():
    rng = np.random.default_rng(3)
    dataset, emb = random_instance(rng, 30, 20)
    ranked = full_rank_topk(emb, dataset, 5)
    groups = sparsity_report(dataset, ranked, [0, np.inf], 5)
    assert len(groups) == 1
    np.testing.assert_allclose(groups.loc[0, ['precision', 'recall', 'ndcg']].to_numpy(dtype=float),
                               ranking_metrics(ranked, dataset.test_adjacency, 5))


def test_empty_bucket_is_omitted_and_partition_counts_add_up():
    rng = np.random.default_rng(4)
    dataset, emb = random_instance(rng, 30, 20)
    ranked = full_rank_topk(emb, dataset, 5)
    groups = sparsity_report(dataset, ranked, [0, 4, 1000, 2000], 5)
    assert '[1000,2000)' not in set(groups['group'])
    assert groups['users'].sum() == len(dataset.test_users())


def test_item_side_buckets_restrict_relevant_items():
    dataset = make_dataset([[0], [0], [1]], [[1, 2], [2], [0]], num_items=3)
    emb = np.ones((6, 2))
    ranked = full_rank_topk(emb, dataset, 3)
    groups = sparsity_report(dataset, ranked, [0, 1, 3], 3, side='item')
    cold = groups[groups['group'] == '[0,1)'].iloc[0]
    assert cold['users'] == 2  # item 2 has no train interactions
    assert cold['recall'] == pytest.approx(1.0)


def test_bucket_edges_must_ascend():
    dataset = make_dataset([[0]], [[1]], num_items=2)
    with pytest.raises(ConfigError):
        sparsity_report(dataset, {}, [10, 5], 1)


def test_evaluate_and_save(tmp_path):
    rng = np.random.default_rng(5)
    dataset, emb = random_instance(rng, 25, 30)
    report = evaluate(emb, dataset, ks=(5, 10), bucket_edges=(0, 5, np.inf))
    assert isinstance(report, EvalReport)
    assert list(report.headline()) == ['P@5', 'P@10', 'R@5', 'R@10', 'N@5', 'N@10']
    for values in report.metrics.values():
        assert all(0.0 <= v <= 1.0 for v in values.values())
    assert 0.0 <= report.mad_users <= 2.0 and 0.0 <= report.mad_items <= 2.0
    tsv_path, kv_path = report.save(str(tmp_path))
    frame = pd.read_csv(tsv_path, sep='\t')
    assert list(frame['k']) == [5, 10]
    text = open(kv_path).read()
    assert 'R@5=' in text and 'MAD_users=' in text
    assert os.path.exists(os.path.join(str(tmp_path), 'eval_report_groups.tsv'))


def test_ranking_target_decides_which_items_are_hidden():
    dataset = dataclasses.replace(make_dataset([[0], []], [[2], [1]], num_items=4),
                                  validation_adjacency=[np.array([1]), np.array([], dtype=np.int64)])
    emb = np.ones((6, 2))
    np.testing.assert_array_equal(full_rank_topk(emb, dataset, 4)[0], [2, 3])
    by_validation = full_rank_topk(emb, dataset, 4, target='validation')
    assert list(by_validation) == [0]
    np.testing.assert_array_equal(by_validation[0], [1, 2, 3])
    with pytest.raises(ConfigError):
        full_rank_topk(emb, dataset, 4, target='train')
