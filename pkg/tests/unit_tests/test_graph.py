import numpy as np
import pytest

from ipccf import simulation
from ipccf.dataset import InteractionDataset
from ipccf.graph import (ExtractionConfig, SparseOperator, build_direct_adjacency, build_graph_operators,
                         extract_high_order, normalize_direct, normalize_high_order)
from ipccf.utils import ConfigError, DataError


def brute_force_high_order(matrix: np.ndarray, eta: float, q: int) -> np.ndarray:
    """All-pairs Jaccard over the rows of a dense binary matrix, then the eta / top-q filter."""
    n = matrix.shape[0]
    sims = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            inter = np.sum(matrix[a] & matrix[b])
            union = np.sum(matrix[a] | matrix[b])
            sims[a, b] = inter / union if union else 0.0
    kept = np.zeros_like(sims)
    for a in range(n):
        candidates = sims[a][sims[a] > 0]
        threshold = np.inf
        if q > 0 and len(candidates):
            threshold = np.sort(candidates)[::-1][min(q, len(candidates)) - 1]
        for b in range(n):
            if sims[a, b] > 0 and (sims[a, b] >= eta or sims[a, b] >= threshold):
                kept[a, b] = sims[a, b]
    return kept


def dense_interactions(data: InteractionDataset) -> np.ndarray:
    return data.train_matrix.toarray().astype(bool)


def test_sparse_operator_rejects_duplicates_and_non_finite():
    with pytest.raises(DataError):
        SparseOperator.from_coo([0, 0], [1, 1], [1.0, 2.0], shape=(2, 2))
    with pytest.raises(DataError):
        SparseOperator.from_coo([0], [1], [np.nan], shape=(2, 2))


def test_direct_adjacency_is_symmetric_bipartite():
    data = InteractionDataset.from_adjacency([('u0', ['a', 'b']), ('u1', ['b'])])
    adjacency = build_direct_adjacency(data).to_dense()
    expected = np.zeros((5, 5))
    for u, i in [(0, 0), (0, 1), (1, 1)]:
        expected[u, 2 + i] = expected[2 + i, u] = 1.0
    np.testing.assert_array_equal(adjacency, expected)


def test_normalized_direct_matches_degree_oracle():
    for seed in range(20):
        data = simulation.random_bipartite(12, 9, density=0.25, seed=seed)
        adjacency = build_direct_adjacency(data)
        norm = normalize_direct(adjacency).to_dense()
        dense = adjacency.to_dense()
        degrees = dense.sum(axis=1)
        for a, b in zip(*np.nonzero(dense)):
            assert norm[a, b] == pytest.approx(1.0 / np.sqrt(degrees[a] * degrees[b]), abs=1e-15)
        assert np.count_nonzero(norm) == np.count_nonzero(dense)


def test_single_edge_normalizes_to_one():
    data = InteractionDataset.from_adjacency([('u', ['i'])])
    norm = normalize_direct(build_direct_adjacency(data)).to_dense()
    np.testing.assert_allclose(norm, [[0, 1], [1, 0]])


def check_random_graphs_against_brute_force(eta: float, q: int, graphs: int) -> None:
    rng = np.random.default_rng(int(eta * 10) + q)
    for _ in range(graphs):
        nu, ni = rng.integers(5, 30, size=2)
        data = simulation.random_bipartite(int(nu), int(ni), density=float(rng.uniform(0.05, 0.4)),
                                           seed=int(rng.integers(1 << 30)))
        highorder = extract_high_order(data, ExtractionConfig(eta=eta, q=q)).to_dense()
        dense = dense_interactions(data)
        nu = data.num_users
        np.testing.assert_allclose(highorder[:nu, :nu], brute_force_high_order(dense, eta, q), atol=1e-12)
        np.testing.assert_allclose(highorder[nu:, nu:], brute_force_high_order(dense.T, eta, q), atol=1e-12)
        assert not highorder[:nu, nu:].any() and not highorder[nu:, :nu].any()
        assert not np.diag(highorder).any()


@pytest.mark.parametrize('eta', [0.1, 0.5, 0.8])
@pytest.mark.parametrize('q', [0, 3, 5])
def test_high_order_matches_brute_force(eta, q):
    check_random_graphs_against_brute_force(eta, q, graphs=5)


@pytest.mark.slow
@pytest.mark.parametrize('eta', [0.1, 0.5, 0.8])
@pytest.mark.parametrize('q', [0, 3, 5])
def test_high_order_matches_brute_force_on_fifty_graphs(eta, q):
    check_random_graphs_against_brute_force(eta, q, graphs=50)


def test_top_q_keeps_ties():
    # u0 shares exactly one item with u1, u2 and u3: three equal similarities, q=1 keeps all
    data = InteractionDataset.from_adjacency([('u0', ['a', 'b', 'c']), ('u1', ['a']), ('u2', ['b']), ('u3', ['c'])])
    highorder = extract_high_order(data, ExtractionConfig(eta=0.9, q=1)).to_dense()
    np.testing.assert_allclose(highorder[0, 1:4], [1 / 3, 1 / 3, 1 / 3])


def test_identical_neighborhoods_have_similarity_one():
    data = InteractionDataset.from_adjacency([('u0', ['a', 'b']), ('u1', ['a', 'b'])])
    highorder = extract_high_order(data, ExtractionConfig(eta=0.8, q=0)).to_dense()
    assert highorder[0, 1] == pytest.approx(1.0)
    assert highorder[1, 0] == pytest.approx(1.0)


def test_parallel_extraction_equals_sequential():
    data = simulation.random_bipartite(40, 30, density=0.15, seed=2)
    config = ExtractionConfig(eta=0.5, q=3)
    sequential = extract_high_order(data, config, workers=1).to_dense()
    parallel = extract_high_order(data, config, workers=2).to_dense()
    np.testing.assert_allclose(parallel, sequential)


def test_high_order_rows_are_stochastic():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        data = simulation.random_bipartite(int(rng.integers(5, 100)), int(rng.integers(5, 100)),
                                           density=float(rng.uniform(0.02, 0.3)), seed=seed)
        norm = normalize_high_order(extract_high_order(data, ExtractionConfig(0.8, 5)))
        sums = norm.row_sums()
        nonempty = norm.row_degrees() > 0
        np.testing.assert_allclose(sums[nonempty], 1.0, atol=1e-6)
        assert np.all(sums[~nonempty] == 0)


def test_extraction_config_validation():
    with pytest.raises(ConfigError):
        ExtractionConfig(eta=1.5)
    with pytest.raises(ConfigError):
        ExtractionConfig(q=-1)


def test_operators_without_high_order_are_empty(toy_dataset):
    operators = build_graph_operators(toy_dataset, high_order=False)
    assert operators.highorder.nnz == 0
    assert operators.norm_highorder.shape == (toy_dataset.num_nodes, toy_dataset.num_nodes)


def test_save_edge_list(tmp_path, toy_operators):
    path = tmp_path / 'edges.txt'
    toy_operators.highorder.save_edge_list(str(path))
    lines = path.read_text().strip().splitlines()
    assert len(lines) == toy_operators.highorder.nnz
    row, col, weight = lines[0].split(' ')
    assert toy_operators.highorder.to_dense()[int(row), int(col)] == pytest.approx(float(weight))
