"""
Graph operators over the joint user/item node space: the bipartite direct-interaction
matrix, the Jaccard high-order similarity matrix, and their normalizations.

Node layout: users occupy 0..|U|-1, items |U|..|U|+|I|-1.
"""
import logging
import numpy as np
import pandas as pd
import scipy.sparse as sp
from dataclasses import dataclass
from functools import cached_property
from typing import *

from .dataset import InteractionDataset
from .utils import ConfigError, DataError, chunk_ranges, process_list_in_parallel, progress


logger = logging.getLogger(__name__)


# ------------------- domain types -------------------
class SparseOperator:
    """
    Fixed sparse matrix in canonical CSR form (sorted coordinates, no duplicates,
    finite weights). Structural operators carry strictly positive weights.
    """
    def __init__(self, matrix: sp.spmatrix):
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
        matrix.sum_duplicates()
        matrix.sort_indices()
        if not np.all(np.isfinite(matrix.data)):
            raise DataError("sparse operator weights must be finite")
        self.matrix = matrix

    def __repr__(self) -> str:
        return f"SparseOperator(shape={self.shape}, nnz={self.nnz})"

    @classmethod
    def from_coo(cls, rows, cols, weights, shape: Tuple[int, int]) -> 'SparseOperator':
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        keys = rows * shape[1] + cols
        if len(np.unique(keys)) != len(keys):
            raise DataError("duplicate (row, col) coordinates in sparse operator")
        return cls(sp.coo_matrix((np.asarray(weights, dtype=np.float64), (rows, cols)), shape=shape))

    @classmethod
    def empty(cls, n: int) -> 'SparseOperator':
        return cls(sp.csr_matrix((n, n), dtype=np.float64))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    @cached_property
    def rows(self) -> np.ndarray:
        """Row index of every stored entry, aligned with `cols` and `weights`."""
        return np.repeat(np.arange(self.shape[0], dtype=np.int64), np.diff(self.matrix.indptr))

    @property
    def cols(self) -> np.ndarray:
        return self.matrix.indices.astype(np.int64)

    @property
    def weights(self) -> np.ndarray:
        return self.matrix.data

    @cached_property
    def transposed(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def row_degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def save_edge_list(self, path: str) -> None:
        """Write the stored entries as 'row col weight' lines."""
        frame = pd.DataFrame({'row': self.rows, 'col': self.cols, 'weight': self.weights})
        frame.to_csv(path, sep=' ', header=False, index=False, float_format='%.10g')
        logger.info(f"Wrote {self.nnz} edges to {path}")


@dataclass(frozen=True)
class ExtractionConfig:
    """
    Filters of the high-order extraction: keep a pair when its similarity reaches `eta`
    or it is among the source node's top `q` similarities.
    """
    eta: float = 0.8
    q: int = 5

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.q < 0:
            raise ConfigError(f"q must be non-negative, got {self.q}")


@dataclass
class GraphOperators:
    """Direct and high-order operators with their normalized forms."""
    adjacency: SparseOperator
    highorder: SparseOperator
    norm_adjacency: SparseOperator
    norm_highorder: SparseOperator
    num_users: int
    num_items: int

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items


# ------------------- direct relations -------------------
def build_direct_adjacency(dataset: InteractionDataset) -> SparseOperator:
    """
    Bipartite operator [[0, A], [A^T, 0]] over the train interactions, all weights 1.
    """
    users, items = dataset.train_pairs()
    n = dataset.num_nodes
    rows = np.concatenate([users, items + dataset.num_users])
    cols = np.concatenate([items + dataset.num_users, users])
    return SparseOperator.from_coo(rows, cols, np.ones(len(rows)), shape=(n, n))


def normalize_direct(adjacency: SparseOperator) -> SparseOperator:
    """
    Symmetric degree normalization: entry (u, i) becomes 1 / sqrt(deg(u) * deg(i)).
    Isolated nodes keep empty rows.
    """
    degrees = adjacency.row_degrees().astype(np.float64)
    inv_sqrt = np.zeros_like(degrees)
    inv_sqrt[degrees > 0] = 1.0 / np.sqrt(degrees[degrees > 0])
    weights = inv_sqrt[adjacency.rows] * inv_sqrt[adjacency.cols]
    return SparseOperator.from_coo(adjacency.rows, adjacency.cols, weights, adjacency.shape)


# ------------------- high-order relations -------------------
def _filter_rows(sims: sp.csr_matrix, eta: float, q: int) -> sp.csr_matrix:
    """
    Keep entries with sim >= eta or sim >= the row's q-th largest value (ties kept).
    """
    keep = sims.data >= eta
    if q > 0:
        for r in range(sims.shape[0]):
            start, stop = sims.indptr[r], sims.indptr[r + 1]
            if stop - start == 0:
                continue
            row = sims.data[start:stop]
            if len(row) <= q:
                keep[start:stop] = True
            else:
                threshold = np.partition(row, len(row) - q)[len(row) - q]
                keep[start:stop] |= row >= threshold
    filtered = sims.copy()
    filtered.data = np.where(keep, filtered.data, 0.0)
    filtered.eliminate_zeros()
    return filtered


def _similarity_chunk(args) -> sp.csr_matrix:
    """
    Jaccard similarities of source rows [start, stop) against every row of `incidence`,
    restricted to pairs with at least one shared neighbor, self-pairs removed, filtered.
    """
    incidence, start, stop, eta, q = args
    degrees = np.diff(incidence.indptr).astype(np.float64)
    block = incidence[start:stop]
    shared = (block @ incidence.T).tocsr()  # two-hop co-occurrence counts
    shared.sort_indices()
    rows = np.repeat(np.arange(stop - start), np.diff(shared.indptr))
    cols = shared.indices
    union = degrees[rows + start] + degrees[cols] - shared.data
    sims = sp.csr_matrix((shared.data / union, cols.copy(), shared.indptr.copy()), shape=shared.shape)
    sims.data[rows + start == cols] = 0.0
    sims.eliminate_zeros()
    return _filter_rows(sims, eta, q)


def _homogeneous_similarity(incidence: sp.csr_matrix, config: ExtractionConfig, workers: int,
                            desc: str) -> sp.csr_matrix:
    n = incidence.shape[0]
    if n == 0:
        return sp.csr_matrix((0, 0), dtype=np.float64)
    spans = chunk_ranges(n, max(1, workers) * 4)
    tasks = [(incidence, a, b, config.eta, config.q) for a, b in spans]
    if workers > 1:
        blocks = process_list_in_parallel(_similarity_chunk, tasks, processes=workers)
    else:
        blocks = [_similarity_chunk(task) for task in progress(tasks, desc=desc)]
    return sp.vstack(blocks, format='csr')


def extract_high_order(dataset: InteractionDataset, config: ExtractionConfig = ExtractionConfig(),
                       workers: int = 1) -> SparseOperator:
    """
    High-order homogeneous relations from the train interactions.

    For every ordered pair (u, v), u != v, of users (or of items) sharing at least one
    neighbor, sim = |N(u) & N(v)| / |N(u) | N(v)|. The pair is kept with weight sim when
    sim >= eta or sim is among u's top-q similarities (ties at the q-th value kept).
    The user-user and item-item blocks are placed on the diagonal of the joint node space.

    Args:
        dataset (InteractionDataset): split dataset, train portion used.
        config (ExtractionConfig): eta and q filters.
        workers (int): processes used for the per-source-node similarity computation.

    Returns:
        SparseOperator: H-hat of shape (|U|+|I|, |U|+|I|).
    """
    incidence = dataset.train_matrix
    user_block = _homogeneous_similarity(incidence, config, workers, desc='user-user relations')
    item_block = _homogeneous_similarity(incidence.T.tocsr(), config, workers, desc='item-item relations')
    highorder = SparseOperator(sp.block_diag([user_block, item_block], format='csr'))
    logger.info(f"Extracted {highorder.nnz} high-order relations (eta={config.eta}, q={config.q})")
    return highorder


def normalize_high_order(highorder: SparseOperator) -> SparseOperator:
    """
    Row-stochastic normalization: every non-empty row divided by its weight sum.
    """
    sums = highorder.row_sums()
    inv = np.zeros_like(sums)
    inv[sums > 0] = 1.0 / sums[sums > 0]
    weights = highorder.weights * inv[highorder.rows]
    return SparseOperator.from_coo(highorder.rows, highorder.cols, weights, highorder.shape)


def build_graph_operators(dataset: InteractionDataset, config: ExtractionConfig = ExtractionConfig(),
                          high_order: bool = True, workers: int = 1) -> GraphOperators:
    """
    All four operators the model consumes. With `high_order` False the high-order
    operators are empty.
    """
    adjacency = build_direct_adjacency(dataset)
    if high_order:
        highorder = extract_high_order(dataset, config, workers=workers)
    else:
        highorder = SparseOperator.empty(dataset.num_nodes)
    return GraphOperators(adjacency=adjacency, highorder=highorder,
                          norm_adjacency=normalize_direct(adjacency),
                          norm_highorder=normalize_high_order(highorder),
                          num_users=dataset.num_users, num_items=dataset.num_items)
