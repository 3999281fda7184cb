"""
Full-rank top-K evaluation, ranking metrics, the over-smoothing (MAD) metric and
sparsity-group reports.
"""
import os
import logging
import numpy as np
import pandas as pd
from dataclasses import dataclass, field
from typing import *

from .autodiff import Tensor
from .dataset import InteractionDataset
from .utils import ConfigError, check_and_create_folder, chunk_ranges, ceil_int_div, progress


logger = logging.getLogger(__name__)

METRICS = ('precision', 'recall', 'ndcg')
_SHORT = {'precision': 'P', 'recall': 'R', 'ndcg': 'N'}


# ------------------- report -------------------
@dataclass
class EvalReport:
    """
    Attributes:
        metrics (dict): K -> {'precision', 'recall', 'ndcg'} macro-averaged over test users.
        mad_users (float): MAD of the user embeddings, in [0, 2].
        mad_items (float): MAD of the item embeddings, in [0, 2].
        groups (pd.DataFrame): per sparsity bucket metrics, empty buckets omitted.
        num_test_users (int): users with at least one test item.
    """
    metrics: Dict[int, Dict[str, float]]
    mad_users: float
    mad_items: float
    groups: pd.DataFrame = field(default_factory=pd.DataFrame)
    num_test_users: int = 0

    def headline(self) -> Dict[str, float]:
        """Flat metrics ordered like P@20 P@40 R@20 R@40 N@20 N@40."""
        return {f"{_SHORT[name]}@{k}": self.metrics[k][name] for name in METRICS for k in sorted(self.metrics)}

    def to_frame(self) -> pd.DataFrame:
        rows = [{'k': k, **self.metrics[k]} for k in sorted(self.metrics)]
        return pd.DataFrame(rows, columns=['k', *METRICS])

    def to_tsv(self) -> str:
        return self.to_frame().to_csv(sep='\t', index=False, float_format='%.6f')

    def to_key_value(self) -> str:
        lines = [f"{key}={value:.6f}" for key, value in self.headline().items()]
        lines += [f"MAD_users={self.mad_users:.6f}", f"MAD_items={self.mad_items:.6f}",
                  f"test_users={self.num_test_users}"]
        for _, row in self.groups.iterrows():
            prefix = f"group.{row['side']}.{row['group']}"
            lines.append(f"{prefix}.users={int(row['users'])}")
            lines += [f"{prefix}.{name}={row[name]:.6f}" for name in METRICS]
        return '\n'.join(lines) + '\n'

    def save(self, directory: str, stem: str = 'eval_report') -> Tuple[str, str]:
        check_and_create_folder(directory)
        tsv_path = os.path.join(directory, f"{stem}.tsv")
        kv_path = os.path.join(directory, f"{stem}.txt")
        with open(tsv_path, 'w') as handle:
            handle.write(self.to_tsv())
        with open(kv_path, 'w') as handle:
            handle.write(self.to_key_value())
        if not self.groups.empty:
            self.groups.to_csv(os.path.join(directory, f"{stem}_groups.tsv"), sep='\t', index=False,
                               float_format='%.6f')
        logger.info(f"Evaluation report written to {tsv_path} and {kv_path}")
        return tsv_path, kv_path


# ------------------- ranking -------------------
def _values(final) -> np.ndarray:
    return final.values if isinstance(final, Tensor) else np.asarray(final)


def full_rank_topk(final, dataset: InteractionDataset, k: int, users: Sequence[int] = None,
                   chunk_size: int = 1024, target: str = 'test') -> Dict[int, np.ndarray]:
    """
    Rank every item for each target user by e'_u . e'_i with the user's known items masked out.
    For target 'test' the train and validation items are masked, for 'validation' only the
    train items.

    Args:
        final: E' as a Tensor or array of shape (|U|+|I|) x d.
        dataset (InteractionDataset): split dataset.
        k (int): list length; shorter when fewer unmasked items exist.
        users (sequence): users to rank, default every user with a target item.
        chunk_size (int): users scored per dense block.
        target (str): 'test' or 'validation'.

    Returns:
        dict: user -> item indices by descending score, ties by ascending item index.
    """
    if k < 1:
        raise ConfigError(f"K must be at least 1, got {k}")
    emb = _values(final)
    user_emb, item_emb = emb[:dataset.num_users], emb[dataset.num_users:]
    if target not in ('test', 'validation'):
        raise ConfigError(f"unknown ranking target '{target}'")
    if users is None:
        users = dataset.test_users() if target == 'test' else dataset.validation_users()
    users = np.asarray(users, dtype=np.int64)
    known = dataset.known_matrix if target == 'test' else dataset.train_matrix
    ranked = {}
    spans = chunk_ranges(len(users), ceil_int_div(len(users), chunk_size)) if len(users) else []
    for start, stop in progress(spans, desc='ranking', leave=False):
        block = users[start:stop]
        scores = user_emb[block] @ item_emb.T
        mask = known[block]
        scores[mask.nonzero()] = -np.inf
        order = np.argsort(-scores, axis=1, kind='stable')[:, :k]
        allowed = dataset.num_items - np.diff(mask.indptr)
        for row, user in enumerate(block):
            ranked[int(user)] = order[row, :min(k, allowed[row])]
    return ranked


def _user_metrics(items: np.ndarray, relevant: np.ndarray, k: int) -> Tuple[float, float, float]:
    items = np.asarray(items)[:k]
    hits = np.isin(items, relevant)
    num_hits = int(hits.sum())
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    dcg = float(np.sum(discounts[:len(items)][hits]))
    idcg = float(np.sum(discounts[:min(k, len(relevant))]))
    return num_hits / k, num_hits / len(relevant), (dcg / idcg if idcg > 0 else 0.0)


def ranking_metrics(ranked: Mapping[int, np.ndarray], test_adjacency: Sequence[np.ndarray],
                    k: int) -> Tuple[float, float, float]:
    """
    Macro-averaged Precision@K (hits/K), Recall@K (hits/|test|) and NDCG@K with binary gains
    and log2(rank + 1) discounts; users without test items are skipped.
    """
    if k < 1:
        raise ConfigError(f"K must be at least 1, got {k}")
    rows = [_user_metrics(items, test_adjacency[u], k)
            for u, items in ranked.items() if len(test_adjacency[u])]
    if not rows:
        return 0.0, 0.0, 0.0
    p, r, n = np.mean(np.array(rows), axis=0)
    return float(p), float(r), float(n)


# ------------------- over-smoothing -------------------
def mad_metric(final, node_range: Tuple[int, int], sample: int = 200000, seed: int = 0,
               exact_limit: int = 2000) -> float:
    """
    Mean average distance (1 - cosine) between L2-normalized embeddings of nodes
    [start, stop). All pairs are used when the span is at most `exact_limit`, otherwise
    `sample` uniformly drawn pairs of distinct nodes.
    """
    start, stop = node_range
    if stop <= start:
        raise ConfigError(f"empty node range {node_range}")
    emb = _values(final)[start:stop]
    norms = np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-12)
    unit = emb / norms
    n = len(unit)
    if n < 2:
        return 0.0
    if n <= exact_limit:
        gram = unit @ unit.T
        off_diagonal = gram.sum() - np.trace(gram)
        return float(1.0 - off_diagonal / (n * (n - 1)))
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n, size=sample)
    b = rng.integers(0, n - 1, size=sample)
    b = b + (b >= a)  # distinct partner, uniform over the other n - 1 nodes
    return float(np.mean(1.0 - np.sum(unit[a] * unit[b], axis=1)))


# ------------------- sparsity groups -------------------
def _bucket_label(lower, upper) -> str:
    return f"[{int(lower)},{'inf' if np.isinf(upper) else int(upper)})"


def sparsity_report(dataset: InteractionDataset, ranked: Mapping[int, np.ndarray],
                    bucket_edges: Sequence[float], k: int, side: str = 'user') -> pd.DataFrame:
    """
    Ranking metrics per interaction-count bucket [edges[b], edges[b+1]).

    side='user' buckets test users by their train degree. side='item' buckets items by
    their train degree and scores each user against the test items of that bucket only.
    Buckets without any counted user are omitted.
    """
    edges = np.asarray(bucket_edges, dtype=np.float64)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ConfigError(f"bucket edges must be strictly ascending with at least two values, got {bucket_edges}")
    if side not in ('user', 'item'):
        raise ConfigError(f"side must be 'user' or 'item', got '{side}'")
    rows = []
    if side == 'user':
        degrees = dataset.train_degrees()
    else:
        degrees = np.asarray(dataset.train_matrix.sum(axis=0)).ravel()
    for lower, upper in zip(edges[:-1], edges[1:]):
        if side == 'user':
            members = {u: items for u, items in ranked.items()
                       if lower <= degrees[u] < upper and len(dataset.test_adjacency[u])}
            relevant = dataset.test_adjacency
        else:
            in_bucket = (degrees >= lower) & (degrees < upper)
            relevant = [items[in_bucket[items]] for items in dataset.test_adjacency]
            members = {u: items for u, items in ranked.items() if len(relevant[u])}
        if not members:
            continue
        p, r, n = ranking_metrics(members, relevant, k)
        rows.append({'side': side, 'group': _bucket_label(lower, upper), 'lower': lower, 'upper': upper,
                     'users': len(members), 'k': k, 'precision': p, 'recall': r, 'ndcg': n})
    return pd.DataFrame(rows, columns=['side', 'group', 'lower', 'upper', 'users', 'k', *METRICS])


# ------------------- full evaluation -------------------
def evaluate(final, dataset: InteractionDataset, ks: Sequence[int] = (20, 40),
             bucket_edges: Sequence[float] = None, mad_sample: int = 200000, seed: int = 0) -> EvalReport:
    """
    Rank once at the largest K, then derive every requested K, MAD for users and items,
    and (with `bucket_edges`) user- and item-side sparsity groups at the smallest K.
    """
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise ConfigError(f"K list must hold positive integers, got {ks}")
    ranked = full_rank_topk(final, dataset, ks[-1])
    metrics = {}
    for k in ks:
        p, r, n = ranking_metrics(ranked, dataset.test_adjacency, k)
        metrics[k] = {'precision': p, 'recall': r, 'ndcg': n}
    nu, ni = dataset.num_users, dataset.num_items
    mad_users = mad_metric(final, (0, nu), sample=mad_sample, seed=seed)
    mad_items = mad_metric(final, (nu, nu + ni), sample=mad_sample, seed=seed + 1)
    if bucket_edges is not None:
        groups = pd.concat([sparsity_report(dataset, ranked, bucket_edges, ks[0], side)
                            for side in ('user', 'item')], ignore_index=True)
    else:
        groups = pd.DataFrame()
    report = EvalReport(metrics=metrics, mad_users=mad_users, mad_items=mad_items, groups=groups,
                        num_test_users=int(sum(1 for u in ranked if len(dataset.test_adjacency[u]))))
    logger.info("Evaluation: " + ' '.join(f"{key}={value:.4f}" for key, value in report.headline().items()))
    return report
