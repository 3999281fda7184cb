"""
Implicit-feedback interaction data: loading, id mapping, per-user train/test split and
BPR triple sampling.
"""
import logging
import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field
from functools import cached_property
from sklearn.model_selection import train_test_split
from typing import *

from .utils import DataError, ConfigError


logger = logging.getLogger(__name__)

FORMATS = ('adjacency-list', 'pair-per-line')


# ------------------- domain types -------------------
@dataclass
class InteractionDataset:
    """
    Id-mapped user/item interaction log.

    Attributes:
        num_users (int): number of users, indices 0..num_users-1.
        num_items (int): number of items, indices 0..num_items-1.
        train_adjacency (list[np.ndarray]): per-user sorted item indices used for training.
        test_adjacency (list[np.ndarray]): per-user sorted held-out item indices.
        user_ids (list[str]): raw user id of every user index.
        item_ids (list[str]): raw item id of every item index.
        is_split (bool): False until split_train_test has run.
        validation_adjacency (list[np.ndarray]): per-user items carved out of train for early
            stopping; empty lists unless split_validation has run.
    """
    num_users: int
    num_items: int
    train_adjacency: List[np.ndarray]
    test_adjacency: List[np.ndarray]
    user_ids: List[str]
    item_ids: List[str]
    is_split: bool = False
    validation_adjacency: List[np.ndarray] = None
    user_index: Dict[str, int] = field(init=False, repr=False)
    item_index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.user_index = {raw: idx for idx, raw in enumerate(self.user_ids)}
        self.item_index = {raw: idx for idx, raw in enumerate(self.item_ids)}
        if self.validation_adjacency is None:
            self.validation_adjacency = [np.empty(0, dtype=np.int64) for _ in range(self.num_users)]
        if any(len(side) != self.num_users
               for side in (self.train_adjacency, self.test_adjacency, self.validation_adjacency)):
            raise DataError("adjacency lists must have one entry per user")

    def __repr__(self) -> str:
        return (f"InteractionDataset(users={self.num_users}, items={self.num_items}, "
                f"train={self.num_train}, test={self.num_test}, split={self.is_split})")

    @classmethod
    def from_adjacency(cls, adjacency: Iterable[Tuple[str, Iterable[str]]]) -> 'InteractionDataset':
        """
        Build an unsplit dataset from (raw user, raw items) records. Indices are assigned in
        order of first appearance; duplicate pairs are dropped.
        """
        user_index, item_index = {}, {}
        per_user: List[set] = []
        for raw_user, raw_items in adjacency:
            if raw_user not in user_index:
                user_index[raw_user] = len(user_index)
                per_user.append(set())
            u = user_index[raw_user]
            for raw_item in raw_items:
                if raw_item not in item_index:
                    item_index[raw_item] = len(item_index)
                per_user[u].add(item_index[raw_item])
        train = [np.array(sorted(items), dtype=np.int64) for items in per_user]
        test = [np.empty(0, dtype=np.int64) for _ in per_user]
        return cls(num_users=len(user_index), num_items=len(item_index),
                   train_adjacency=train, test_adjacency=test,
                   user_ids=list(user_index), item_ids=list(item_index))

    @property
    def num_train(self) -> int:
        return int(sum(len(items) for items in self.train_adjacency))

    @property
    def num_test(self) -> int:
        return int(sum(len(items) for items in self.test_adjacency))

    @property
    def num_validation(self) -> int:
        return int(sum(len(items) for items in self.validation_adjacency))

    @property
    def num_interactions(self) -> int:
        return self.num_train + self.num_validation + self.num_test

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def train_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        """(user indices, item indices) of every train interaction, user-major order."""
        lengths = np.array([len(items) for items in self.train_adjacency], dtype=np.int64)
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), lengths)
        items = np.concatenate(self.train_adjacency) if self.num_train else np.empty(0, dtype=np.int64)
        return users, items.astype(np.int64)

    @cached_property
    def train_matrix(self) -> sp.csr_matrix:
        """Binary |U| x |I| train interaction matrix in CSR form (rows sorted)."""
        users, items = self.train_pairs()
        data = np.ones(len(users), dtype=np.float64)
        matrix = sp.csr_matrix((data, (users, items)), shape=(self.num_users, self.num_items))
        matrix.sort_indices()
        return matrix

    @cached_property
    def bpr_sampler(self) -> 'BprSampler':
        """Sampler over the train portion, built on first use and reused by sample_bpr_batch."""
        return BprSampler(self)

    def test_users(self) -> np.ndarray:
        return np.array([u for u in range(self.num_users) if len(self.test_adjacency[u])], dtype=np.int64)

    def validation_users(self) -> np.ndarray:
        return np.array([u for u in range(self.num_users) if len(self.validation_adjacency[u])], dtype=np.int64)

    @cached_property
    def known_matrix(self) -> sp.csr_matrix:
        """Train plus validation interactions, the items hidden when ranking for test."""
        if not self.num_validation:
            return self.train_matrix
        lengths = np.array([len(items) for items in self.validation_adjacency], dtype=np.int64)
        users = np.repeat(np.arange(self.num_users, dtype=np.int64), lengths)
        items = np.concatenate(self.validation_adjacency).astype(np.int64)
        extra = sp.csr_matrix((np.ones(len(users)), (users, items)), shape=(self.num_users, self.num_items))
        matrix = (self.train_matrix + extra).tocsr()
        matrix.sort_indices()
        return matrix

    def user_items(self, user: int) -> np.ndarray:
        """Every item of the user across train, validation and test."""
        return np.union1d(np.union1d(self.train_adjacency[user], self.validation_adjacency[user]),
                          self.test_adjacency[user]).astype(np.int64)

    def train_degrees(self) -> np.ndarray:
        return np.array([len(items) for items in self.train_adjacency], dtype=np.int64)

    def raw_user(self, index: int) -> str:
        return self.user_ids[index]

    def raw_item(self, index: int) -> str:
        return self.item_ids[index]


@dataclass
class BprBatch:
    """Sampled (user, positive item, negative item) triples of one mini-batch."""
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __post_init__(self):
        if not (len(self.users) == len(self.pos_items) == len(self.neg_items)):
            raise DataError("BPR batch sequences must have equal length")

    def __len__(self) -> int:
        return len(self.users)


# ------------------- loading -------------------
def _parse_lines(path: str, format: str) -> Iterator[Tuple[str, List[str]]]:
    try:
        handle = open(path, 'rb')
    except OSError as e:
        raise DataError(f"cannot read interaction file '{path}': {e}")
    with handle:
        for line_no, raw in enumerate(handle, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError:
                raise DataError(f"{path}:{line_no}: malformed line (not valid UTF-8)")
            if line.lstrip().startswith('#'):
                continue
            tokens = line.split()
            if not tokens:
                continue
            if format == 'pair-per-line':
                if len(tokens) != 2:
                    raise DataError(f"{path}:{line_no}: malformed line, expected 'user item' "
                                    f"but found {len(tokens)} field(s)")
                yield tokens[0], tokens[1:]
            else:
                yield tokens[0], tokens[1:]


def load_interactions(path: str, format: str = 'adjacency-list') -> InteractionDataset:
    """
    Load an interaction file into an unsplit dataset.

    Args:
        path (str): text file, UTF-8, `#` lines ignored.
        format (str): 'adjacency-list' ("uid iid iid ...", one user per line) or
            'pair-per-line' ("uid iid").

    Returns:
        InteractionDataset: all interactions in the train lists, empty test lists.

    Raises:
        DataError: unreadable file, malformed line (with line number) or zero interactions.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown interaction format '{format}', expected one of {FORMATS}")
    dataset = InteractionDataset.from_adjacency(_parse_lines(path, format))
    if dataset.num_train == 0:
        raise DataError(f"{path}: zero interactions")
    logger.info(f"Loaded {path}: {dataset.num_users} users, {dataset.num_items} items, "
                f"{dataset.num_train} interactions")
    return dataset


def load_split_interactions(train_path: str, test_path: str, format: str = 'adjacency-list') -> InteractionDataset:
    """
    Load a dataset that ships pre-split into a train file and a test file. Ids are shared;
    test pairs already present in train are dropped from the test side.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown interaction format '{format}', expected one of {FORMATS}")
    train_records = list(_parse_lines(train_path, format))
    test_records = list(_parse_lines(test_path, format))
    joint = InteractionDataset.from_adjacency(train_records + test_records)
    train = InteractionDataset.from_adjacency(train_records)
    if train.num_train == 0:
        raise DataError(f"{train_path}: zero interactions")
    train_sets = [set() for _ in range(joint.num_users)]
    test_sets = [set() for _ in range(joint.num_users)]
    for records, target in ((train_records, train_sets), (test_records, test_sets)):
        for raw_user, raw_items in records:
            target[joint.user_index[raw_user]].update(joint.item_index[i] for i in raw_items)
    result = InteractionDataset(
        num_users=joint.num_users, num_items=joint.num_items,
        train_adjacency=[np.array(sorted(s), dtype=np.int64) for s in train_sets],
        test_adjacency=[np.array(sorted(t - s), dtype=np.int64) for s, t in zip(train_sets, test_sets)],
        user_ids=list(joint.user_ids), item_ids=list(joint.item_ids), is_split=True)
    logger.info(f"Loaded {train_path} + {test_path}: {result.num_users} users, {result.num_items} items, "
                f"{result.num_train} train, {result.num_test} test")
    return result


# ------------------- splitting -------------------
def split_train_test(dataset: InteractionDataset, ratio: float = 0.8, seed: int = 0) -> InteractionDataset:
    """
    Per-user random train/test split. Users with a single interaction keep it in train,
    every other user keeps at least one item on each side.

    Args:
        dataset (InteractionDataset): unsplit dataset (train lists hold everything).
        ratio (float): train fraction, 0 < ratio < 1.
        seed (int): split seed; identical seeds give identical splits.

    Returns:
        InteractionDataset: new split dataset sharing the id maps.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    user_seeds = rng.integers(0, 2**31 - 1, size=dataset.num_users)
    train, test = [], []
    for u in range(dataset.num_users):
        items = dataset.user_items(u)
        if len(items) <= 1:
            train.append(items.astype(np.int64))
            test.append(np.empty(0, dtype=np.int64))
            continue
        n_train = int(np.floor(ratio * len(items) + 1e-9))
        n_train = min(max(n_train, 1), len(items) - 1)
        tr, te = train_test_split(items, train_size=n_train, test_size=len(items) - n_train,
                                  random_state=int(user_seeds[u]), shuffle=True)
        train.append(np.sort(tr).astype(np.int64))
        test.append(np.sort(te).astype(np.int64))
    result = InteractionDataset(num_users=dataset.num_users, num_items=dataset.num_items,
                                train_adjacency=train, test_adjacency=test,
                                user_ids=list(dataset.user_ids), item_ids=list(dataset.item_ids),
                                is_split=True)
    logger.info(f"Split with ratio {ratio} (seed {seed}): {result.num_train} train, {result.num_test} test")
    return result


def split_validation(dataset: InteractionDataset, ratio: float = 0.1, seed: int = 0) -> InteractionDataset:
    """
    Move floor(ratio * n) of each user's n train items into a validation list, keeping at
    least one train item. Test lists are left untouched.

    Args:
        dataset (InteractionDataset): split dataset.
        ratio (float): validation fraction of the train items, 0 <= ratio < 1.
        seed (int): identical seeds give identical carve-outs.

    Returns:
        InteractionDataset: new dataset sharing the id maps.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"validation ratio must lie in [0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    user_seeds = rng.integers(0, 2**31 - 1, size=dataset.num_users)
    train, validation = [], []
    for u in range(dataset.num_users):
        items = np.union1d(dataset.train_adjacency[u], dataset.validation_adjacency[u]).astype(np.int64)
        n_val = min(int(np.floor(ratio * len(items) + 1e-9)), len(items) - 1)
        if n_val < 1:
            train.append(items)
            validation.append(np.empty(0, dtype=np.int64))
            continue
        tr, va = train_test_split(items, test_size=n_val, random_state=int(user_seeds[u]), shuffle=True)
        train.append(np.sort(tr).astype(np.int64))
        validation.append(np.sort(va).astype(np.int64))
    result = InteractionDataset(num_users=dataset.num_users, num_items=dataset.num_items,
                                train_adjacency=train, test_adjacency=list(dataset.test_adjacency),
                                user_ids=list(dataset.user_ids), item_ids=list(dataset.item_ids),
                                is_split=dataset.is_split, validation_adjacency=validation)
    logger.info(f"Validation carve-out with ratio {ratio} (seed {seed}): {result.num_validation} "
                f"validation, {result.num_train} train")
    return result


def active_subsample(dataset: InteractionDataset, max_users: int) -> InteractionDataset:
    """
    Keep the `max_users` most active users (ties by index) and the items they touch,
    re-indexed in their original relative order.
    """
    degrees = np.array([len(dataset.user_items(u)) for u in range(dataset.num_users)])
    keep = np.sort(np.argsort(-degrees, kind='stable')[:max_users])
    records = []
    for u in keep:
        items = dataset.user_items(u)
        records.append((dataset.user_ids[u], [dataset.item_ids[i] for i in items]))
    return InteractionDataset.from_adjacency(records)


# ------------------- BPR sampling -------------------
class BprSampler:
    """
    Uniform BPR triple sampler over the train portion of a dataset. Users are drawn from
    those with at least one train item, positives uniformly from the user's list and
    negatives uniformly with rejection.
    """
    def __init__(self, dataset: InteractionDataset):
        matrix = dataset.train_matrix
        self.num_items = dataset.num_items
        self.indptr = matrix.indptr.astype(np.int64)
        self.indices = matrix.indices.astype(np.int64)
        lengths = np.diff(self.indptr)
        self.active_users = np.flatnonzero(lengths > 0)
        if len(self.active_users) == 0:
            raise DataError("cannot sample BPR triples from an empty train set")
        saturated = self.active_users[lengths[self.active_users] >= self.num_items]
        if len(saturated):
            raise DataError(f"user index {int(saturated[0])} interacted with every item; "
                            f"negative sampling cannot terminate")
        # user-major sorted keys u * |I| + i for membership tests
        users = np.repeat(np.arange(len(lengths), dtype=np.int64), lengths)
        self.keys = users * self.num_items + self.indices

    def _is_positive(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        keys = users * self.num_items + items
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == keys

    def sample(self, batch_size: int, rng: np.random.Generator) -> BprBatch:
        users = self.active_users[rng.integers(0, len(self.active_users), size=batch_size)]
        lengths = self.indptr[users + 1] - self.indptr[users]
        offsets = np.floor(rng.random(batch_size) * lengths).astype(np.int64)
        pos_items = self.indices[self.indptr[users] + offsets]
        neg_items = rng.integers(0, self.num_items, size=batch_size)
        clash = self._is_positive(users, neg_items)
        while clash.any():
            neg_items[clash] = rng.integers(0, self.num_items, size=int(clash.sum()))
            clash = self._is_positive(users, neg_items)
        return BprBatch(users=users, pos_items=pos_items, neg_items=neg_items)


def sample_bpr_batch(dataset: InteractionDataset, batch_size: int, rng: np.random.Generator) -> BprBatch:
    """
    Draw one batch of BPR triples from the train portion.

    Args:
        dataset (InteractionDataset): dataset with a non-empty train set.
        batch_size (int): number of triples B.
        rng (np.random.Generator): seeded generator, advanced in place.

    Returns:
        BprBatch
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be positive, got {batch_size}")
    return dataset.bpr_sampler.sample(batch_size, rng)
