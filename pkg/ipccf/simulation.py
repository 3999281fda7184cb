"""
Synthetic interaction generators for demos and end-to-end checks.
"""
import logging
import numpy as np
from abc import ABC, abstractmethod
from typing import *

from .dataset import InteractionDataset
from .utils import ConfigError


logger = logging.getLogger(__name__)


class InteractionGenerator(ABC):
    """
    Abstract class for defining synthetic user-item interaction patterns.
    """
    def __init__(self, num_users: int, num_items: int):
        if num_users < 1 or num_items < 1:
            raise ConfigError(f"need at least one user and one item, got {num_users} x {num_items}")
        self._num_users = num_users
        self._num_items = num_items

    @abstractmethod
    def probabilities(self) -> np.ndarray:
        """(num_users x num_items) interaction probabilities."""
        pass

    @abstractmethod
    def get_metadata(self) -> dict:
        pass

    def sample(self, seed: int = 0, min_degree: int = 1) -> InteractionDataset:
        """
        Draw a binary interaction matrix and return it as an unsplit dataset with raw ids
        'u<index>' / 'i<index>'. Every user gets at least `min_degree` interactions, topped
        up from the items with the highest probability for that user.
        """
        rng = np.random.default_rng(seed)
        probs = self.probabilities()
        matrix = rng.random(probs.shape) < probs
        for u in np.flatnonzero(matrix.sum(axis=1) < min_degree):
            candidates = np.argsort(-probs[u] + rng.random(self._num_items) * 1e-9, kind='stable')
            matrix[u, candidates[:min_degree]] = True
        records = [(f"u{u}", [f"i{i}" for i in np.flatnonzero(matrix[u])]) for u in range(self._num_users)]
        dataset = InteractionDataset.from_adjacency(records)
        logger.debug(f"Generated {dataset} from {self.get_metadata()}")
        return dataset


class BlockInteractionGenerator(InteractionGenerator):
    """
    Users and items split into equal-sized blocks; a user interacts with items of its own
    block with probability `p_in` and with any other item with probability `p_out`.
    """
    def __init__(self, num_users: int, num_items: int, blocks: int = 2, p_in: float = 0.3, p_out: float = 0.0):
        super().__init__(num_users, num_items)
        if blocks < 1 or not (0 <= p_out <= 1 and 0 <= p_in <= 1):
            raise ConfigError("blocks must be positive and probabilities lie in [0, 1]")
        self._blocks = blocks
        self._p_in = p_in
        self._p_out = p_out

    def user_block(self) -> np.ndarray:
        return np.arange(self._num_users) * self._blocks // self._num_users

    def item_block(self) -> np.ndarray:
        return np.arange(self._num_items) * self._blocks // self._num_items

    def probabilities(self) -> np.ndarray:
        same = self.user_block()[:, None] == self.item_block()[None, :]
        return np.where(same, self._p_in, self._p_out)

    def get_metadata(self) -> dict:
        return {'type': 'block', 'users': self._num_users, 'items': self._num_items,
                'blocks': self._blocks, 'p_in': self._p_in, 'p_out': self._p_out}


class UniformInteractionGenerator(InteractionGenerator):
    """Every user-item pair interacts independently with probability `density`."""
    def __init__(self, num_users: int, num_items: int, density: float = 0.1):
        super().__init__(num_users, num_items)
        if not 0 <= density <= 1:
            raise ConfigError(f"density must lie in [0, 1], got {density}")
        self._density = density

    def probabilities(self) -> np.ndarray:
        return np.full((self._num_users, self._num_items), self._density)

    def get_metadata(self) -> dict:
        return {'type': 'uniform', 'users': self._num_users, 'items': self._num_items,
                'density': self._density}


def two_block_interactions(num_users: int = 100, num_items: int = 100, p_in: float = 0.3,
                           p_out: float = 0.0, seed: int = 0) -> InteractionDataset:
    return BlockInteractionGenerator(num_users, num_items, blocks=2, p_in=p_in, p_out=p_out).sample(seed)


def random_bipartite(num_users: int, num_items: int, density: float = 0.1, seed: int = 0,
                     min_degree: int = 1) -> InteractionDataset:
    return UniformInteractionGenerator(num_users, num_items, density).sample(seed, min_degree=min_degree)


def write_adjacency_list(dataset: InteractionDataset, path: str) -> None:
    """Write every interaction (train, validation and test) as 'uid iid iid ...' lines."""
    with open(path, 'w', encoding='utf-8') as handle:
        for u in range(dataset.num_users):
            items = dataset.user_items(u)
            handle.write(' '.join([dataset.user_ids[u]] + [dataset.item_ids[i] for i in items]) + '\n')
