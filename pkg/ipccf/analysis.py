import numpy as np
import pandas as pd
import scipy.stats as stats
from typing import *

from .dataset import InteractionDataset


def calculate_mean(data: np.array) -> float:
    """
    The average value of the dataset, which provides a central point around which the data values are distributed.

    Args:
        data: np.array

    Returns:
        float
    """
    return float(np.mean(data))


def calculate_median(data: np.array) -> float:
    """
    The middle value in the dataset when it is ordered from least to greatest, which can be a better measure of central tendency than the mean in skewed distributions.
    """
    return float(np.median(data))


def calculate_standard_deviation(data: np.array) -> float:
    """
    Sample standard deviation (ddof=1); 0 for fewer than two values.
    """
    return float(np.std(data, ddof=1)) if len(data) > 1 else 0.0


def calculate_skewness(data: np.array) -> float:
    """
    Asymmetry of the distribution. Interaction degrees are typically right-skewed (a long tail of very active users).
    """
    return float(stats.skew(data)) if len(data) > 2 and np.ptp(data) > 0 else 0.0


def calculate_kurtosis(data: np.array) -> float:
    """
    Excess kurtosis (Fisher definition): heaviness of the tails relative to a normal distribution.
    """
    return float(stats.kurtosis(data)) if len(data) > 3 and np.ptp(data) > 0 else 0.0


def describe_degrees(degrees: np.array) -> dict:
    return {'min': int(np.min(degrees)) if len(degrees) else 0,
            'max': int(np.max(degrees)) if len(degrees) else 0,
            'mean': calculate_mean(degrees) if len(degrees) else 0.0,
            'median': calculate_median(degrees) if len(degrees) else 0.0,
            'std': calculate_standard_deviation(degrees),
            'skewness': calculate_skewness(degrees),
            'kurtosis': calculate_kurtosis(degrees)}


def interaction_statistics(dataset: InteractionDataset) -> dict:
    """
    Size, density and degree distribution summaries of a dataset (train side for degrees).
    """
    user_degrees = dataset.train_degrees()
    item_degrees = np.asarray(dataset.train_matrix.sum(axis=0)).ravel().astype(np.int64)
    cells = dataset.num_users * dataset.num_items
    return {'users': dataset.num_users,
            'items': dataset.num_items,
            'interactions': dataset.num_interactions,
            'train': dataset.num_train,
            'test': dataset.num_test,
            'density': dataset.num_interactions / cells if cells else 0.0,
            'user_degree': describe_degrees(user_degrees),
            'item_degree': describe_degrees(item_degrees)}


def statistics_table(dataset: InteractionDataset) -> pd.DataFrame:
    """Degree summaries of users and items side by side."""
    info = interaction_statistics(dataset)
    return pd.DataFrame({'user': info['user_degree'], 'item': info['item_degree']})


def embedding_norms(final: np.ndarray, num_users: int) -> dict:
    """Mean L2 norm of user and item rows of E'."""
    norms = np.linalg.norm(final, axis=1)
    return {'user_norm_mean': calculate_mean(norms[:num_users]),
            'item_norm_mean': calculate_mean(norms[num_users:])}
