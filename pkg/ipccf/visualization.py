import logging
import numpy as np
import pandas as pd
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
from sklearn.decomposition import PCA
from typing import *


logger = logging.getLogger(__name__)


# ------------------- training curves -------------------
def plot_training_history(history: pd.DataFrame, save_path: str) -> str:
    """
    Loss terms per epoch (left) and, when periodic evaluation ran, Recall/NDCG@20 (right).
    """
    has_eval = 'recall' in history and history['recall'].notna().any()
    fig, axes = plt.subplots(1, 2 if has_eval else 1, figsize=(12 if has_eval else 6, 4), squeeze=False)
    ax = axes[0, 0]
    for column in ('loss', 'bpr', 'seq', 'prop'):
        if column in history:
            ax.plot(history['epoch'], history[column], label=column, lw=1.2)
    ax.set_xlabel('Epoch')
    ax.set_ylabel('Loss')
    ax.set_yscale('log')
    ax.legend()
    ax.grid(True)
    if has_eval:
        ax = axes[0, 1]
        evaluated = history.dropna(subset=['recall'])
        ax.plot(evaluated['epoch'], evaluated['recall'], 'o-', label='Recall@20', ms=3)
        ax.plot(evaluated['epoch'], evaluated['ndcg'], '^-', label='NDCG@20', ms=3)
        ax.set_xlabel('Epoch')
        ax.legend()
        ax.grid(True)
    plt.tight_layout()
    plt.savefig(save_path, dpi=150)
    plt.close(fig)  # Close the figure to free memory
    logger.debug(f"Training history plot saved to {save_path}")
    return save_path


def plot_sparsity_groups(groups: pd.DataFrame, save_path: str, metric: str = 'recall') -> str:
    """Bar chart of one metric per interaction-count bucket, one panel per side."""
    sides = list(dict.fromkeys(groups['side']))
    fig, axes = plt.subplots(1, len(sides), figsize=(6 * len(sides), 4), squeeze=False)
    for ax, side in zip(axes[0], sides):
        part = groups[groups['side'] == side]
        ax.bar(part['group'], part[metric], color='steelblue')
        for x, (value, users) in enumerate(zip(part[metric], part['users'])):
            ax.text(x, value, f"n={int(users)}", ha='center', va='bottom', fontsize=8)
        ax.set_title(f"{side} groups")
        ax.set_xlabel('Train interactions')
        ax.set_ylabel(f"{metric}@{int(part['k'].iloc[0])}")
        ax.grid(True, axis='y')
    plt.tight_layout()
    plt.savefig(save_path, dpi=150)
    plt.close(fig)
    return save_path


# ------------------- PCA -------------------
class visualPCA:

    def __init__(self, n_components=2):
        self.pca = PCA(n_components=n_components)
        self.pc = None

    def fit(self, data: np.array):  # rows are node embeddings
        self.pc = self.pca.fit_transform(data)
        return self

    def plot_2d(self, save_path: str, num_users: int = None):
        fig = plt.figure(figsize=(6, 6))
        if num_users is None:
            plt.scatter(self.pc[:, 0], self.pc[:, 1], s=2)
        else:
            plt.scatter(self.pc[:num_users, 0], self.pc[:num_users, 1], s=2, label='users')
            plt.scatter(self.pc[num_users:, 0], self.pc[num_users:, 1], s=2, label='items')
            plt.legend()
        plt.xlabel('PC 1')
        plt.ylabel('PC 2')
        plt.savefig(save_path, dpi=150)
        plt.close(fig)
        return save_path
