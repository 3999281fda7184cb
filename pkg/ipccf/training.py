"""
Epoch loop, experiment snapshot logging and early stopping.
"""
import os
import json
import time
import logging
import numpy as np
import pandas as pd
from dataclasses import dataclass
from datetime import datetime
from typing import *

from .analysis import interaction_statistics
from .autodiff import Tape, backward
from .config import RunConfig
from .dataset import (BprSampler, InteractionDataset, active_subsample, load_interactions,
                      load_split_interactions, split_train_test, split_validation)
from .evaluation import full_rank_topk, ranking_metrics
from .graph import GraphOperators, build_graph_operators
from .metadata import ConfigMetaData
from .model import ModelParams, final_embeddings
from .objective import adam_step, batch_objective
from .utils import ConfigError, ceil_int_div, check_and_create_folder, get_system_info, progress


logger = logging.getLogger(__name__)

LOG_COLUMNS = ('epoch', 'loss', 'bpr', 'seq', 'prop', 'indep', 'seconds')
EARLY_STOP_K = 20


# ------------------- data preparation -------------------
def prepare_dataset(config: RunConfig) -> InteractionDataset:
    """Load, optionally subsample and split the configured data."""
    if not config.data:
        raise ConfigError("no interaction data configured (set 'data')")
    seeds = config.seeds()
    if config.test_data:
        dataset = load_split_interactions(config.data, config.test_data, config.data_format)
        if config.max_users:
            logger.warning("max_users is ignored for pre-split data")
    else:
        dataset = load_interactions(config.data, config.data_format)
        if config.max_users and config.max_users < dataset.num_users:
            dataset = active_subsample(dataset, config.max_users)
            logger.info(f"Kept the {dataset.num_users} most active users ({dataset.num_items} items)")
        dataset = split_train_test(dataset, config.split_ratio, seeds['split'])
    if config.eval_every and config.validation_ratio > 0:
        dataset = split_validation(dataset, config.validation_ratio, seeds['split'] + 1)
    return dataset


def prepare_operators(dataset: InteractionDataset, config: RunConfig) -> GraphOperators:
    return build_graph_operators(dataset, config.extraction(), high_order=config.ho, workers=config.workers)


# ------------------- experiment logs -------------------
class Logger:
    """
    Create folder and a log file in the specified directory, containing the experiment details (snapshot).
    After training, save the log content in the log file under the log directory.
    """
    def __init__(self, log_dir, config: RunConfig = None, dataset: InteractionDataset = None,
                 params: ModelParams = None, history: pd.DataFrame = None, info=''):
        self.config = config
        self.dataset = dataset
        self.params = params
        self.history = history
        self.log_dir = log_dir
        self.log_file = os.path.join(self.log_dir, 'log.json')
        self.log_content = {'info': info,
                            'experiment_date': datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
                            'config_info': None,
                            'dataset_info': None,
                            'model_info': None,
                            'training_info': None}
        self.update()

    def update(self):
        if self.config is not None:
            self.register_config()
        if self.dataset is not None:
            self.register_dataset()
        if self.params is not None:
            self.register_model()
        if self.history is not None:
            self.register_training()

    def register_extra(self, key, extra_info):
        self.log_content[key] = extra_info

    def register_config(self):
        meta = ConfigMetaData()
        meta.set_metadata({key: list(value) if isinstance(value, tuple) else value
                           for key, value in self.config.to_dict().items()})
        self.log_content['config_info'] = {'hash': meta.get_hash(), 'config': meta.to_dict()}

    def register_dataset(self):
        self.log_content['dataset_info'] = interaction_statistics(self.dataset)

    def register_model(self):
        self.log_content['model_info'] = {name: list(tensor.shape) for name, tensor in self.params.tensors().items()}
        self.log_content['model_info'].update({'dim': self.params.dim, 'intents': self.params.num_intents,
                                               'layers': self.config.layers if self.config else None})

    def register_training(self):
        self.log_content['training_info'] = {'os_info': get_system_info(),
                                             'epoch': len(self.history),
                                             'training_history': json.loads(self.history.to_json(orient='records'))}

    def save(self):
        check_and_create_folder(self.log_dir)
        with open(self.log_file, 'w', encoding='utf-8') as f:
            json.dump(self.log_content, f, indent=4, default=str)
        return self.log_file


# ------------------- training loop -------------------
@dataclass
class TrainResult:
    params: ModelParams
    history: pd.DataFrame
    best_epoch: Optional[int] = None
    best_recall: Optional[float] = None
    stopped_early: bool = False


def _snapshot(params: ModelParams) -> Dict[str, np.ndarray]:
    return {name: tensor.values.copy() for name, tensor in params.tensors().items()}


def _restore(params: ModelParams, snapshot: Dict[str, np.ndarray]) -> None:
    for name, tensor in params.tensors().items():
        tensor.values[...] = snapshot[name]


def train_epoch(params: ModelParams, operators: GraphOperators, sampler: BprSampler, config: RunConfig,
                state, rng: np.random.Generator, num_batches: int) -> Dict[str, float]:
    """
    `num_batches` Adam steps on freshly sampled BPR batches. Returns the batch-averaged
    loss terms.
    """
    weights, toggles = config.loss_weights(), config.toggles()
    tensors = list(params.tensors().values())
    sums: Dict[str, float] = {}
    for _ in range(num_batches):
        batch = sampler.sample(config.batch_size, rng)
        with Tape() as tape:
            terms = batch_objective(params, operators, batch, config.layers, weights, toggles)
        backward(tape, terms.total, leaves=tensors)
        adam_step(params, state)
        tape.clear()
        for key, value in terms.as_dict().items():
            sums[key] = sums.get(key, 0.0) + value
        logger.debug(f"batch loss {terms.total.item():.6f}")
    return {key: value / num_batches for key, value in sums.items()}


def validation_metrics(params: ModelParams, operators: GraphOperators, dataset: InteractionDataset,
                       config: RunConfig, k: int = EARLY_STOP_K) -> Tuple[float, float]:
    """Recall@k and NDCG@k on the validation interactions; the test split is never read."""
    final = final_embeddings(params, operators, config.layers, config.toggles())
    ranked = full_rank_topk(final, dataset, k, target='validation')
    _, recall, ndcg = ranking_metrics(ranked, dataset.validation_adjacency, k)
    return recall, ndcg


def train(config: RunConfig, dataset: InteractionDataset, operators: GraphOperators,
          out_dir: str = None, params: ModelParams = None) -> TrainResult:
    """
    Train from seeded initialization (or the given params) for `config.epochs` epochs.

    Each epoch appends 'epoch loss bpr seq prop indep seconds' to <out_dir>/train_log.tsv.
    With `eval_every` > 0, validation Recall@20 is measured every `eval_every` epochs; with `patience`
    > 0 training stops after that many evaluations without improvement and the best
    parameters are restored.
    """
    if config.eval_every and not dataset.num_validation:
        raise ConfigError("periodic evaluation needs validation interactions (set validation_ratio > 0)")
    seeds = config.seeds()
    if params is None:
        params = ModelParams.initialize(dataset.num_users, dataset.num_items, config.dim, config.intents,
                                        rng=np.random.default_rng(seeds['init']), dtype=config.numpy_dtype())
    state = config.optimizer()
    sampler = dataset.bpr_sampler
    rng = np.random.default_rng(seeds['sampling'])
    num_batches = config.batches_per_epoch or max(1, ceil_int_div(dataset.num_train, config.batch_size))
    log_path = None
    if out_dir:
        check_and_create_folder(out_dir)
        log_path = os.path.join(out_dir, 'train_log.tsv')
        open(log_path, 'w').close()

    records, best, best_snapshot, stale, stopped = [], None, None, 0, False
    for epoch in progress(range(1, config.epochs + 1), desc='epochs'):
        started = time.perf_counter()
        terms = train_epoch(params, operators, sampler, config, state, rng, num_batches)
        seconds = time.perf_counter() - started
        record = {'epoch': epoch, 'loss': terms['total'], 'bpr': terms['bpr'], 'seq': terms['seq'],
                  'prop': terms['prop'], 'indep': terms['indep'], 'seconds': seconds,
                  'recall': np.nan, 'ndcg': np.nan}
        if log_path:
            with open(log_path, 'a') as handle:
                handle.write('\t'.join([str(epoch)] + [f"{record[c]:.6f}" for c in LOG_COLUMNS[1:]]) + '\n')
        if config.eval_every and epoch % config.eval_every == 0:
            record['recall'], record['ndcg'] = validation_metrics(params, operators, dataset, config)
            if best is None or record['recall'] > best[1]:
                best, best_snapshot, stale = (epoch, record['recall']), _snapshot(params), 0
            else:
                stale += 1
        records.append(record)
        logger.info(f"epoch {epoch}: loss {record['loss']:.5f} bpr {record['bpr']:.5f} "
                    f"({seconds:.2f}s)" + (f" recall@{EARLY_STOP_K} {record['recall']:.4f}"
                                           if not np.isnan(record['recall']) else ''))
        if config.patience and stale >= config.patience:
            logger.info(f"No improvement in {stale} evaluations, stopping at epoch {epoch}")
            stopped = True
            break

    if stopped and best_snapshot is not None:
        _restore(params, best_snapshot)
        logger.info(f"Restored parameters of epoch {best[0]}")
    history = pd.DataFrame(records, columns=list(LOG_COLUMNS) + ['recall', 'ndcg'])
    return TrainResult(params=params, history=history, best_epoch=best[0] if best else None,
                       best_recall=best[1] if best else None, stopped_early=stopped)
