"""
Command line entry points.

    ipccf train --config run.cfg --out runs/gowalla
    ipccf eval --config run.cfg --out runs/gowalla --k 20,40
    ipccf grad-check
    ipccf extract-graph --config run.cfg --out graphs/gowalla
    ipccf export-embeddings --config run.cfg --out runs/gowalla
"""
import os
import sys
import argparse
import logging
import numpy as np
import pandas as pd
from typing import *

from . import simulation
from .analysis import embedding_norms, statistics_table
from .autodiff import finite_diff_check
from .config import RunConfig, load_config, variant_help
from .dataset import BprSampler, InteractionDataset, split_train_test
from .evaluation import evaluate
from .model import PARAM_GROUPS, ModelParams, final_embeddings, load_checkpoint, save_checkpoint
from .objective import batch_objective
from .training import Logger, prepare_dataset, prepare_operators, train
from .utils import DirectoryLock, GradCheckSizeError, IpccfError, configure_logging, set_progress
from .visualization import plot_sparsity_groups, plot_training_history, visualPCA


logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'model.ipccf'
GRADCHECK_MAX_NODES = 50
GRADCHECK_TOL = 1e-4
GRADCHECK_EPS = 1e-4
# toy problem used by grad-check when no data is configured
GRADCHECK_DEFAULTS = ('dim=4', 'intents=2', 'layers=2', 'batch_size=16')


# ------------------- helpers -------------------
def _effective_config(args, extra_defaults: Sequence[str] = ()) -> RunConfig:
    overrides = list(extra_defaults) + list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.epochs is not None:
        overrides.append(f"epochs={args.epochs}")
    if args.k is not None:
        overrides.append(f"eval_ks={args.k}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    return load_config(args.config, overrides)


def _checkpoint_path(args, config: RunConfig) -> str:
    return args.checkpoint or os.path.join(config.out, CHECKPOINT_NAME)


def _load_matching_checkpoint(path: str, config: RunConfig, dataset: InteractionDataset):
    params, header = load_checkpoint(path, dtype=config.numpy_dtype())
    header.expect(num_users=dataset.num_users, num_items=dataset.num_items, dim=config.dim,
                  num_intents=config.intents, num_layers=config.layers)
    return params


# ------------------- subcommands -------------------
def run_extract_graph(config: RunConfig) -> int:
    """Build the graph operators and persist both relation edge lists with statistics."""
    with DirectoryLock(config.out):
        dataset = prepare_dataset(config)
        operators = prepare_operators(dataset, config)
        operators.adjacency.save_edge_list(os.path.join(config.out, 'direct_edges.txt'))
        operators.highorder.save_edge_list(os.path.join(config.out, 'highorder_edges.txt'))
        degrees = operators.highorder.row_degrees()
        summary = pd.DataFrame({'side': ['user', 'item'],
                                'nodes': [dataset.num_users, dataset.num_items],
                                'relations': [int(degrees[:dataset.num_users].sum()),
                                              int(degrees[dataset.num_users:].sum())]})
        summary.to_csv(os.path.join(config.out, 'highorder_summary.tsv'), sep='\t', index=False)
        statistics_table(dataset).to_csv(os.path.join(config.out, 'dataset_statistics.tsv'), sep='\t')
        config.save(os.path.join(config.out, 'effective.cfg'))
    print(summary.to_string(index=False))
    return 0


def run_train(config: RunConfig) -> int:
    """Train, write the checkpoint, training log, evaluation report and run snapshot."""
    with DirectoryLock(config.out):
        config.save(os.path.join(config.out, 'effective.cfg'))
        dataset = prepare_dataset(config)
        operators = prepare_operators(dataset, config)
        result = train(config, dataset, operators, out_dir=config.out)
        save_checkpoint(os.path.join(config.out, CHECKPOINT_NAME), result.params, config.layers)
        final = final_embeddings(result.params, operators, config.layers, config.toggles())
        report = evaluate(final, dataset, config.eval_ks, config.group_edges, config.mad_sample,
                          seed=config.seeds()['eval'])
        report.save(config.out)
        if len(result.history):
            plot_training_history(result.history, os.path.join(config.out, 'training_history.png'))
        log = Logger(config.out, config=config, dataset=dataset, params=result.params,
                     history=result.history, info=f"variant {config.variant}")
        log.register_extra('evaluation', {**report.headline(), 'MAD_users': report.mad_users,
                                          'MAD_items': report.mad_items})
        log.register_extra('embedding_norms', embedding_norms(final, dataset.num_users))
        log.register_extra('early_stopping', {'best_epoch': result.best_epoch, 'best_recall': result.best_recall,
                                              'stopped_early': result.stopped_early})
        log.save()
    print(report.to_tsv(), end='')
    return 0


def run_eval(config: RunConfig, checkpoint: str) -> int:
    """Evaluate a checkpoint against the configured split and print the report."""
    with DirectoryLock(config.out):
        dataset = prepare_dataset(config)
        params = _load_matching_checkpoint(checkpoint, config, dataset)
        operators = prepare_operators(dataset, config)
        final = final_embeddings(params, operators, config.layers, config.toggles())
        report = evaluate(final, dataset, config.eval_ks, config.group_edges, config.mad_sample,
                          seed=config.seeds()['eval'])
        report.save(config.out)
        if not report.groups.empty:
            plot_sparsity_groups(report.groups, os.path.join(config.out, 'sparsity_groups.png'))
    print(report.to_tsv(), end='')
    print(report.to_key_value(), end='')
    return 0


def gradcheck_dataset(config: RunConfig) -> InteractionDataset:
    if config.data:
        return prepare_dataset(config)
    toy = simulation.random_bipartite(10, 10, density=0.3, seed=config.seed, min_degree=2)
    return split_train_test(toy, config.split_ratio, config.seeds()['split'])


def run_gradcheck(config: RunConfig, eps: float = GRADCHECK_EPS, tol: float = GRADCHECK_TOL) -> Tuple[bool, dict]:
    """
    Finite-difference check of the full objective for every parameter group on one fixed
    batch. Returns (all passed, group -> GradCheckReport).
    """
    dataset = gradcheck_dataset(config)
    if dataset.num_nodes > GRADCHECK_MAX_NODES:
        raise GradCheckSizeError(f"gradient check is limited to {GRADCHECK_MAX_NODES} nodes, "
                                 f"dataset has {dataset.num_nodes}")
    seeds = config.seeds()
    operators = prepare_operators(dataset, config)
    params = ModelParams.initialize(dataset.num_users, dataset.num_items, config.dim, config.intents,
                                    rng=np.random.default_rng(seeds['init']))
    batch = BprSampler(dataset).sample(min(config.batch_size, dataset.num_train),
                                       np.random.default_rng(seeds['sampling']))
    weights, toggles = config.loss_weights(), config.toggles()

    def objective(_point):
        return batch_objective(params, operators, batch, config.layers, weights, toggles).total

    reports = {}
    for name in PARAM_GROUPS:
        reports[name] = finite_diff_check(objective, getattr(params, name), eps=eps, tol=tol)
        logger.info(f"{name}: {reports[name]}")
    return all(r.passed for r in reports.values()), reports


def run_export_embeddings(config: RunConfig, checkpoint: str, plot: bool = False) -> int:
    """Write E' rows as TSV, raw id first, one file per node kind."""
    with DirectoryLock(config.out):
        dataset = prepare_dataset(config)
        params = _load_matching_checkpoint(checkpoint, config, dataset)
        operators = prepare_operators(dataset, config)
        final = final_embeddings(params, operators, config.layers, config.toggles())
        columns = [f"d{j}" for j in range(final.shape[1])]
        nu = dataset.num_users
        for kind, ids, rows in (('user', dataset.user_ids, final[:nu]), ('item', dataset.item_ids, final[nu:])):
            frame = pd.DataFrame(rows, columns=columns)
            frame.insert(0, 'id', ids)
            path = os.path.join(config.out, f"{kind}_embeddings.tsv")
            frame.to_csv(path, sep='\t', index=False, float_format='%.8g')
            logger.info(f"Wrote {len(frame)} {kind} embeddings to {path}")
        if plot and final.shape[1] >= 2 and len(final) >= 2:
            visualPCA(n_components=2).fit(final).plot_2d(os.path.join(config.out, 'embeddings_pca.png'),
                                                         num_users=nu)
    return 0


# ------------------- argument parsing -------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', help='key=value configuration file')
    common.add_argument('--set', action='append', metavar='KEY=VALUE', help='override a configuration key')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--epochs', type=int, help='number of training epochs')
    common.add_argument('--k', help='comma separated K list for top-K metrics (default 20,40)')
    common.add_argument('--out', help='output directory')
    common.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    common.add_argument('--quiet', '-q', action='store_true', help='no progress bars')

    parser = argparse.ArgumentParser(
        prog='ipccf', formatter_class=argparse.RawDescriptionHelpFormatter,
        description='Disentangled graph collaborative filtering: training and evaluation.',
        epilog='ablation variants (set with --set variant=NAME):\n' + variant_help() +
               '\n\nexit codes: 0 ok, 2 config, 3 data, 4 numerical, 5 checkpoint mismatch, '
               '6 grad-check size, 1 grad-check failure')
    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('extract-graph', parents=[common], help='build and store the relation graphs')
    sub.add_parser('train', parents=[common], help='train a model and write a checkpoint')
    evaluate_parser = sub.add_parser('eval', parents=[common], help='evaluate a checkpoint')
    evaluate_parser.add_argument('--checkpoint', help=f"checkpoint file (default <out>/{CHECKPOINT_NAME})")
    sub.add_parser('grad-check', parents=[common], help='finite-difference gradient check on a toy problem')
    export_parser = sub.add_parser('export-embeddings', parents=[common], help="write final embeddings as TSV")
    export_parser.add_argument('--checkpoint', help=f"checkpoint file (default <out>/{CHECKPOINT_NAME})")
    export_parser.add_argument('--plot', action='store_true', help='also save a 2-D PCA scatter plot')
    return parser


def main(argv: Sequence[str] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    set_progress(not args.quiet)
    try:
        if args.command == 'grad-check':
            config = _effective_config(args, () if args.config else GRADCHECK_DEFAULTS)
            passed, reports = run_gradcheck(config)
            for name, report in reports.items():
                print(f"{name}\t{report}")
            print('PASS' if passed else 'FAIL')
            return 0 if passed else 1
        config = _effective_config(args)
        if args.command == 'extract-graph':
            return run_extract_graph(config)
        if args.command == 'train':
            return run_train(config)
        if args.command == 'eval':
            return run_eval(config, _checkpoint_path(args, config))
        if args.command == 'export-embeddings':
            return run_export_embeddings(config, _checkpoint_path(args, config), plot=args.plot)
    except IpccfError as e:
        logger.error(str(e))
        return e.exit_code
    return 2


if __name__ == '__main__':
    sys.exit(main())
