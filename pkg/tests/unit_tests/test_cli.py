import os
import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

import ipccf.autodiff as ad
from ipccf import simulation
from ipccf.cli import CHECKPOINT_NAME, build_parser, main
from ipccf.model import load_checkpoint


@pytest.fixture
def data_file(tmp_path):
    raw = simulation.random_bipartite(12, 12, density=0.3, seed=1, min_degree=2)
    path = str(tmp_path / 'interactions.txt')
    simulation.write_adjacency_list(raw, path)
    return path


def small_run(command, data_file, out, *extra):
    return [command, '--set', f'data={data_file}', '--set', 'dim=4', '--set', 'intents=2',
            '--set', 'batch_size=32', '--set', 'eta=0.5', '--out', str(out), '--k', '5,10', '-q', *extra]


@pytest.fixture
def trained_run(tmp_path, data_file):
    out = tmp_path / 'run'
    assert main(small_run('train', data_file, out, '--epochs', '5')) == 0
    return out


def test_train_writes_run_artifacts(trained_run):
    for name in (CHECKPOINT_NAME, 'train_log.tsv', 'effective.cfg', 'eval_report.tsv', 'eval_report.txt',
                 'log.json', 'training_history.png'):
        assert (trained_run / name).exists(), name
    lines = (trained_run / 'train_log.tsv').read_text().strip().splitlines()
    assert len(lines) == 5
    assert not (trained_run / '.ipccf.lock').exists()


def test_train_prints_metric_table(tmp_path, data_file, capsys):
    assert main(small_run('train', data_file, tmp_path / 'run', '--epochs', '1')) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].split('\t') == ['k', 'precision', 'recall', 'ndcg']


def test_eval_is_deterministic(trained_run, data_file, capsys):
    capsys.readouterr()
    assert main(small_run('eval', data_file, trained_run)) == 0
    first = capsys.readouterr().out
    assert main(small_run('eval', data_file, trained_run)) == 0
    assert capsys.readouterr().out == first
    assert 'R@5=' in first and 'MAD_items=' in first


def test_eval_rejects_mismatched_checkpoint(trained_run, data_file):
    assert main(small_run('eval', data_file, trained_run, '--set', 'dim=8')) == 5


def test_eval_with_missing_checkpoint_is_a_data_error(tmp_path, data_file):
    assert main(small_run('eval', data_file, tmp_path / 'empty')) == 3


def test_identical_runs_produce_identical_models(tmp_path, data_file):
    for name in ('a', 'b'):
        assert main(small_run('train', data_file, tmp_path / name, '--epochs', '3', '--seed', '4')) == 0
    first, _ = load_checkpoint(str(tmp_path / 'a' / CHECKPOINT_NAME))
    second, _ = load_checkpoint(str(tmp_path / 'b' / CHECKPOINT_NAME))
    for name, tensor in first.tensors().items():
        assert np.max(np.abs(tensor.values - second.tensors()[name].values)) < 1e-6
    assert (tmp_path / 'a' / 'eval_report.txt').read_text() == (tmp_path / 'b' / 'eval_report.txt').read_text()


def test_locked_output_directory_is_refused(tmp_path, data_file):
    out = tmp_path / 'run'
    out.mkdir()
    (out / '.ipccf.lock').write_text(str(os.getpid()))
    assert main(small_run('train', data_file, out, '--epochs', '1')) == 2


def test_stale_lock_of_a_finished_process_is_replaced(tmp_path, data_file):
    out = tmp_path / 'run'
    out.mkdir()
    (out / '.ipccf.lock').write_text(str(2**31 - 1))
    assert main(small_run('train', data_file, out, '--epochs', '1')) == 0
    assert not (out / '.ipccf.lock').exists()


def test_export_embeddings_respects_the_lock(trained_run, data_file):
    (trained_run / '.ipccf.lock').write_text(str(os.getpid()))
    assert main(small_run('export-embeddings', data_file, trained_run)) == 2
    assert not (trained_run / 'user_embeddings.tsv').exists()


def test_export_embeddings(trained_run, data_file):
    assert main(small_run('export-embeddings', data_file, trained_run, '--plot')) == 0
    users = pd.read_csv(trained_run / 'user_embeddings.tsv', sep='\t')
    items = pd.read_csv(trained_run / 'item_embeddings.tsv', sep='\t')
    assert list(users.columns) == ['id', 'd0', 'd1', 'd2', 'd3']
    assert users['id'].str.startswith('u').all()
    assert len(users) == 12
    assert len(items) == len({item for line in open(data_file) for item in line.split()[1:]})
    assert (trained_run / 'embeddings_pca.png').exists()


def test_extract_graph(tmp_path, data_file):
    out = tmp_path / 'graph'
    assert main(small_run('extract-graph', data_file, out)) == 0
    direct = (out / 'direct_edges.txt').read_text().strip().splitlines()
    assert direct and len(direct) % 2 == 0
    assert all(len(line.split(" ")) == 3 for line in direct)
    summary = pd.read_csv(out / 'highorder_summary.tsv', sep='\t')
    assert list(summary['side']) == ['user', 'item']
    assert (out / 'effective.cfg').exists()
    assert (out / 'dataset_statistics.tsv').exists()


def test_gradient_check_passes():
    assert main(['grad-check', '-q']) == 0


def test_gradient_check_single_intent():
    assert main(['grad-check', '-q', '--set', 'intents=1']) == 0


def test_gradient_check_catches_wrong_derivative(monkeypatch, capsys):
    def broken_log_sigmoid(x):
        return ad._emit('log_sigmoid', -np.logaddexp(0.0, -x.values), [x],
                        lambda g: [2.0 * g * expit(-x.values)])
    monkeypatch.setattr(ad, 'log_sigmoid', broken_log_sigmoid)
    assert main(['grad-check', '-q']) == 1
    assert capsys.readouterr().out.strip().endswith('FAIL')


def test_gradient_check_refuses_large_data(tmp_path):
    raw = simulation.random_bipartite(40, 40, density=0.3, seed=0)
    path = str(tmp_path / 'large.txt')
    simulation.write_adjacency_list(raw, path)
    assert main(['grad-check', '-q', '--set', f'data={path}']) == 6


def test_missing_data_is_a_config_error(tmp_path):
    assert main(['train', '-q', '--out', str(tmp_path / 'run')]) == 2


def test_empty_data_is_a_data_error(tmp_path):
    path = tmp_path / 'empty.txt'
    path.write_text('# nothing here\n')
    assert main(['train', '-q', '--set', f'data={path}', '--out', str(tmp_path / 'run')]) == 3


def test_parser_lists_variants_and_requires_command():
    parser = build_parser()
    assert 'w/o ip' in parser.format_help()
    with pytest.raises(SystemExit):
        parser.parse_args([])
