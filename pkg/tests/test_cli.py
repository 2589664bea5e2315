import json

import pandas as pd
import pytest
from click.testing import CliRunner

from app.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, cli
from app.errors import WorkloadContractViolation

from .helpers import DATUM


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.delenv('SHARDSIM_SEED', raising=False)
    return CliRunner()


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / 'small.json'
    path.write_text(json.dumps({
        'topology': {'kind': 'line', 's': 4, 'w': 1},
        'workload': {'k_max': 2, 'txn_count': 15},
        'scheduler': {'algorithm': 'a3'},
        'output': {'prefix': 'small'},
    }))
    return path


def test_verify_cover(runner, tmp_path):
    dump = tmp_path / 'cover.jsonl'
    result = runner.invoke(cli, ['verify-cover', '--kind', 'clique', '--s', '4', '--dump', str(dump)])
    assert result.exit_code == EXIT_OK, result.output
    assert 's=4' in result.output
    assert dump.exists()


def test_verify_cover_from_config(runner):
    result = runner.invoke(cli, ['verify-cover', '--config', str(DATUM / 'configs' / 'a4_grid9.json')])
    assert result.exit_code == EXIT_OK, result.output
    assert 's=9' in result.output


def test_run_writes_summary(runner, small_config, tmp_path):
    out = tmp_path / 'out'
    result = runner.invoke(cli, ['run', '--config', str(small_config), '--out', str(out), '--seed', '3'])
    assert result.exit_code == EXIT_OK, result.output
    assert 'trace_hash' in result.output
    summary = json.loads((out / 'small_summary.json').read_text())
    assert summary['config']['seed'] == 3
    assert summary['passed'] is True


def test_run_with_trace(runner, small_config, tmp_path):
    result = runner.invoke(cli, ['run', '--config', str(small_config), '--out', str(tmp_path), '--trace'])
    assert result.exit_code == EXIT_OK, result.output
    assert (tmp_path / 'small_trace.jsonl').exists()


def test_run_rejects_bad_config(runner, tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps({'topology': {'kind': 'torus'}}))
    result = runner.invoke(cli, ['run', '--config', str(path)])
    assert result.exit_code == EXIT_CONFIG
    assert 'torus' in result.output


def test_run_missing_config(runner, tmp_path):
    result = runner.invoke(cli, ['run', '--config', str(tmp_path / 'absent.json')])
    assert result.exit_code == EXIT_CONFIG


def test_run_reports_a_broken_workload_contract(runner, small_config, monkeypatch):
    def two_live(config):
        raise WorkloadContractViolation('Home shard 1 already has live transaction 4')

    monkeypatch.setattr('app.cli.execute', two_live)
    result = runner.invoke(cli, ['run', '--config', str(small_config)])
    assert result.exit_code == EXIT_FAILED
    assert 'workload contract violated' in result.output


def test_oracle_compare_instance(runner, tmp_path):
    out = tmp_path / 'compare.csv'
    result = runner.invoke(cli, ['oracle-compare', '--instance', str(DATUM / 'instances' / 'triangle.txt'),
                                 '--out', str(out)])
    assert result.exit_code == EXIT_OK, result.output
    row = pd.read_csv(out).iloc[0]
    assert (row['name'], row['chi'], row['greedy']) == ('triangle', 3, 3)


def test_oracle_compare_random(runner, tmp_path):
    out = tmp_path / 'random.csv'
    result = runner.invoke(cli, ['oracle-compare', '--random', '3', '--vertices', '6', '--out', str(out)])
    assert result.exit_code == EXIT_OK, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 3
    assert (frame['chi'] <= frame['greedy']).all()
    assert (frame['greedy'] <= frame['max_degree'] + 1).all()


def test_oracle_compare_needs_input(runner):
    assert runner.invoke(cli, ['oracle-compare']).exit_code == EXIT_CONFIG


def test_sweep(runner, small_config, tmp_path):
    out = tmp_path / 'sweep.csv'
    result = runner.invoke(cli, ['sweep', '--config', str(small_config), '--algorithms', 'a1,a3',
                                 '--seeds', '1,2', '--out', str(out)])
    assert result.exit_code == EXIT_OK, result.output
    frame = pd.read_csv(out)
    assert len(frame) == 4
    assert sorted(set(frame['algorithm'])) == ['a1', 'a3']


def test_sweep_rejects_bad_list(runner, small_config):
    result = runner.invoke(cli, ['sweep', '--config', str(small_config), '--s', '4,x'])
    assert result.exit_code == EXIT_CONFIG
