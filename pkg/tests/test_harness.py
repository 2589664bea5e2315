import json
import math
import os

import pandas as pd
import pytest

from app.config import load_config
from app.harness import execute, sweep, sweep_cells, write_artifacts
from app.metrics import SWEEP_COLUMNS, makespan_bound_violations
from app.simcore import MessageKind

from .helpers import DATUM, ROOT

CONFIGS = DATUM / 'configs'
GOLDEN = ROOT / 'tests' / 'golden' / 'trace_hashes.json'
CANONICAL = ['a1_clique8', 'a2_line8', 'a3_clique8', 'a4_grid9']
SYNCHRONOUS = {'mode': 'synchronous', 'stretch': 1}
PARTIAL = {'mode': 'partial', 'stretch': 3}


@pytest.fixture(autouse=True)
def _no_seed_override(monkeypatch):
    monkeypatch.delenv('SHARDSIM_SEED', raising=False)


def _bundled(name, txn_count=40):
    return load_config(CONFIGS / f'{name}.json').replace(workload={'txn_count': txn_count})


@pytest.mark.parametrize('name', CANONICAL)
def test_bundled_configs_pass_every_verdict(name):
    result = execute(_bundled(name))
    failed = {k: v.message for k, v in result.verdicts.items() if not v.passed}
    assert not failed
    assert result.trace.quiescent
    assert result.summary['txns'] == 40
    assert result.summary['unfinalized'] == 0


def test_verdicts_depend_on_the_algorithm():
    assert 'cadence' in execute(_bundled('a3_clique8', 10)).verdicts
    a4 = execute(_bundled('a4_grid9', 10))
    assert 'control' in a4.verdicts and 'cadence' not in a4.verdicts
    assert set(execute(_bundled('a1_clique8', 10)).verdicts) == {'safety', 'liveness', 'one_live', 'ordering'}


@pytest.mark.parametrize('name', ['a1_clique8', 'a4_grid9'])
def test_runs_are_deterministic(name):
    config = _bundled(name, 30)
    assert execute(config).trace_hash == execute(config).trace_hash


def test_seed_changes_the_trace(run_config):
    assert execute(run_config(seed=1)).trace_hash != execute(run_config(seed=2)).trace_hash


def test_triangle_instance_run():
    result = execute(load_config(CONFIGS / 'triangle_instance.json'))
    assert result.instance['edges'] == 3
    assert result.summary['committed'] == 3
    assert sorted(rec.color for rec in result.trace.txns.values()) == [0, 1, 2]
    assert result.passed


def test_dropped_confirms_break_liveness_only():
    config = load_config(CONFIGS / 'triangle_instance.json')
    result = execute(config, fault=lambda engine: engine.fault_drop(MessageKind.CONFIRM))
    assert not result.verdicts['liveness'].passed
    assert result.verdicts['safety'].passed
    assert any(r['kind'] == 'dropped' for r in result.trace.records)


def test_write_artifacts(tmp_path):
    result = execute(_bundled('a2_line8', 20).replace(output={'trace': True, 'prefix': 'demo'}))
    paths = write_artifacts(result, tmp_path)

    assert set(paths) == {'txns', 'snapshots', 'trace', 'hierarchy', 'summary'}
    for path in paths.values():
        assert os.path.exists(path)
    assert len(pd.read_csv(paths['txns'])) == 20

    with open(paths['summary'], encoding='utf-8') as f:
        summary = json.load(f)
    assert summary['trace_hash'] == result.trace_hash
    assert summary['algorithm'] == 'a2'
    assert summary['passed'] is True
    with open(paths['trace'], encoding='utf-8') as f:
        assert len(f.readlines()) == len(result.trace.records)


def test_write_artifacts_skips_trace_by_default(tmp_path):
    paths = write_artifacts(execute(_bundled('a1_clique8', 10)), tmp_path)
    assert 'trace' not in paths and 'hierarchy' not in paths


def test_sweep_cells_cover_the_grid(run_config):
    cells = sweep_cells(run_config(), {'scheduler.algorithm': ['a1', 'a3'], 'delay.stretch': [1, 2], 'seed': [4]})
    assert len(cells) == 4
    assert {(c['scheduler']['algorithm'], c['delay']['stretch']) for c in cells} == {
        ('a1', 1), ('a1', 2), ('a3', 1), ('a3', 2)}
    assert all(c['seed'] == 4 for c in cells)
    assert all(c['delay']['mode'] == 'partial' for c in cells if c['delay']['stretch'] > 1)


def test_sweep_rows(run_config):
    rows = sweep(run_config(workload={'txn_count': 10}), {'scheduler.algorithm': ['a1', 'a2', 'a3', 'a4']})
    assert [r['algorithm'] for r in rows] == ['a1', 'a2', 'a3', 'a4']
    assert all(set(r) == set(SWEEP_COLUMNS) for r in rows)
    assert all(r['safety'] and r['liveness'] for r in rows)


def test_golden_trace_hashes():
    with open(GOLDEN, encoding='utf-8') as f:
        golden = json.load(f)
    update = os.environ.get('SHARDSIM_UPDATE_GOLDEN') == '1'

    for name in CANONICAL:
        digest = execute(load_config(CONFIGS / f'{name}.json')).trace_hash
        if update:
            golden[name] = digest
        elif golden.get(name) is not None:
            assert digest == golden[name], name

    if update:
        with open(GOLDEN, 'w', encoding='utf-8') as f:
            json.dump(golden, f, indent=2, sort_keys=True)
            f.write('\n')


def _failed(result):
    return {k: v.message for k, v in result.verdicts.items() if not v.passed}


@pytest.mark.parametrize('seed', range(4))
def test_multi_leader_control_under_partial_synchrony(run_config, seed):
    config = run_config(seed=seed, topology={'kind': 'line', 's': 8, 'w': 1}, delay=PARTIAL,
                        scheduler={'algorithm': 'a4'}, workload={'txn_count': 80, 'k_max': 3})
    result = execute(config)
    assert not _failed(result)
    assert result.summary['unfinalized'] == 0


@pytest.mark.slow
@pytest.mark.parametrize('algorithm', ['a1', 'a2', 'a3', 'a4'])
@pytest.mark.parametrize('kind', ['clique', 'line'])
@pytest.mark.parametrize('k_max', [2, 3])
@pytest.mark.parametrize('delay', [SYNCHRONOUS, PARTIAL], ids=['sync', 'stretch3'])
def test_safety_grid(run_config, algorithm, kind, k_max, delay):
    failures = {}
    for seed in range(100):
        config = run_config(seed=seed, topology={'kind': kind, 's': 8, 'w': 1}, delay=delay,
                            scheduler={'algorithm': algorithm}, workload={'txn_count': 200, 'k_max': k_max})
        failed = _failed(execute(config))
        if failed:
            failures[seed] = failed
    assert not failures


@pytest.mark.slow
@pytest.mark.parametrize('k_max', [2, 3])
@pytest.mark.parametrize('seed', range(10))
def test_single_leader_stays_within_the_makespan_bound(run_config, k_max, seed):
    config = run_config(seed=seed, topology={'kind': 'clique', 's': 8, 'w': 1}, delay=SYNCHRONOUS,
                        scheduler={'algorithm': 'a1'}, workload={'txn_count': 200, 'k_max': k_max})
    result = execute(config)
    assert not _failed(result)
    assert result.snapshots
    late = makespan_bound_violations(result.snapshots, k=k_max, d=1)
    assert not late, late[0]


@pytest.mark.slow
@pytest.mark.parametrize('algorithm, factor', [('a1', 6), ('a3', 8)])
@pytest.mark.parametrize('k_max', [2, 3, 4])
@pytest.mark.parametrize('seed', range(5))
def test_ratio_envelope_on_clique16(run_config, algorithm, factor, k_max, seed):
    config = run_config(seed=seed, topology={'kind': 'clique', 's': 16, 'w': 1}, delay=SYNCHRONOUS,
                        scheduler={'algorithm': algorithm}, workload={'txn_count': 200, 'k_max': k_max})
    result = execute(config)
    assert not _failed(result)
    envelope = factor * min(k_max, math.ceil(math.sqrt(16)))
    over = [r for r in result.snapshots if r.ratio > envelope]
    assert not over, over[0]
