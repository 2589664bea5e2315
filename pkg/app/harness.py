"""Wire a RunConfig into graph, cover, workload, engine and scheduler; run, verify and report."""
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig, build_config, datum_dir
from .conflict import Transaction
from .cover import CoverHierarchy, build_hierarchy, write_hierarchy
from .metrics import (
    LB_NOTE, SnapshotRecord, Verdict, lb_violations, snapshot_records, summarize, verify_cadence,
    verify_control, verify_liveness, verify_one_live, verify_ordering, verify_safety,
    write_snapshot_csv, write_txn_csv,
)
from .schedulers import SchedulerBase, SchedulerParams, scheduler_class
from .shard_graph import ShardGraph, build_graph
from .simcore import DelayModel, Engine, RunTrace, write_trace
from .workload import AccountUniverse, WorkloadGenerator, WorkloadSpec, instance_transactions

logger = logging.getLogger(__name__)


@dataclass
class RunSetup:
    config: RunConfig
    graph: ShardGraph
    universe: AccountUniverse
    hierarchy: Optional[CoverHierarchy] = None
    generator: Optional[WorkloadGenerator] = None
    injected: List[Transaction] = field(default_factory=list)
    instance: Optional[Dict[str, Any]] = None
    delay_seed: Any = None


@dataclass
class RunResult:
    config: RunConfig
    trace: RunTrace
    graph: ShardGraph
    hierarchy: Optional[CoverHierarchy]
    scheduler: SchedulerBase
    snapshots: List[SnapshotRecord]
    verdicts: Dict[str, Verdict]
    summary: Dict[str, Any]
    instance: Optional[Dict[str, Any]] = None

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts.values())

    @property
    def trace_hash(self) -> str:
        return self.trace.hash()

    def to_summary(self) -> Dict[str, Any]:
        ratios = [r.ratio for r in self.snapshots]
        return {
            'config': self.config.to_dict(),
            'config_digest': self.config.digest(),
            'algorithm': self.config.algorithm,
            'trace_hash': self.trace_hash,
            'passed': self.passed,
            'verdicts': {name: v.to_dict() for name, v in self.verdicts.items()},
            'aggregates': self.summary,
            'snapshots': len(self.snapshots),
            'max_ratio': max(ratios) if ratios else None,
            'mean_ratio': float(np.mean(ratios)) if ratios else None,
            'lb_violations': lb_violations(self.snapshots),
            'ratio_note': LB_NOTE,
            'instance': self.instance,
            'quiescent': self.trace.quiescent,
        }


def _instance_path(name: str) -> Path:
    path = Path(name)
    if path.exists() or path.is_absolute():
        return path
    return datum_dir() / 'instances' / name


def prepare(config: RunConfig) -> RunSetup:
    """Build the graph, cover, account universe and transaction source of a run."""
    workload_seed, delay_seed = np.random.SeedSequence(config.seed).spawn(2)
    workload = config.workload
    algorithm = scheduler_class(config.algorithm)

    if workload['instance']:
        graph, injected, meta = instance_transactions(_instance_path(workload['instance']))
        generator = None
    else:
        graph = build_graph(config.topology, seed=config.seed)
        injected, meta = [], None
        generator = WorkloadGenerator(WorkloadSpec.from_section(workload), graph, workload_seed, config.horizon)

    hierarchy = None
    if algorithm.multi_leader:
        hierarchy = build_hierarchy(graph, config.scheduler['c_diam'], config.scheduler['c_sub'])

    universe = AccountUniverse(graph.s, workload['accounts_per_shard'], workload['initial_balance'])
    return RunSetup(config=config, graph=graph, universe=universe, hierarchy=hierarchy, generator=generator,
                    injected=injected, instance=meta, delay_seed=delay_seed)


def verdicts_for(trace: RunTrace, scheduler: SchedulerBase,
                 hierarchy: Optional[CoverHierarchy]) -> Dict[str, Verdict]:
    verdicts = {
        'safety': verify_safety(trace),
        'liveness': verify_liveness(trace),
        'one_live': verify_one_live(trace),
        'ordering': verify_ordering(trace, scheduler.params.preempt),
    }
    if scheduler.stateful and not scheduler.multi_leader:
        verdicts['cadence'] = verify_cadence(trace)
    if scheduler.stateful and scheduler.multi_leader:
        verdicts['control'] = verify_control(trace, hierarchy)
    return verdicts


def execute(config: RunConfig, fault: Optional[Callable[[Engine], None]] = None) -> RunResult:
    """Run one configuration to quiescence (or the horizon) and analyse the trace."""
    setup = prepare(config)
    meta = {'algorithm': config.algorithm, 'config_digest': config.digest(), 'seed': config.seed}
    delay = DelayModel(config.delay['mode'], config.delay['stretch'], setup.delay_seed)
    engine = Engine(setup.graph, delay, config.horizon, RunTrace(meta))
    scheduler = scheduler_class(config.algorithm)(
        engine, setup.graph, setup.universe, SchedulerParams.from_config(config),
        generator=setup.generator, hierarchy=setup.hierarchy,
    )
    if fault is not None:
        fault(engine)

    logger.info('Run %s: %s on %s s=%d seed=%d', config.digest(), config.algorithm,
                config.topology['kind'], setup.graph.s, config.seed)
    scheduler.start(setup.injected)
    trace = engine.run()

    verdicts = verdicts_for(trace, scheduler, setup.hierarchy)
    snapshots = snapshot_records(trace, scheduler.stateful)
    summary = summarize(trace)
    result = RunResult(config=config, trace=trace, graph=setup.graph, hierarchy=setup.hierarchy,
                       scheduler=scheduler, snapshots=snapshots, verdicts=verdicts, summary=summary,
                       instance=setup.instance)

    failed = [name for name, v in verdicts.items() if not v.passed]
    if not trace.quiescent:
        logger.warning('Run %s did not reach quiescence', config.digest())
    logger.info('Run %s finished at t=%d: %d txns, %d committed, trace %s, %s',
                config.digest(), trace.end_time, summary['txns'], summary['committed'],
                result.trace_hash[:16], 'failed ' + ','.join(failed) if failed else 'all verdicts pass')
    return result


def write_artifacts(result: RunResult, out_dir: Optional[Path] = None) -> Dict[str, str]:
    """Per-txn and per-snapshot CSVs, the JSON summary and optionally the trace and cover dump."""
    output = result.config.output
    out_dir = Path(out_dir or output['dir'])
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = output['prefix']

    paths = {
        'txns': write_txn_csv(result.trace, out_dir / f'{prefix}_txns.csv'),
        'snapshots': write_snapshot_csv(result.snapshots, out_dir / f'{prefix}_snapshots.csv'),
    }
    if output['trace']:
        paths['trace'] = out_dir / f'{prefix}_trace.jsonl'
        write_trace(result.trace, paths['trace'])
    if result.hierarchy is not None:
        paths['hierarchy'] = out_dir / f'{prefix}_hierarchy.jsonl'
        write_hierarchy(result.hierarchy, paths['hierarchy'])

    paths['summary'] = out_dir / f'{prefix}_summary.json'
    with open(paths['summary'], 'w', encoding='utf-8') as f:
        json.dump(result.to_summary(), f, indent=2, sort_keys=True, default=str)
    return {name: str(path) for name, path in paths.items()}


def sweep_row(result: RunResult) -> Dict[str, Any]:
    config, summary = result.config, result.summary
    ratios = [r.ratio for r in result.snapshots]
    return {
        'algorithm': config.algorithm,
        'topology': config.topology['kind'],
        's': result.graph.s,
        'k_max': config.workload['k_max'],
        'stretch': config.delay['stretch'],
        'seed': config.seed,
        'txns': summary['txns'],
        'committed': summary['committed'],
        'aborted': summary['aborted'],
        'mean_latency': summary['mean_latency'],
        'p99_latency': summary['p99_latency'],
        'makespan': summary['makespan'],
        'max_ratio': max(ratios) if ratios else None,
        'mean_ratio': float(np.mean(ratios)) if ratios else None,
        'safety': result.verdicts['safety'].passed,
        'liveness': result.verdicts['liveness'].passed,
    }


def _run_cell(data: Dict[str, Any]) -> Dict[str, Any]:
    return sweep_row(execute(build_config(data)))


def sweep_cells(base: RunConfig, grid: Dict[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    """Cartesian product of ``section.key`` (or ``seed``) value lists applied over ``base``."""
    names = sorted(grid)
    cells = []
    for values in itertools.product(*(grid[name] for name in names)):
        data = base.to_dict()
        for name, value in zip(names, values):
            if '.' in name:
                section, key = name.split('.', 1)
                data[section][key] = value
            else:
                data[name] = value
        if data['delay']['stretch'] > 1:
            data['delay']['mode'] = 'partial'
        cells.append(data)
    return cells


def sweep(base: RunConfig, grid: Dict[str, Sequence[Any]], workers: int = 1) -> List[Dict[str, Any]]:
    """One row per grid cell; cells are independent runs and may execute in a process pool."""
    cells = sweep_cells(base, grid)
    logger.info('Sweep over %d cells with %d worker(s)', len(cells), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = []
        for index, cell in enumerate(cells, start=1):
            rows.append(_run_cell(cell))
            logger.info('Sweep cell %d/%d done', index, len(cells))
    return rows
