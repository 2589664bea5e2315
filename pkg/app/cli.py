"""Command line entry point: ``python -m app.cli <command>``.

Exit codes: 0 success, 1 a verdict or invariant failed, 2 bad configuration.
"""
import json
import logging
import sys
from functools import wraps
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import networkx as nx
import numpy as np
import pandas as pd
from dotenv import load_dotenv

from .config import configure_logging, load_config
from .conflict import conflict_graph_of
from .cover import build_hierarchy, verify_cover, write_hierarchy
from .errors import ConfigError, InvariantViolation, OracleBudgetExceeded, UsageError, WorkloadContractViolation
from .harness import execute, sweep, write_artifacts
from .metrics import write_sweep_csv
from .oracle import chromatic_number, greedy_vs_optimal, max_degree, reduction_instance
from .shard_graph import build_graph
from .workload import load_edge_list

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _exit_codes(f):
    """Translate library exceptions into the CLI exit codes."""
    @wraps(f)
    def wrapped(*args, **kwargs):
        try:
            code = f(*args, **kwargs)
        except (ConfigError, UsageError, OracleBudgetExceeded) as e:
            click.echo(f'error: {e}', err=True)
            sys.exit(EXIT_CONFIG)
        except InvariantViolation as e:
            click.echo(f'invariant violated: {e}', err=True)
            sys.exit(EXIT_FAILED)
        except WorkloadContractViolation as e:
            click.echo(f'workload contract violated: {e}', err=True)
            sys.exit(EXIT_FAILED)
        sys.exit(code or EXIT_OK)
    return wrapped


def _int_list(value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f'Expected a comma-separated list of integers, got {value!r}')


def _float_list(value: Optional[str]) -> Optional[List[float]]:
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f'Expected a comma-separated list of numbers, got {value!r}')


@click.group()
@click.option('--log-level', default=None, help='Overrides SHARDSIM_LOG_LEVEL.')
def cli(log_level: Optional[str]) -> None:
    """Shard transaction scheduling simulator."""
    load_dotenv('.environment')
    configure_logging(log_level)


@cli.command()
@click.option('--config', 'config_path', required=True, type=click.Path(), help='Run configuration (JSON).')
@click.option('--seed', type=int, default=None, help='Overrides the seed of the configuration.')
@click.option('--out', 'out_dir', type=click.Path(), default=None, help='Output directory.')
@click.option('--trace/--no-trace', default=None, help='Also write the full event trace.')
@_exit_codes
def run(config_path: str, seed: Optional[int], out_dir: Optional[str], trace: Optional[bool]) -> int:
    """Simulate one configuration and write metrics, summary and trace hash."""
    config = load_config(config_path, seed=seed)
    if trace is not None:
        config = config.replace(output={'trace': trace})
    result = execute(config)
    paths = write_artifacts(result, Path(out_dir) if out_dir else None)

    click.echo(f'trace_hash {result.trace_hash}')
    for name, verdict in result.verdicts.items():
        click.echo(f'{name:10s} {"pass" if verdict.passed else "FAIL"} {verdict.message}'.rstrip())
    click.echo(f'summary {paths["summary"]}')
    return EXIT_OK if result.passed else EXIT_FAILED


@cli.command('verify-cover')
@click.option('--config', 'config_path', type=click.Path(), default=None, help='Take topology and cover constants from a configuration.')
@click.option('--kind', default='clique', show_default=True)
@click.option('--s', 'shards', type=int, default=16, show_default=True)
@click.option('--rows', type=int, default=None)
@click.option('--cols', type=int, default=None)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--c-diam', type=int, default=4, show_default=True)
@click.option('--c-sub', type=int, default=4, show_default=True)
@click.option('--dump', type=click.Path(), default=None, help='Write the clusters as JSON lines.')
@_exit_codes
def verify_cover_command(config_path, kind, shards, rows, cols, seed, c_diam, c_sub, dump) -> int:
    """Build the cover hierarchy of a topology and check its properties."""
    if config_path:
        config = load_config(config_path)
        topology, seed = config.topology, config.seed
        c_diam, c_sub = config.scheduler['c_diam'], config.scheduler['c_sub']
    else:
        topology = {'kind': kind, 's': shards, 'w': 1, 'rows': rows, 'cols': cols}
    graph = build_graph(topology, seed=seed)
    hierarchy = build_hierarchy(graph, c_diam, c_sub)
    report = verify_cover(hierarchy, graph)

    click.echo(f's={graph.s} D={graph.diameter} layers={hierarchy.h1} sublayers={hierarchy.h2} '
               f'clusters={len(hierarchy.clusters)}')
    click.echo(report.summary())
    if dump:
        write_hierarchy(hierarchy, Path(dump))
    return EXIT_OK if report.passed else EXIT_FAILED


def _random_graph(vertices: int, density: float, rng: np.random.Generator) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(vertices))
    for u in range(vertices):
        for v in range(u + 1, vertices):
            if rng.random() < density:
                graph.add_edge(u, v)
    return graph


def _compare_row(name: str, graph: nx.Graph, order: List[Any], expected_chi: Optional[int] = None) -> Dict[str, Any]:
    greedy, chi = greedy_vs_optimal(graph, order)
    row = {
        'name': name,
        'vertices': graph.number_of_nodes(),
        'edges': graph.number_of_edges(),
        'greedy': greedy,
        'chi': chi,
        'max_degree': max_degree(graph),
        'chi_source': expected_chi,
    }
    if expected_chi is not None and expected_chi != chi:
        raise InvariantViolation(f'{name}: conflict graph has chi {chi}, source graph has {expected_chi}')
    return row


@cli.command('oracle-compare')
@click.option('--instance', 'instances', multiple=True, type=click.Path(), help='Edge-list reduction instance.')
@click.option('--random', 'n_random', type=int, default=0, help='Number of random conflict graphs.')
@click.option('--vertices', type=int, default=10, show_default=True)
@click.option('--density', type=float, default=0.4, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--out', 'out_path', type=click.Path(), default=None, help='CSV output path.')
@_exit_codes
def oracle_compare(instances, n_random, vertices, density, seed, out_path) -> int:
    """Greedy color count against the exact chromatic number."""
    rows = []
    for path in instances:
        source = load_edge_list(Path(path))
        instance = reduction_instance(source)
        conflict = conflict_graph_of(instance.txns)
        rows.append(_compare_row(Path(path).stem, conflict, [t.id for t in instance.txns],
                                 expected_chi=chromatic_number(source)))

    rng = np.random.default_rng(seed)
    for i in range(n_random):
        graph = _random_graph(vertices, density, rng)
        order = [int(v) for v in rng.permutation(vertices)]
        rows.append(_compare_row(f'random-{i}', graph, order))

    if not rows:
        raise ConfigError('Nothing to compare: give --instance or --random')
    frame = pd.DataFrame(rows)
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out_path, index=False)
    click.echo(frame.to_string(index=False))
    return EXIT_OK


@cli.command('sweep')
@click.option('--config', 'config_path', required=True, type=click.Path(), help='Base configuration.')
@click.option('--algorithms', default=None, help='Comma-separated, e.g. a1,a3.')
@click.option('--s', 'shards', default=None, help='Comma-separated shard counts.')
@click.option('--k', 'k_max', default=None, help='Comma-separated k_max values.')
@click.option('--stretch', default=None, help='Comma-separated delay stretch values.')
@click.option('--seeds', default=None, help='Comma-separated seeds.')
@click.option('--workers', type=int, default=1, show_default=True)
@click.option('--out', 'out_path', type=click.Path(), default='runs/sweep.csv', show_default=True)
@_exit_codes
def sweep_command(config_path, algorithms, shards, k_max, stretch, seeds, workers, out_path) -> int:
    """Grid over algorithm, s, k and stretch; one CSV row per cell."""
    base = load_config(config_path)
    grid: Dict[str, List[Any]] = {}
    if algorithms:
        grid['scheduler.algorithm'] = [a.strip() for a in algorithms.split(',') if a.strip()]
    if shards:
        grid['topology.s'] = _int_list(shards)
    if k_max:
        grid['workload.k_max'] = _int_list(k_max)
    if stretch:
        grid['delay.stretch'] = _float_list(stretch)
    if seeds:
        grid['seed'] = _int_list(seeds)

    rows = sweep(base, grid, workers=workers)
    write_sweep_csv(rows, Path(out_path))
    click.echo(json.dumps({'cells': len(rows), 'csv': out_path}))
    failed = [r for r in rows if not (r['safety'] and r['liveness'])]
    return EXIT_FAILED if failed else EXIT_OK


def main() -> None:
    cli()


if __name__ == '__main__':
    main()
