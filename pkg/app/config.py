import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from .errors import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ('topology', 'workload', 'scheduler', 'delay', 'output')
TOP_LEVEL_KEYS = ('horizon', 'seed')

TOPOLOGY_KINDS = ('clique', 'line', 'grid', 'random_metric', 'edges')
ALGORITHMS = ('a1', 'a2', 'a3', 'a4')
DELAY_MODES = ('synchronous', 'partial')
SKEWS = ('uniform', 'zipf')
ORDERS = ('literal', 'color_major')


def _get_default_config() -> Dict[str, Any]:
    """Get the default run configuration."""
    return {
        'topology': {
            'kind': 'clique',
            's': 8,
            'w': 1,
            'rows': None,
            'cols': None,
            'span': None,
            'edges': None,
        },
        'workload': {
            'k_max': 2,
            'd_max': None,
            'write_prob': 0.8,
            'skew': 'uniform',
            'zipf_alpha': 1.2,
            'txn_count': 200,
            'cutoff': None,
            'accounts_per_shard': 16,
            'initial_balance': 100,
            'amount_min': 1,
            'amount_max': 50,
            'condition_prob': 1.0,
            'retry_aborted': False,
            'instance': None,
        },
        'scheduler': {
            'algorithm': 'a1',
            'leader': 0,
            'lambda': None,
            'preempt': True,
            'order': 'literal',
            'account_conflicts': False,
            'c_diam': 4,
            'c_sub': 4,
        },
        'delay': {
            'mode': 'synchronous',
            'stretch': 1,
        },
        'output': {
            'dir': 'runs',
            'trace': False,
            'prefix': 'run',
        },
        'horizon': 100000,
        'seed': None,
    }


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _validate_topology(section: Dict[str, Any]) -> Tuple[bool, str]:
    kind = section['kind']
    if kind not in TOPOLOGY_KINDS:
        return False, f"Unknown topology kind '{kind}'"
    if kind == 'grid':
        for key in ('rows', 'cols'):
            if not _is_int(section[key]) or section[key] <= 0:
                return False, f"Grid topology needs a positive integer '{key}'"
    elif kind == 'edges':
        edges = section['edges']
        if not isinstance(edges, list) or not edges:
            return False, "Topology kind 'edges' needs a non-empty 'edges' list"
        for edge in edges:
            if not isinstance(edge, (list, tuple)) or len(edge) not in (2, 3):
                return False, f"Malformed edge {edge!r}: expected [u, v] or [u, v, w]"
    if kind != 'grid' and (not _is_int(section['s']) or section['s'] <= 0):
        return False, f"Shard count s must be a positive integer, got {section['s']!r}"
    if not _is_int(section['w']) or section['w'] <= 0:
        return False, f"Edge weight w must be a positive integer, got {section['w']!r}"
    if section['span'] is not None and (not _is_int(section['span']) or section['span'] <= 0):
        return False, "Random metric span must be a positive integer"
    return True, ''


def _validate_workload(section: Dict[str, Any]) -> Tuple[bool, str]:
    if not _is_int(section['k_max']) or section['k_max'] < 1:
        return False, 'k_max must be an integer >= 1'
    if section['d_max'] is not None and (not _is_int(section['d_max']) or section['d_max'] < 0):
        return False, 'd_max must be null or an integer >= 0'
    if not _is_number(section['write_prob']) or not 0.0 <= section['write_prob'] <= 1.0:
        return False, 'write_prob must lie in [0, 1]'
    if section['skew'] not in SKEWS:
        return False, f"Unknown skew '{section['skew']}'"
    if not _is_number(section['zipf_alpha']) or section['zipf_alpha'] <= 0:
        return False, 'zipf_alpha must be positive'
    for key in ('txn_count', 'cutoff'):
        if section[key] is not None and (not _is_int(section[key]) or section[key] < 0):
            return False, f'{key} must be null or a non-negative integer'
    if not _is_int(section['accounts_per_shard']) or section['accounts_per_shard'] < 2:
        return False, 'accounts_per_shard must be an integer >= 2'
    if not _is_int(section['initial_balance']) or section['initial_balance'] < 0:
        return False, 'initial_balance must be a non-negative integer'
    if not _is_int(section['amount_min']) or not _is_int(section['amount_max']):
        return False, 'amount_min and amount_max must be integers'
    if not 1 <= section['amount_min'] <= section['amount_max']:
        return False, 'Transfer amounts need 1 <= amount_min <= amount_max'
    if not _is_number(section['condition_prob']) or not 0.0 <= section['condition_prob'] <= 1.0:
        return False, 'condition_prob must lie in [0, 1]'
    if not isinstance(section['retry_aborted'], bool):
        return False, 'retry_aborted must be a boolean'
    if section['instance'] is not None and not isinstance(section['instance'], str):
        return False, 'instance must be null or a path to an edge-list file'
    return True, ''


def _validate_scheduler(section: Dict[str, Any]) -> Tuple[bool, str]:
    if section['algorithm'] not in ALGORITHMS:
        return False, f"Unknown scheduler '{section['algorithm']}'"
    if not _is_int(section['leader']) or section['leader'] < 0:
        return False, 'leader must be a shard index'
    if section['lambda'] is not None and (not _is_int(section['lambda']) or section['lambda'] < 1):
        return False, 'lambda must be null or an integer >= 1'
    if not isinstance(section['preempt'], bool):
        return False, 'preempt must be a boolean'
    if section['order'] not in ORDERS:
        return False, f"Unknown order '{section['order']}'"
    if not isinstance(section['account_conflicts'], bool):
        return False, 'account_conflicts must be a boolean'
    for key in ('c_diam', 'c_sub'):
        if not _is_int(section[key]) or section[key] < 1:
            return False, f'{key} must be an integer >= 1'
    return True, ''


def _validate_delay(section: Dict[str, Any]) -> Tuple[bool, str]:
    if section['mode'] not in DELAY_MODES:
        return False, f"Unknown delay mode '{section['mode']}'"
    if not _is_number(section['stretch']) or section['stretch'] < 1:
        return False, 'stretch must be a number >= 1'
    if section['mode'] == 'synchronous' and section['stretch'] != 1:
        return False, 'Synchronous delay mode requires stretch 1'
    return True, ''


def _validate_output(section: Dict[str, Any]) -> Tuple[bool, str]:
    if not isinstance(section['dir'], str) or not section['dir']:
        return False, 'output dir must be a non-empty string'
    if not isinstance(section['trace'], bool):
        return False, 'output trace must be a boolean'
    if not isinstance(section['prefix'], str) or not section['prefix']:
        return False, 'output prefix must be a non-empty string'
    return True, ''


_VALIDATORS = {
    'topology': _validate_topology,
    'workload': _validate_workload,
    'scheduler': _validate_scheduler,
    'delay': _validate_delay,
    'output': _validate_output,
}


def _process_config_update(data: Dict[str, Any]) -> Dict[str, Any]:
    """Merge a user configuration over the defaults, rejecting unknown names."""
    if not isinstance(data, dict):
        raise ConfigError('Configuration must be a JSON object')

    processed = _get_default_config()
    for name, value in data.items():
        if name in TOP_LEVEL_KEYS:
            processed[name] = value
            continue
        if name not in SECTIONS:
            raise ConfigError(f"Unknown configuration section '{name}'")
        if not isinstance(value, dict):
            raise ConfigError(f"Section '{name}' must be an object")
        for key, item in value.items():
            if key not in processed[name]:
                raise ConfigError(f"Unknown key '{key}' in section '{name}'")
            processed[name][key] = item
    return processed


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines one simulation run."""

    topology: Dict[str, Any]
    workload: Dict[str, Any]
    scheduler: Dict[str, Any]
    delay: Dict[str, Any]
    output: Dict[str, Any]
    horizon: int
    seed: int

    @property
    def algorithm(self) -> str:
        return self.scheduler['algorithm']

    def to_dict(self) -> Dict[str, Any]:
        return {
            'topology': copy.deepcopy(self.topology),
            'workload': copy.deepcopy(self.workload),
            'scheduler': copy.deepcopy(self.scheduler),
            'delay': copy.deepcopy(self.delay),
            'output': copy.deepcopy(self.output),
            'horizon': self.horizon,
            'seed': self.seed,
        }

    def digest(self) -> str:
        """Short SHA-256 digest of the canonical configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]

    def replace(self, **sections: Dict[str, Any]) -> 'RunConfig':
        """Return a copy with some section keys (or horizon/seed) overridden."""
        data = self.to_dict()
        for name, value in sections.items():
            if name in TOP_LEVEL_KEYS:
                data[name] = value
            else:
                data[name].update(value)
        return build_config(data)


def build_config(data: Dict[str, Any], seed: Optional[int] = None) -> RunConfig:
    """Merge, validate and freeze a configuration mapping.

    Seed precedence: explicit ``seed`` argument, then the ``seed`` key,
    then ``SHARDSIM_SEED``, then 0.
    """
    processed = _process_config_update(data)

    for name in SECTIONS:
        ok, message = _VALIDATORS[name](processed[name])
        if not ok:
            raise ConfigError(f'[{name}] {message}')

    horizon = processed['horizon']
    if not _is_int(horizon) or horizon < 0:
        raise ConfigError('horizon must be a non-negative integer')

    if seed is None:
        seed = processed['seed']
    if seed is None:
        seed = os.environ.get('SHARDSIM_SEED', 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f'Seed must be an integer, got {seed!r}')

    topology = processed['topology']
    if topology['kind'] == 'grid':
        topology['s'] = topology['rows'] * topology['cols']
    elif topology['kind'] == 'edges':
        topology['s'] = 1 + max(max(int(edge[0]), int(edge[1])) for edge in topology['edges'])
    if processed['scheduler']['leader'] >= topology['s']:
        raise ConfigError(
            f"[scheduler] leader {processed['scheduler']['leader']} is not a shard of a {topology['s']}-shard topology"
        )

    return RunConfig(
        topology=topology,
        workload=processed['workload'],
        scheduler=processed['scheduler'],
        delay=processed['delay'],
        output=processed['output'],
        horizon=horizon,
        seed=seed,
    )


def load_config(source: Union[str, Path, Dict[str, Any]], seed: Optional[int] = None) -> RunConfig:
    """Load a configuration from a JSON file path or an already parsed mapping."""
    if isinstance(source, dict):
        return build_config(source, seed=seed)

    path = Path(source)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f'Configuration file not found: {path}')
    except json.JSONDecodeError as e:
        raise ConfigError(f'Configuration file {path} is not valid JSON: {e}')

    config = build_config(data, seed=seed)
    logger.debug('Loaded configuration %s from %s', config.digest(), path)
    return config


def datum_dir() -> Path:
    """Directory holding bundled configurations and reduction instances."""
    default = Path(__file__).resolve().parent.parent / 'datum'
    return Path(os.environ.get('SHARDSIM_DATUM_DIR', default))


def oracle_budget() -> int:
    try:
        return int(os.environ.get('SHARDSIM_ORACLE_BUDGET', 20))
    except ValueError:
        raise ConfigError('SHARDSIM_ORACLE_BUDGET must be an integer')


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging once from SHARDSIM_LOG_LEVEL."""
    level_name = (level or os.environ.get('SHARDSIM_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
