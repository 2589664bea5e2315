from typing import Dict, Type

from ..errors import ConfigError
from .base import ABORT, COMMIT, SINGLE_LEADER, SchedulerBase, SchedulerParams
from .stateful import MultiLeaderStateful, PrecommitBatch, SingleLeaderStateful
from .stateless import MultiLeaderStateless, SingleLeaderStateless

SCHEDULERS: Dict[str, Type[SchedulerBase]] = {
    'a1': SingleLeaderStateless,
    'a2': MultiLeaderStateless,
    'a3': SingleLeaderStateful,
    'a4': MultiLeaderStateful,
}


def scheduler_class(algorithm: str) -> Type[SchedulerBase]:
    try:
        return SCHEDULERS[algorithm]
    except KeyError:
        raise ConfigError(f'Unknown algorithm {algorithm!r}; choose one of {", ".join(SCHEDULERS)}')


__all__ = [
    'ABORT', 'COMMIT', 'SINGLE_LEADER', 'SCHEDULERS', 'SchedulerBase', 'SchedulerParams',
    'SingleLeaderStateless', 'MultiLeaderStateless', 'SingleLeaderStateful', 'MultiLeaderStateful',
    'PrecommitBatch', 'scheduler_class',
]
