from typing import Any, Dict

import pytest

from app.config import build_config
from app.cover import CoverHierarchy, hierarchy_from_records
from app.shard_graph import ShardGraph, build_graph

from .helpers import HEAVY_LINE_EDGES, heavy_line_records


@pytest.fixture
def clique3() -> ShardGraph:
    return build_graph({'kind': 'clique', 's': 3, 'w': 1})


@pytest.fixture
def clique4() -> ShardGraph:
    return build_graph({'kind': 'clique', 's': 4, 'w': 1})


@pytest.fixture
def line8() -> ShardGraph:
    return build_graph({'kind': 'line', 's': 8, 'w': 1})


@pytest.fixture
def heavy_line_graph() -> ShardGraph:
    return build_graph({'kind': 'edges', 'edges': HEAVY_LINE_EDGES})


@pytest.fixture
def heavy_line_hierarchy() -> CoverHierarchy:
    return hierarchy_from_records(8, heavy_line_records())


@pytest.fixture
def run_config(monkeypatch):
    """Factory: small validated RunConfig with section overrides."""
    monkeypatch.delenv('SHARDSIM_SEED', raising=False)

    def make(seed: int = 1, **sections: Any):
        data: Dict[str, Any] = {
            'topology': {'kind': 'clique', 's': 4, 'w': 1},
            'workload': {'k_max': 2, 'txn_count': 30},
            'horizon': 20000,
        }
        for name, value in sections.items():
            if isinstance(value, dict):
                data.setdefault(name, {}).update(value)
            else:
                data[name] = value
        return build_config(data, seed=seed)
    return make
