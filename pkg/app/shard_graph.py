"""Weighted shard graph stored as its integer metric closure."""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional

import networkx as nx
import numpy as np

from .errors import ConfigError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ShardGraph:
    """Complete metric over shards 0..s-1; read-only after construction."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights.setflags(write=False)

    @property
    def s(self) -> int:
        return int(self.weights.shape[0])

    @property
    def diameter(self) -> int:
        return int(self.weights.max()) if self.s > 1 else 0

    def _check(self, i: int) -> int:
        if not isinstance(i, (int, np.integer)) or not 0 <= i < self.s:
            raise UsageError(f'Shard index {i!r} is outside [0, {self.s})')
        return int(i)

    def distance(self, i: int, j: int) -> int:
        return int(self.weights[self._check(i), self._check(j)])

    def z_neighborhood(self, i: int, z: int) -> FrozenSet[int]:
        """Shards within distance z of shard i (always contains i)."""
        if z < 0:
            raise UsageError(f'Neighborhood radius must be non-negative, got {z}')
        row = self.weights[self._check(i)]
        return frozenset(int(j) for j in np.flatnonzero(row <= z))

    def neighbors_sorted(self, i: int) -> List[int]:
        """All shards ordered by (distance from i, index)."""
        row = self.weights[self._check(i)]
        return sorted(range(self.s), key=lambda j: (int(row[j]), j))

    def max_distance(self, home: int, dests: Iterable[int]) -> int:
        return max((self.distance(home, d) for d in dests), default=0)

    def to_networkx(self) -> nx.Graph:
        graph = nx.complete_graph(self.s)
        for u, v in graph.edges:
            graph[u][v]['weight'] = int(self.weights[u, v])
        return graph

    def describe(self) -> Dict[str, Any]:
        return {'s': self.s, 'diameter': self.diameter}


def metric_closure(raw: nx.Graph, s: int) -> np.ndarray:
    """All-pairs shortest path distances of a weighted graph on nodes 0..s-1."""
    raw = raw.copy()
    raw.add_nodes_from(range(s))
    closure = nx.floyd_warshall_numpy(raw, nodelist=list(range(s)), weight='weight')
    if np.isinf(closure).any():
        raise ConfigError('Topology is disconnected; its metric closure is undefined')
    return np.rint(closure).astype(np.int64)


def _positive_weight(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value <= 0:
        raise ConfigError(f'Edge weights must be positive integers, got {value!r}')
    return int(value)


def _line(s: int, w: int) -> nx.Graph:
    graph = nx.path_graph(s)
    nx.set_edge_attributes(graph, w, 'weight')
    return graph


def _grid(rows: int, cols: int, w: int) -> nx.Graph:
    lattice = nx.grid_2d_graph(rows, cols)
    graph = nx.convert_node_labels_to_integers(lattice, ordering='sorted')
    nx.set_edge_attributes(graph, w, 'weight')
    return graph


def _random_points(s: int, span: int, seed: int) -> np.ndarray:
    """Distinct integer grid points, pairwise Manhattan distances."""
    if span * span < s:
        raise ConfigError(f'Random metric span {span} cannot hold {s} distinct points')
    rng = np.random.default_rng(seed)
    cells = rng.choice(span * span, size=s, replace=False)
    points = np.stack([cells // span, cells % span], axis=1)
    return np.abs(points[:, None, :] - points[None, :, :]).sum(axis=2).astype(np.int64)


def _edge_list(edges: List[Any], s: int) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(range(s))
    for edge in edges:
        u, v = int(edge[0]), int(edge[1])
        w = _positive_weight(edge[2]) if len(edge) > 2 else 1
        if u == v:
            raise ConfigError(f'Self loop on shard {u} in edge list')
        if graph.has_edge(u, v):
            w = min(w, graph[u][v]['weight'])
        graph.add_edge(u, v, weight=w)
    return graph


def build_graph(spec: Dict[str, Any], seed: Optional[int] = None) -> ShardGraph:
    """Build a ShardGraph from a topology descriptor.

    Keys: ``kind`` in clique | line | grid | random_metric | edges, ``s``,
    ``w``, ``rows``/``cols`` for grids, ``span`` for random metrics and
    ``edges`` (``[u, v, w]`` triples) for explicit edge lists.
    """
    kind = spec.get('kind', 'clique')
    w = _positive_weight(spec.get('w', 1))

    if kind == 'grid':
        rows, cols = int(spec.get('rows') or 0), int(spec.get('cols') or 0)
        if rows <= 0 or cols <= 0:
            raise ConfigError('Grid topology needs positive rows and cols')
        s = rows * cols
    elif kind == 'edges':
        edges = spec.get('edges') or []
        if not edges:
            raise ConfigError("Topology kind 'edges' needs a non-empty edge list")
        s = 1 + max(max(int(e[0]), int(e[1])) for e in edges)
    else:
        s = spec.get('s')
        if isinstance(s, bool) or not isinstance(s, (int, np.integer)) or s <= 0:
            raise ConfigError(f'Shard count s must be a positive integer, got {s!r}')
        s = int(s)

    if kind == 'clique':
        weights = np.full((s, s), w, dtype=np.int64)
        np.fill_diagonal(weights, 0)
    elif kind == 'line':
        weights = metric_closure(_line(s, w), s)
    elif kind == 'grid':
        weights = metric_closure(_grid(rows, cols, w), s)
    elif kind == 'random_metric':
        span = int(spec.get('span') or 4 * s)
        weights = _random_points(s, span, 0 if seed is None else seed) * w
    elif kind == 'edges':
        weights = metric_closure(_edge_list(spec['edges'], s), s)
    else:
        raise ConfigError(f"Unknown topology kind '{kind}'")

    graph = ShardGraph(weights=weights)
    logger.debug('Built %s topology with s=%d, D=%d', kind, graph.s, graph.diameter)
    return graph


def layer_count(diameter: int) -> int:
    """Number of cover layers: ceil(log2 D) + 1, and 1 when D is 0."""
    if diameter <= 0:
        return 1
    return math.ceil(math.log2(diameter)) + 1


def log_factor(s: int) -> int:
    """max(1, ceil(log2 s))."""
    return max(1, math.ceil(math.log2(s))) if s > 1 else 1
