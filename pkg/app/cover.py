"""Layered sparse cover of the shard graph with designated cluster leaders."""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .errors import CoverInvariantError, UsageError
from .shard_graph import ShardGraph, layer_count, log_factor

logger = logging.getLogger(__name__)

Height = Tuple[int, int]


@dataclass(frozen=True)
class Cluster:
    id: int
    q: int
    r: int
    members: FrozenSet[int]
    leader: int
    strong_diameter: int

    @property
    def height(self) -> Height:
        return (self.q, self.r)

    @property
    def order_key(self) -> Tuple[int, int, int]:
        """Total order across clusters: height, then id."""
        return (self.q, self.r, self.id)

    def to_record(self) -> Dict[str, Any]:
        return {
            'id': self.id,
            'q': self.q,
            'r': self.r,
            'leader': self.leader,
            'members': sorted(self.members),
            'strong_diameter': self.strong_diameter,
        }


@dataclass
class CoverHierarchy:
    """layers[q][r] is the partition of all shards at height (q, r)."""

    s: int
    layers: List[List[List[Cluster]]]
    c_diam: int = 4
    c_sub: int = 4
    _index: Dict[Tuple[int, int, int], Cluster] = field(default_factory=dict, repr=False)
    _ordered: List[Cluster] = field(default_factory=list, repr=False)

    def __post_init__(self):
        flat = [c for sublayers in self.layers for clusters in sublayers for c in clusters]
        self._ordered = sorted(flat, key=lambda c: c.order_key)
        for sublayers in self.layers:
            for clusters in sublayers:
                for cluster in clusters:
                    for shard in cluster.members:
                        self._index.setdefault((cluster.q, cluster.r, shard), cluster)

    @property
    def h1(self) -> int:
        return len(self.layers)

    @property
    def h2(self) -> int:
        return max((len(sublayers) for sublayers in self.layers), default=0)

    @property
    def h2_cap(self) -> int:
        return self.c_sub * log_factor(self.s)

    @property
    def clusters(self) -> List[Cluster]:
        return list(self._ordered)

    def cluster(self, cluster_id: int) -> Cluster:
        for c in self._ordered:
            if c.id == cluster_id:
                return c
        raise UsageError(f'No cluster with id {cluster_id}')

    def cluster_of(self, q: int, r: int, shard: int) -> Optional[Cluster]:
        return self._index.get((q, r, shard))

    def base_cluster(self, shard: int) -> Cluster:
        """The height-(0, 0) cluster containing the shard."""
        cluster = self.cluster_of(0, 0, shard)
        if cluster is None:
            raise UsageError(f'Shard {shard} has no height-(0, 0) cluster')
        return cluster

    def overlapping(self, cluster: Cluster) -> Tuple[List[Cluster], List[Cluster]]:
        """Clusters sharing a shard with ``cluster``: (parents, children) by height."""
        parents, children = [], []
        for other in self._ordered:
            if other.id == cluster.id or not (other.members & cluster.members):
                continue
            if other.order_key > cluster.order_key:
                parents.append(other)
            else:
                children.append(other)
        return parents, children


def strong_diameter(graph: ShardGraph, members: Iterable[int]) -> int:
    """Max pairwise distance among members (the graph is complete, so paths stay inside)."""
    members = sorted(members)
    return max((graph.distance(u, v) for u in members for v in members), default=0)


def _carve(graph: ShardGraph, radius: int, reach: int, order: Sequence[int]) -> List[Tuple[int, set]]:
    """One sublayer of greedy ball carving.

    A shard becomes a center only while its ``reach``-neighborhood is still
    uncovered, so the center can lead its cluster. Shards skipped that way
    join the cluster of their nearest carved shard, which is within reach.
    """
    covered: Dict[int, int] = {}
    carved: List[Tuple[int, set]] = []
    for center in order:
        if center in covered:
            continue
        if any(j in covered for j in graph.z_neighborhood(center, reach)):
            continue
        members = {j for j in graph.z_neighborhood(center, radius) if j not in covered}
        for j in members:
            covered[j] = len(carved)
        carved.append((center, members))

    carved_shards = list(covered)
    for shard in order:
        if shard in covered:
            continue
        nearest = min(carved_shards, key=lambda j: (graph.distance(shard, j), j))
        carved[covered[nearest]][1].add(shard)
    return carved


def _uncontained(graph: ShardGraph, sublayers: List[List[Tuple[int, set]]], reach: int) -> List[int]:
    missing = []
    for shard in range(graph.s):
        ball = graph.z_neighborhood(shard, reach)
        if not any(ball <= members for carved in sublayers for _, members in carved):
            missing.append(shard)
    return missing


def build_hierarchy(graph: ShardGraph, c_diam: int = 4, c_sub: int = 4) -> CoverHierarchy:
    """Deterministic ball-carving cover, verified before it is returned."""
    s = graph.s
    factor = log_factor(s)
    cap = c_sub * factor
    layers: List[List[List[Cluster]]] = []
    next_id = 0

    for q in range(layer_count(graph.diameter)):
        radius = (2 ** q) * factor
        reach = 2 ** q - 1
        sublayers = []
        for r in range(min(factor, cap)):
            start = (r * s) // factor
            order = [(start + i) % s for i in range(s)]
            sublayers.append(_carve(graph, radius, reach, order))

        missing = _uncontained(graph, sublayers, reach)
        while missing and len(sublayers) < cap:
            rest = [j for j in range(s) if j not in missing]
            sublayers.append(_carve(graph, radius, reach, missing + rest))
            missing = _uncontained(graph, sublayers, reach)

        layer = []
        for r, carved in enumerate(sublayers):
            clusters = []
            for center, members in carved:
                clusters.append(Cluster(
                    id=next_id,
                    q=q,
                    r=r,
                    members=frozenset(members),
                    leader=center,
                    strong_diameter=strong_diameter(graph, members),
                ))
                next_id += 1
            layer.append(clusters)
        layers.append(layer)

    hierarchy = CoverHierarchy(s=s, layers=layers, c_diam=c_diam, c_sub=c_sub)
    report = verify_cover(hierarchy, graph)
    if not report.passed:
        raise CoverInvariantError(f'Cover construction failed: {report.summary()}', report)

    logger.info('Built cover: s=%d D=%d layers=%d max sublayers=%d clusters=%d',
                s, graph.diameter, hierarchy.h1, hierarchy.h2, len(hierarchy.clusters))
    return hierarchy


@dataclass
class PropertyResult:
    passed: bool = True
    counterexamples: List[str] = field(default_factory=list)

    def fail(self, message: str) -> None:
        self.passed = False
        self.counterexamples.append(message)


@dataclass
class CoverReport:
    properties: Dict[str, PropertyResult]

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.properties.values())

    def summary(self) -> str:
        failing = [name for name, p in self.properties.items() if not p.passed]
        if not failing:
            return 'all properties pass'
        return '; '.join(f'{name}: {self.properties[name].counterexamples[0]}' for name in failing)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'passed': self.passed,
            'properties': {
                name: {'passed': p.passed, 'counterexamples': p.counterexamples}
                for name, p in self.properties.items()
            },
        }


def verify_cover(hierarchy: CoverHierarchy, graph: ShardGraph) -> CoverReport:
    """Check partition, diameter, membership, containment and leader properties."""
    names = ('partition', 'strong_diameter', 'membership', 'containment', 'leader_rule')
    report = CoverReport(properties={name: PropertyResult() for name in names})
    shards = set(range(graph.s))
    factor = log_factor(graph.s)

    for q, sublayers in enumerate(hierarchy.layers):
        bound = hierarchy.c_diam * (2 ** q) * factor
        reach = 2 ** q - 1

        for r, clusters in enumerate(sublayers):
            seen: Dict[int, int] = {}
            for cluster in clusters:
                for shard in sorted(cluster.members):
                    if shard in seen:
                        report.properties['partition'].fail(
                            f'shard {shard} in clusters {seen[shard]} and {cluster.id} at height ({q}, {r})')
                    seen[shard] = cluster.id

                diameter = strong_diameter(graph, cluster.members)
                if diameter > bound:
                    report.properties['strong_diameter'].fail(
                        f'cluster {cluster.id} at layer {q} has diameter {diameter} > {bound}')

                ball = graph.z_neighborhood(cluster.leader, reach)
                if cluster.leader not in cluster.members or not ball <= cluster.members:
                    outside = sorted(ball - cluster.members)
                    report.properties['leader_rule'].fail(
                        f'cluster {cluster.id} leader {cluster.leader} has {reach}-neighbors {outside} outside')

            for shard in sorted(shards - set(seen)):
                report.properties['partition'].fail(f'shard {shard} missing from height ({q}, {r})')

        if len(sublayers) > hierarchy.h2_cap:
            report.properties['membership'].fail(
                f'layer {q} has {len(sublayers)} sublayers > {hierarchy.h2_cap}')
        for shard in sorted(shards):
            count = sum(1 for clusters in sublayers for c in clusters if shard in c.members)
            if count > hierarchy.h2_cap:
                report.properties['membership'].fail(
                    f'shard {shard} in {count} clusters at layer {q} > {hierarchy.h2_cap}')

            ball = graph.z_neighborhood(shard, reach)
            if not any(ball <= c.members for clusters in sublayers for c in clusters):
                report.properties['containment'].fail(
                    f'no layer-{q} cluster contains the {reach}-neighborhood of shard {shard}')

    return report


def home_cluster(hierarchy: CoverHierarchy, graph: ShardGraph, home: int, dests: Iterable[int]) -> Cluster:
    """Lowest-height cluster containing the z-neighborhood of home, z = max distance to a destination."""
    dests = list(dests)
    if not dests:
        raise UsageError('home_cluster needs at least one destination')
    z = graph.max_distance(home, dests)
    ball = graph.z_neighborhood(home, z)
    for cluster in hierarchy._ordered:
        if ball <= cluster.members:
            return cluster
    raise UsageError(f'No cluster contains the {z}-neighborhood of shard {home}')


def lambda_for(cluster: Cluster, stretch: float = 1) -> int:
    """Worst delay between two members: max(1, stretch * strong diameter)."""
    return max(1, int(stretch * cluster.strong_diameter))


def dump_hierarchy(hierarchy: CoverHierarchy) -> List[Dict[str, Any]]:
    return [c.to_record() for c in hierarchy.clusters]


def write_hierarchy(hierarchy: CoverHierarchy, path: Path) -> None:
    """Write one JSON record per cluster."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in dump_hierarchy(hierarchy):
            f.write(json.dumps(record, sort_keys=True) + '\n')


def hierarchy_from_records(s: int, records: List[Dict[str, Any]], c_diam: int = 4, c_sub: int = 4) -> CoverHierarchy:
    """Rebuild a hierarchy from cluster records (hand-built covers, dumps)."""
    depth = 1 + max((rec['q'] for rec in records), default=0)
    layers: List[List[List[Cluster]]] = [[] for _ in range(depth)]
    for rec in sorted(records, key=lambda rec: (rec['q'], rec['r'], rec['id'])):
        sublayers = layers[rec['q']]
        while len(sublayers) <= rec['r']:
            sublayers.append([])
        sublayers[rec['r']].append(Cluster(
            id=rec['id'],
            q=rec['q'],
            r=rec['r'],
            members=frozenset(rec['members']),
            leader=rec['leader'],
            strong_diameter=rec.get('strong_diameter', 0),
        ))
    return CoverHierarchy(s=s, layers=layers, c_diam=c_diam, c_sub=c_sub)
