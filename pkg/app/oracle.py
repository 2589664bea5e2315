"""Exact baselines: chromatic number, greedy replay and the certified makespan lower bound."""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx

from .config import oracle_budget
from .conflict import ConflictGraph, incremental_greedy
from .errors import InvariantViolation, OracleBudgetExceeded, UsageError
from .workload import ReductionInstance, reduction_instance  # noqa: F401  re-exported for oracle-compare

logger = logging.getLogger(__name__)

STATELESS = 'stateless'
STATEFUL = 'stateful'


def _as_networkx(g: Union[nx.Graph, ConflictGraph]) -> nx.Graph:
    return g.graph if isinstance(g, ConflictGraph) else g


def _check_budget(graph: nx.Graph, budget: Optional[int]) -> None:
    limit = oracle_budget() if budget is None else budget
    if graph.number_of_nodes() > limit:
        raise OracleBudgetExceeded(
            f'Exact search limited to {limit} vertices, got {graph.number_of_nodes()}')


def _dsatur_upper_bound(graph: nx.Graph) -> int:
    if graph.number_of_nodes() == 0:
        return 0
    coloring = nx.coloring.greedy_color(graph, strategy='saturation_largest_first')
    return max(coloring.values()) + 1


def chromatic_number(g: Union[nx.Graph, ConflictGraph], budget: Optional[int] = None) -> int:
    """Exact chromatic number by DSATUR-ordered backtracking.

    A DSATUR greedy coloring gives the initial upper bound; branches that
    would need as many colors as the best known coloring are cut.
    """
    graph = _as_networkx(g)
    _check_budget(graph, budget)
    nodes = sorted(graph.nodes, key=str)
    if not nodes:
        return 0

    index = {v: i for i, v in enumerate(nodes)}
    adj = [[index[u] for u in graph.neighbors(v)] for v in nodes]
    n = len(nodes)
    best = _dsatur_upper_bound(graph)
    colors = [-1] * n
    neighbor_colors: List[Dict[int, int]] = [{} for _ in range(n)]

    def choose_vertex() -> Optional[int]:
        uncolored = [i for i in range(n) if colors[i] == -1]
        if not uncolored:
            return None
        return max(uncolored, key=lambda v: (len(neighbor_colors[v]), len(adj[v]), -v))

    def backtrack(used: int) -> None:
        nonlocal best
        v = choose_vertex()
        if v is None:
            best = min(best, used)
            return
        for c in range(used + 1):
            if c in neighbor_colors[v]:
                continue
            new_used = max(used, c + 1)
            if new_used >= best:
                continue
            colors[v] = c
            for u in adj[v]:
                neighbor_colors[u][c] = neighbor_colors[u].get(c, 0) + 1
            backtrack(new_used)
            colors[v] = -1
            for u in adj[v]:
                neighbor_colors[u][c] -= 1
                if not neighbor_colors[u][c]:
                    del neighbor_colors[u][c]

    backtrack(0)
    return best


def greedy_count(g: Union[nx.Graph, ConflictGraph], order: Sequence[Hashable]) -> int:
    """Colors used by incremental greedy (floor 0) over the arrival order."""
    graph = _as_networkx(g)
    if sorted(order, key=str) != sorted(graph.nodes, key=str):
        raise UsageError('Arrival order must list every vertex exactly once')
    colors = incremental_greedy(graph, order)
    return max(colors.values()) + 1 if colors else 0


def max_degree(g: Union[nx.Graph, ConflictGraph]) -> int:
    graph = _as_networkx(g)
    return max((d for _, d in graph.degree), default=0)


def greedy_vs_optimal(g: Union[nx.Graph, ConflictGraph], order: Sequence[Hashable],
                      budget: Optional[int] = None) -> Tuple[int, int]:
    """(greedy colors, chromatic number); raises if chi <= greedy <= max degree + 1 fails."""
    graph = _as_networkx(g)
    greedy = greedy_count(graph, order)
    chi = chromatic_number(graph, budget)
    if not chi <= greedy <= max_degree(graph) + 1:
        raise InvariantViolation(
            f'Greedy used {greedy} colors, chromatic number {chi}, max degree {max_degree(graph)}')
    return greedy, chi


def find_greedy_gap(g: Union[nx.Graph, ConflictGraph], limit: Optional[int] = 100000,
                    budget: Optional[int] = None) -> Optional[List[Hashable]]:
    """First arrival order, in permutation order of the sorted vertices, where greedy uses more than chi colors."""
    graph = _as_networkx(g)
    chi = chromatic_number(graph, budget)
    nodes = sorted(graph.nodes, key=str)
    for tried, order in enumerate(itertools.permutations(nodes)):
        if limit is not None and tried >= limit:
            logger.info('No greedy gap within %d orders', limit)
            return None
        if greedy_count(graph, order) > chi:
            return list(order)
    return None


@dataclass
class PendingSnapshot:
    t: int
    txn_ids: List[int]
    loads: Dict[int, int] = field(default_factory=dict)
    d_hat: int = 0

    @property
    def max_load(self) -> int:
        return max(self.loads.values(), default=0)

    @property
    def empty(self) -> bool:
        return not self.txn_ids


def pending_at(rec, t: int) -> bool:
    return rec.generated <= t and (rec.finalized is None or rec.finalized > t)


def snapshot_at(trace, t: int) -> PendingSnapshot:
    """Transactions generated by t and not finalized by t, with their per-shard loads."""
    records = [rec for rec in trace.txns.values() if pending_at(rec, t)]
    loads: Dict[int, int] = {}
    for rec in records:
        for dest in rec.dests:
            loads[dest] = loads.get(dest, 0) + 1
    return PendingSnapshot(
        t=t,
        txn_ids=sorted(rec.txn_id for rec in records),
        loads=dict(sorted(loads.items())),
        d_hat=max((rec.max_dist for rec in records), default=0),
    )


def snapshot_of(txns: Iterable, graph, t: int = 0) -> PendingSnapshot:
    """Snapshot of an explicit transaction set, e.g. one injected batch."""
    txns = list(txns)
    loads: Dict[int, int] = {}
    for txn in txns:
        for dest in txn.dests:
            loads[dest] = loads.get(dest, 0) + 1
    return PendingSnapshot(
        t=t,
        txn_ids=sorted(txn.id for txn in txns),
        loads=dict(sorted(loads.items())),
        d_hat=max((graph.max_distance(txn.home, txn.dests) for txn in txns), default=0),
    )


def lower_bound_tau(snapshot: PendingSnapshot, mode: str = STATELESS) -> int:
    """Certified lower bound on the optimal finalization time of a snapshot: l, or max(l, d_hat) when stateful."""
    if snapshot.empty:
        raise UsageError(f'Snapshot at t={snapshot.t} is empty')
    if mode == STATELESS:
        return snapshot.max_load
    if mode == STATEFUL:
        return max(snapshot.max_load, snapshot.d_hat)
    raise UsageError(f'Unknown lower-bound mode {mode!r}')
