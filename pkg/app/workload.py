"""Online transaction generation, the account universe and reduction instances."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import networkx as nx
import numpy as np

from .conflict import Access, Transaction, Write
from .errors import ConfigError, UsageError
from .shard_graph import ShardGraph, build_graph

logger = logging.getLogger(__name__)


def account_name(shard: int, index: int) -> str:
    return f'{shard}.{index}'


def account_owner(account: str) -> int:
    try:
        return int(account.split('.', 1)[0])
    except ValueError:
        raise UsageError(f'Malformed account name {account!r}')


@dataclass(frozen=True)
class AccountUniverse:
    """Disjoint per-shard account sets with their initial balances."""

    s: int
    accounts_per_shard: int
    initial_balance: int

    def accounts(self, shard: int) -> List[str]:
        return [account_name(shard, i) for i in range(self.accounts_per_shard)]

    def owner(self, account: str) -> int:
        shard = account_owner(account)
        if not 0 <= shard < self.s:
            raise UsageError(f'Account {account} belongs to no shard')
        return shard

    def initial_state(self, shard: int) -> Dict[str, int]:
        return {a: self.initial_balance for a in self.accounts(shard)}


@dataclass(frozen=True)
class WorkloadSpec:
    k_max: int = 2
    d_max: Optional[int] = None
    write_prob: float = 0.8
    skew: str = 'uniform'
    zipf_alpha: float = 1.2
    txn_count: Optional[int] = 200
    cutoff: Optional[int] = None
    accounts_per_shard: int = 16
    initial_balance: int = 100
    amount_min: int = 1
    amount_max: int = 50
    condition_prob: float = 1.0
    retry_aborted: bool = False

    @classmethod
    def from_section(cls, section: Dict[str, Any]) -> 'WorkloadSpec':
        known = {k: v for k, v in section.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _popularity(graph: ShardGraph, spec: WorkloadSpec) -> np.ndarray:
    if spec.skew == 'zipf':
        ranks = np.arange(1, graph.s + 1, dtype=float)
        weights = ranks ** -spec.zipf_alpha
    else:
        weights = np.ones(graph.s)
    return weights / weights.sum()


def sample_destinations(spec: WorkloadSpec, graph: ShardGraph, home: int,
                        rng: np.random.Generator) -> List[int]:
    """Distinct destinations within d_max of home, count uniform in [1, k_max]."""
    radius = graph.diameter if spec.d_max is None else spec.d_max
    candidates = sorted(graph.z_neighborhood(home, radius))
    count = int(rng.integers(1, spec.k_max + 1))
    count = min(count, len(candidates))
    weights = _popularity(graph, spec)[candidates]
    chosen = rng.choice(len(candidates), size=count, replace=False, p=weights / weights.sum())
    return [candidates[int(i)] for i in chosen]


def _debit(account: str, amount: int, conditional: bool) -> Write:
    return Write(account=account, delta=-amount, min_balance=amount if conditional else None)


def next_txn(spec: WorkloadSpec, graph: ShardGraph, home: int, clock: int,
             rng: np.random.Generator, txn_id: int) -> Transaction:
    """One transfer-shaped transaction generated at ``home`` with ts = clock.

    The first sampled destination is the source shard. Every other
    destination is a credit with probability ``write_prob`` and a read
    otherwise; the source is debited the total. A single-destination
    transaction moves funds between two accounts of that shard.
    """
    dests = sample_destinations(spec, graph, home, rng)
    amount = int(rng.integers(spec.amount_min, spec.amount_max + 1))
    conditional = bool(rng.random() < spec.condition_prob)
    n_accounts = spec.accounts_per_shard
    accesses: Dict[int, Access] = {}

    source = dests[0]
    if len(dests) == 1:
        if rng.random() < spec.write_prob:
            a, b = rng.choice(n_accounts, size=2, replace=False)
            accesses[source] = Access(writes=(
                _debit(account_name(source, int(a)), amount, conditional),
                Write(account=account_name(source, int(b)), delta=amount),
            ))
        else:
            a = int(rng.integers(n_accounts))
            accesses[source] = Access(reads=frozenset({account_name(source, a)}))
        return Transaction(id=txn_id, ts=clock, home=home, accesses=accesses)

    credited = 0
    for dest in dests[1:]:
        account = account_name(dest, int(rng.integers(n_accounts)))
        if rng.random() < spec.write_prob:
            accesses[dest] = Access(writes=(Write(account=account, delta=amount),))
            credited += 1
        else:
            accesses[dest] = Access(reads=frozenset({account}))

    source_account = account_name(source, int(rng.integers(n_accounts)))
    if credited:
        accesses[source] = Access(writes=(_debit(source_account, amount * credited, conditional),))
    else:
        accesses[source] = Access(reads=frozenset({source_account}))
    return Transaction(id=txn_id, ts=clock, home=home, accesses=accesses)


class WorkloadGenerator:
    """Per-run transaction source honoring the txn cap and the generation cutoff."""

    def __init__(self, spec: WorkloadSpec, graph: ShardGraph, seed: int, horizon: Optional[int] = None):
        self.spec = spec
        self.graph = graph
        self.rng = np.random.default_rng(seed)
        self.cutoff = spec.cutoff if spec.cutoff is not None else horizon
        self.generated = 0
        self._next_id = 0

    def new_id(self) -> int:
        txn_id = self._next_id
        self._next_id += 1
        return txn_id

    def exhausted(self, clock: int) -> bool:
        if self.spec.txn_count is not None and self.generated >= self.spec.txn_count:
            return True
        return self.cutoff is not None and clock > self.cutoff

    def next_txn(self, home: int, clock: int) -> Optional[Transaction]:
        if self.exhausted(clock):
            return None
        self.generated += 1
        return next_txn(self.spec, self.graph, home, clock, self.rng, self.new_id())

    def retry(self, txn: Transaction, clock: int) -> Optional[Transaction]:
        """Same accesses under a fresh id and ts."""
        if self.cutoff is not None and clock > self.cutoff:
            return None
        return Transaction(id=self.new_id(), ts=clock, home=txn.home, accesses=dict(txn.accesses))


def measured_d(trace) -> int:
    """Largest home-to-destination distance over the generated transactions."""
    return max((rec.max_dist for rec in trace.txns.values()), default=0)


@dataclass
class ReductionInstance:
    graph: ShardGraph
    txns: List[Transaction]
    vertex_of: Dict[int, Any]
    meta: Dict[str, Any]


def reduction_instance(h: nx.Graph) -> ReductionInstance:
    """Transactions whose shard-level conflict graph is ``h``.

    One unit-clique shard per edge of ``h``; the two endpoint transactions
    write one shared account there. Isolated vertices get a dedicated
    extra shard each, so they conflict with nothing.
    """
    if h.number_of_edges() == 0:
        raise UsageError('Reduction instances need at least one edge')
    if any(u == v for u, v in h.edges):
        raise UsageError('Reduction instances need a simple graph')

    vertices = sorted(h.nodes, key=str)
    edges = sorted((tuple(sorted(e, key=str)) for e in h.edges), key=lambda e: (str(e[0]), str(e[1])))
    isolated = [v for v in vertices if h.degree(v) == 0]
    s = len(edges) + len(isolated)
    graph = build_graph({'kind': 'clique', 's': s, 'w': 1})

    writes: Dict[Any, Dict[int, Access]] = {v: {} for v in vertices}
    for shard, (u, v) in enumerate(edges):
        shared = Write(account=account_name(shard, 0), delta=1)
        writes[u][shard] = Access(writes=(shared,))
        writes[v][shard] = Access(writes=(shared,))
    dedicated = {}
    for offset, v in enumerate(isolated):
        shard = len(edges) + offset
        dedicated[str(v)] = shard
        writes[v][shard] = Access(writes=(Write(account=account_name(shard, 0), delta=1),))

    txns, vertex_of = [], {}
    for txn_id, v in enumerate(vertices):
        accesses = writes[v]
        txns.append(Transaction(id=txn_id, ts=0, home=min(accesses), accesses=accesses))
        vertex_of[txn_id] = v

    meta = {
        'vertices': len(vertices),
        'edges': len(edges),
        'shards': s,
        'dedicated_shards': dedicated,
    }
    return ReductionInstance(graph=graph, txns=txns, vertex_of=vertex_of, meta=meta)


def load_edge_list(path: Path) -> nx.Graph:
    """Read "u v" pairs, one per line; blank lines and # comments are skipped."""
    path = Path(path)
    graph = nx.Graph()
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, start=1):
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) == 1:
                    graph.add_node(int(parts[0]))
                    continue
                if len(parts) != 2:
                    raise ConfigError(f'{path}:{number}: expected "u v", got {line!r}')
                graph.add_edge(int(parts[0]), int(parts[1]))
    except FileNotFoundError:
        raise ConfigError(f'Edge list not found: {path}')
    except ValueError:
        raise ConfigError(f'{path}: vertex labels must be integers')
    return graph


def instance_transactions(path: Path) -> Tuple[ShardGraph, List[Transaction], Dict[str, Any]]:
    """Reduction instance for a run: every transaction starts at t=0."""
    instance = reduction_instance(load_edge_list(path))
    meta = dict(instance.meta, source=str(path))
    return instance.graph, instance.txns, meta
