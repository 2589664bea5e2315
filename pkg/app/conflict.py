"""Transactions, the conflict graph and incremental greedy coloring."""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

import networkx as nx

from .errors import UsageError

logger = logging.getLogger(__name__)


class TxnStatus(str, Enum):
    PENDING = 'pending'
    SCHEDULED = 'scheduled'
    PRECOMMITTED = 'precommitted'
    COMMITTED = 'committed'
    ABORTED = 'aborted'


FINAL_STATUSES = (TxnStatus.PRECOMMITTED, TxnStatus.COMMITTED, TxnStatus.ABORTED)


@dataclass(frozen=True)
class Write:
    """Signed balance delta; a debit may require ``balance >= min_balance`` first."""

    account: str
    delta: int
    min_balance: Optional[int] = None


@dataclass(frozen=True)
class Access:
    reads: FrozenSet[str] = frozenset()
    writes: Tuple[Write, ...] = ()

    @property
    def write_set(self) -> FrozenSet[str]:
        return frozenset(w.account for w in self.writes)

    @property
    def accounts(self) -> FrozenSet[str]:
        return self.reads | self.write_set


@dataclass
class Transaction:
    id: int
    ts: int
    home: int
    accesses: Dict[int, Access]
    status: TxnStatus = TxnStatus.PENDING
    color: Optional[int] = None
    epoch: int = 0
    q: int = 0
    r: int = 0

    def __post_init__(self):
        if not self.accesses:
            raise UsageError(f'Transaction {self.id} accesses no shard')

    @property
    def dests(self) -> List[int]:
        return sorted(self.accesses)

    @property
    def write_dests(self) -> List[int]:
        return sorted(d for d, a in self.accesses.items() if a.writes)

    @property
    def accounts(self) -> FrozenSet[str]:
        return frozenset().union(*(a.accounts for a in self.accesses.values()))

    @property
    def writes(self) -> List[Write]:
        return [w for d in self.dests for w in self.accesses[d].writes]

    @property
    def finalized(self) -> bool:
        return self.status in FINAL_STATUSES


@dataclass(frozen=True)
class SubTransaction:
    txn_id: int
    dest: int
    ts: int
    home: int
    reads: FrozenSet[str]
    writes: Tuple[Write, ...]
    priority_key: Tuple[int, ...]
    epoch: int = 0
    color: Optional[int] = None
    leader_key: int = -1
    leader: int = 0

    @classmethod
    def split(cls, txn: Transaction, key_fn: Callable[[Transaction], Tuple[int, ...]],
              leader_key: int = -1, leader: int = 0) -> List['SubTransaction']:
        """One subtransaction per destination of ``txn``."""
        key = key_fn(txn)
        return [
            cls(
                txn_id=txn.id,
                dest=dest,
                ts=txn.ts,
                home=txn.home,
                reads=txn.accesses[dest].reads,
                writes=txn.accesses[dest].writes,
                priority_key=key,
                epoch=txn.epoch,
                color=txn.color,
                leader_key=leader_key,
                leader=leader,
            )
            for dest in txn.dests
        ]


def apply_writes(balances: Dict[str, int], writes: Iterable[Write],
                 lookup: Optional[Callable[[str], int]] = None) -> bool:
    """Apply writes in order if every condition holds; leave balances untouched otherwise."""
    staged: Dict[str, int] = {}
    for write in writes:
        if write.account in staged:
            balance = staged[write.account]
        elif write.account in balances:
            balance = balances[write.account]
        elif lookup is not None:
            balance = lookup(write.account)
        else:
            raise UsageError(f'Unknown account {write.account}')
        if write.min_balance is not None and balance < write.min_balance:
            return False
        staged[write.account] = balance + write.delta
    balances.update(staged)
    return True


def conflicts(ti: Transaction, tj: Transaction, account_level: bool = False) -> bool:
    """Shard-level conflict: a common destination where at least one of the two writes."""
    if ti.id == tj.id:
        raise UsageError('A transaction is not compared with itself')
    for shard in set(ti.accesses) & set(tj.accesses):
        a, b = ti.accesses[shard], tj.accesses[shard]
        if account_level:
            if (a.write_set & b.accounts) or (b.write_set & a.accounts):
                return True
        elif a.writes or b.writes:
            return True
    return False


def smallest_free(used: Set[int], floor: int = 0) -> int:
    color = floor
    while color in used:
        color += 1
    return color


class ConflictGraph:
    """Pending and scheduled transactions of one leader, with their colors."""

    def __init__(self, account_level: bool = False):
        self.account_level = account_level
        self._graph = nx.Graph()
        self._txns: Dict[int, Transaction] = {}
        self._retired: Set[int] = set()
        self._last_floor = 0
        self._top_retired = -1

    def __contains__(self, txn_id: int) -> bool:
        return txn_id in self._txns

    def __len__(self) -> int:
        return len(self._txns)

    @property
    def graph(self) -> nx.Graph:
        return self._graph

    def vertices(self) -> List[int]:
        return sorted(self._txns)

    def transaction(self, txn_id: int) -> Transaction:
        try:
            return self._txns[txn_id]
        except KeyError:
            raise UsageError(f'Transaction {txn_id} is not in the conflict graph')

    def extend(self, txn: Transaction) -> None:
        if txn.id in self._txns or txn.id in self._retired:
            raise UsageError(f'Transaction id {txn.id} is already known to this graph')
        self._graph.add_node(txn.id)
        for other in self._txns.values():
            if conflicts(txn, other, self.account_level):
                self._graph.add_edge(txn.id, other.id)
        self._txns[txn.id] = txn
        txn.color = None

    def color_of(self, txn_id: int) -> Optional[int]:
        return self.transaction(txn_id).color

    def colors_in_use(self) -> List[int]:
        return sorted({t.color for t in self._txns.values() if t.color is not None})

    def color_floor(self) -> int:
        """Minimum color among colored vertices.

        With none colored the floor sits one past the highest color already
        finalized, so colors never go back down.
        """
        colors = self.colors_in_use()
        lowest = colors[0] if colors else self._top_retired + 1
        self._last_floor = max(self._last_floor, lowest)
        return self._last_floor

    def sharing_floor(self, txn_id: int, floor: int) -> int:
        """``floor`` raised to the colors of colored transactions sharing a shard with ``txn_id``.

        Keys are color-major, so coloring from here keeps a transaction
        behind every transaction already scheduled on its shards.
        """
        dests = set(self.transaction(txn_id).dests)
        shared = [t.color for t in self._txns.values()
                  if t.id != txn_id and t.color is not None and dests.intersection(t.dests)]
        return max([floor] + shared)

    def greedy_color(self, txn_id: int, floor: int) -> int:
        txn = self.transaction(txn_id)
        if txn.color is not None:
            raise UsageError(f'Transaction {txn_id} is already colored')
        used = {self._txns[n].color for n in self._graph.neighbors(txn_id)}
        used.discard(None)
        txn.color = smallest_free(used, floor)
        txn.status = TxnStatus.SCHEDULED
        return txn.color

    def cancel_color(self, txn_id: int) -> int:
        txn = self.transaction(txn_id)
        if txn.color is None or txn.finalized:
            raise UsageError(f'Cannot cancel the color of transaction {txn_id}')
        previous, txn.color = txn.color, None
        txn.status = TxnStatus.PENDING
        return previous

    def remove(self, txn_id: int) -> None:
        txn = self.transaction(txn_id)
        if not txn.finalized:
            raise UsageError(f'Transaction {txn_id} is not finalized ({txn.status.value})')
        self._graph.remove_node(txn_id)
        del self._txns[txn_id]
        self._retired.add(txn_id)
        if txn.color is not None:
            self._top_retired = max(self._top_retired, txn.color)
        self.color_floor()

    def neighbors(self, txn_id: int) -> List[int]:
        self.transaction(txn_id)
        return sorted(self._graph.neighbors(txn_id))

    def degree(self, txn_id: int) -> int:
        self.transaction(txn_id)
        return self._graph.degree(txn_id)

    def max_degree(self) -> int:
        return max((d for _, d in self._graph.degree), default=0)

    def is_proper(self) -> bool:
        for u, v in self._graph.edges:
            cu, cv = self._txns[u].color, self._txns[v].color
            if cu is not None and cu == cv:
                return False
        return True


def incremental_greedy(graph: nx.Graph, order: Iterable, floor: int = 0) -> Dict:
    """Color vertices in arrival order with the smallest color >= floor free among neighbors."""
    colors: Dict = {}
    for node in order:
        used = {colors[n] for n in graph.neighbors(node) if n in colors}
        colors[node] = smallest_free(used, floor)
    return colors


def conflict_graph_of(txns: Iterable[Transaction], account_level: bool = False) -> nx.Graph:
    """Plain networkx conflict graph over a transaction set."""
    txns = list(txns)
    graph = nx.Graph()
    graph.add_nodes_from(t.id for t in txns)
    for i, a in enumerate(txns):
        for b in txns[i + 1:]:
            if conflicts(a, b, account_level):
                graph.add_edge(a.id, b.id)
    return graph
