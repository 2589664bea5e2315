"""Home-shard behaviour and message dispatch shared by every scheduler."""
import logging
from dataclasses import dataclass
from functools import partial
from typing import Any, Dict, Hashable, Iterable, Optional, Tuple

from ..config import RunConfig
from ..conflict import Transaction
from ..cover import CoverHierarchy, home_cluster
from ..errors import ProtocolViolation, WorkloadContractViolation
from ..shard_graph import ShardGraph
from ..simcore import Engine, Message, MessageKind
from ..workload import AccountUniverse, WorkloadGenerator

logger = logging.getLogger(__name__)

COMMIT = 'commit'
ABORT = 'abort'

SINGLE_LEADER = -1


@dataclass(frozen=True)
class SchedulerParams:
    algorithm: str = 'a1'
    leader: int = 0
    lam: Optional[int] = None
    preempt: bool = True
    order: str = 'literal'
    account_conflicts: bool = False
    retry_aborted: bool = False
    stretch: float = 1

    @classmethod
    def from_config(cls, config: RunConfig) -> 'SchedulerParams':
        section = config.scheduler
        return cls(
            algorithm=section['algorithm'],
            leader=section['leader'],
            lam=section['lambda'],
            preempt=section['preempt'],
            order=section['order'],
            account_conflicts=section['account_conflicts'],
            retry_aborted=config.workload['retry_aborted'],
            stretch=config.delay['stretch'] if config.delay['mode'] == 'partial' else 1,
        )


class SchedulerBase:
    """Homes generate one live transaction at a time and route it to a leader.

    Subclasses implement ``route`` and the ``_on_<kind>`` handlers for the
    message kinds they use.
    """

    name = ''
    stateful = False
    multi_leader = False

    def __init__(self, engine: Engine, graph: ShardGraph, universe: AccountUniverse,
                 params: SchedulerParams, generator: Optional[WorkloadGenerator] = None,
                 hierarchy: Optional[CoverHierarchy] = None):
        self.engine = engine
        self.graph = graph
        self.universe = universe
        self.params = params
        self.generator = generator
        self.hierarchy = hierarchy
        self.trace = engine.trace
        self.live: Dict[int, Optional[int]] = {shard: None for shard in range(graph.s)}
        self.txns: Dict[int, Transaction] = {}
        engine.attach(self)

    @property
    def now(self) -> int:
        return self.engine.now

    def send(self, src: int, dst: int, kind: MessageKind, **payload: Any) -> Message:
        return self.engine.send(src, dst, kind, **payload)

    def start(self, injected: Iterable[Transaction] = ()) -> None:
        """Queue the t=0 work: injected batch transactions, then one generation per home."""
        for txn in injected:
            self.engine.post_local(txn.home, partial(self._submit, txn, True), 'inject')
        if self.generator is not None:
            for home in range(self.graph.s):
                self.engine.post_local(home, partial(self.on_generate, home), 'generate')

    def on_generate(self, home: int) -> None:
        txn = self.generator.next_txn(home, self.now) if self.generator else None
        if txn is None:
            self.trace.record(self.now, home, 'home_idle')
            return
        self._submit(txn, False)

    def _submit(self, txn: Transaction, injected: bool) -> None:
        if not injected:
            if self.live[txn.home] is not None:
                raise WorkloadContractViolation(
                    f'Home {txn.home} generated txn {txn.id} while txn {self.live[txn.home]} is live')
            self.live[txn.home] = txn.id
        self.txns[txn.id] = txn
        self.trace.txn_generated(txn, self.graph, self.now, injected=injected)
        self.route(txn)

    def route(self, txn: Transaction) -> None:
        raise NotImplementedError

    def route_to_cluster(self, txn: Transaction) -> Tuple[int, int]:
        """Tag the transaction with its home cluster height; return (leader shard, cluster id)."""
        cluster = home_cluster(self.hierarchy, self.graph, txn.home, txn.dests)
        txn.q, txn.r = cluster.q, cluster.r
        return cluster.leader, cluster.id

    def notify_home(self, leader_shard: int, txn: Transaction, outcome: str) -> None:
        self.send(leader_shard, txn.home, MessageKind.OUTCOME, txn=txn.id, outcome=outcome)

    def on_message(self, message: Message) -> None:
        handler = getattr(self, f'_on_{message.kind.value}', None)
        if handler is None:
            raise ProtocolViolation(f'{self.name} has no handler for {message.kind.value} messages', message)
        handler(message)

    def on_timer(self, shard: int, tag: Hashable) -> None:
        raise ProtocolViolation(f'{self.name} set no timer {tag!r}')

    def _on_outcome(self, message: Message) -> None:
        self.on_home_outcome(message.dst, message.payload['txn'], message.payload['outcome'])

    def on_home_outcome(self, home: int, txn_id: int, outcome: str) -> None:
        self.trace.txn_home_notified(txn_id, self.now)
        self.trace.record(self.now, home, 'outcome', txn=txn_id, outcome=outcome)
        if self.live[home] != txn_id:
            return
        self.live[home] = None

        if outcome == ABORT and self.params.retry_aborted and self.generator is not None:
            retry = self.generator.retry(self.txns[txn_id], self.now)
            if retry is not None:
                self._submit(retry, False)
                return
        self.on_generate(home)
