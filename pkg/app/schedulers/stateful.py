"""Stateful schedulers: leaders pre-commit whole rounds against gathered account state."""
import logging
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import Deque, Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from ..conflict import ConflictGraph, SubTransaction, Transaction, TxnStatus, Write, apply_writes
from ..cover import Cluster, lambda_for
from ..errors import ProtocolViolation
from ..simcore import ChainEntry, Message, MessageKind
from .base import ABORT, COMMIT, SINGLE_LEADER, SchedulerBase

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrecommitBatch:
    dest: int
    leader_key: int
    leader: int
    seq: int
    entries: Tuple[SubTransaction, ...]


class Phase(str, Enum):
    IDLE = 'idle'
    GATHERING = 'gathering'
    ACKING = 'acking'


class StatefulLeader:
    """PQ, T, the conflict graph and the round bookkeeping of one leader."""

    def __init__(self, shard: int, key: int, members: FrozenSet[int], lam: int,
                 cluster: Optional[Cluster] = None, account_level: bool = False):
        self.shard = shard
        self.key = key
        self.members = members
        self.lam = lam
        self.cluster = cluster
        self.pq: List[Transaction] = []
        self.txns: Dict[int, Transaction] = {}
        self.graph = ConflictGraph(account_level=account_level)

        self.phase = Phase.IDLE
        self.round = 0
        self.awaiting: Set[int] = set()
        self.states: Dict[str, int] = {}
        self.last_trigger: Optional[int] = None
        self.pending_trigger = False
        self.colors_done = 0

        self.next_seq: Dict[int, int] = defaultdict(int)
        self.unapplied: Dict[int, List[Tuple[int, Tuple[Write, ...]]]] = defaultdict(list)
        self.acks: Set[Tuple[int, int]] = set()

        # schedule control (multi-leader only)
        self.tokens: Set[int] = set()
        self.holder: Dict[int, int] = {}
        self.acquiring = False
        self.requests: List[Tuple[int, FrozenSet[int]]] = []

    @property
    def timer_tag(self) -> Tuple[str, int]:
        return ('trigger', self.key)

    @property
    def has_work(self) -> bool:
        return bool(self.pq or self.txns)

    @property
    def has_control(self) -> bool:
        return self.tokens >= self.members

    @property
    def order_key(self) -> Tuple[int, int, int]:
        return self.cluster.order_key if self.cluster is not None else (0, 0, self.key)


class StatefulDestination:
    def __init__(self, shard: int, accounts: Dict[str, int]):
        self.shard = shard
        self.accounts = accounts
        self.applied: Dict[int, int] = {}
        self.expected: Dict[int, int] = defaultdict(int)
        self.buffer: Dict[Tuple[int, int], PrecommitBatch] = {}
        self.ready: Deque[PrecommitBatch] = deque()
        self.appending = False


def _subtxn_key(txn: Transaction) -> tuple:
    return (txn.color, txn.ts, txn.id)


class StatefulScheduler(SchedulerBase):
    """Round pipeline shared by the single- and multi-leader stateful variants."""

    stateful = True

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.leaders: Dict[int, StatefulLeader] = {}
        self.dests = {
            shard: StatefulDestination(shard, self.universe.initial_state(shard))
            for shard in range(self.graph.s)
        }

    # arrival and triggering

    def _on_submit(self, message: Message) -> None:
        leader = self.leaders[message.payload['leader_key']]
        txn = message.payload['txn']
        leader.pq.append(txn)
        self.trace.record(self.now, leader.shard, 'leader_receive', txn=txn.id, leader=leader.key)
        self._wake(leader)

    def _wake(self, leader: StatefulLeader) -> None:
        if leader.phase is not Phase.IDLE or leader.acquiring or self.engine.timer_armed(leader.timer_tag):
            return
        if leader.last_trigger is None:
            fire = self.now
        else:
            fire = max(self.now, leader.last_trigger + 4 * leader.lam)
        self.engine.set_timer(leader.shard, fire, leader.timer_tag)

    def on_timer(self, shard: int, tag) -> None:
        if not (isinstance(tag, tuple) and tag[0] == 'trigger'):
            super().on_timer(shard, tag)
        leader = self.leaders[tag[1]]
        if leader.phase is not Phase.IDLE:
            leader.pending_trigger = True
            return
        self.on_trigger(leader)

    def _trigger_now(self, leader: StatefulLeader, round_no: int) -> None:
        if leader.round != round_no:
            return
        self.on_trigger(leader)

    def _post_trigger(self, leader: StatefulLeader) -> None:
        self.engine.post_local(leader.shard, partial(self._trigger_now, leader, leader.round), 'trigger')

    def _go_idle(self, leader: StatefulLeader) -> None:
        leader.pending_trigger = False
        self.engine.cancel_timer(leader.timer_tag)
        self.trace.record(self.now, leader.shard, 'leader_idle', leader=leader.key)

    def on_trigger(self, leader: StatefulLeader) -> None:
        if not leader.has_work:
            self._go_idle(leader)
            return
        self._start_round(leader)

    # round pipeline

    def _start_round(self, leader: StatefulLeader) -> None:
        leader.last_trigger = self.now
        leader.round += 1
        leader.pending_trigger = False
        self.engine.set_timer(leader.shard, self.now + 4 * leader.lam, leader.timer_tag)

        moved = len(leader.pq)
        for txn in leader.pq:
            leader.graph.extend(txn)
            leader.txns[txn.id] = txn
        leader.pq = []
        self.trace.record(self.now, leader.shard, 'trigger', leader=leader.key, lam=leader.lam,
                          round=leader.round, moved=moved, scheduled=len(leader.txns))

        by_owner: Dict[int, Set[str]] = defaultdict(set)
        for txn in leader.txns.values():
            for account in txn.accounts:
                by_owner[self.universe.owner(account)].add(account)

        leader.phase = Phase.GATHERING
        leader.states = {}
        leader.awaiting = set()
        for owner in sorted(by_owner):
            accounts = sorted(by_owner[owner])
            if owner == leader.shard:
                dest = self.dests[owner]
                balances = {a: dest.accounts[a] for a in accounts}
                leader.states.update(self._overlay(leader, owner, balances, dest.applied.get(leader.key, -1)))
            else:
                leader.awaiting.add(owner)
                self.send(leader.shard, owner, MessageKind.STATE_REQUEST,
                          leader_key=leader.key, round=leader.round, accounts=accounts)

        if not leader.awaiting:
            self.on_state_ready(leader)

    def _overlay(self, leader: StatefulLeader, shard: int, balances: Dict[str, int],
                 applied: int) -> Dict[str, int]:
        """Returned balances plus the writes of this leader's batches the shard has not appended yet."""
        pending = [(seq, writes) for seq, writes in leader.unapplied[shard] if seq > applied]
        leader.unapplied[shard] = pending
        state = dict(balances)
        for _, writes in pending:
            for write in writes:
                if write.account in state:
                    state[write.account] += write.delta
        return state

    def _on_state_request(self, message: Message) -> None:
        p = message.payload
        dest = self.dests[message.dst]
        balances = {a: dest.accounts[a] for a in p['accounts']}
        self.send(dest.shard, message.src, MessageKind.STATE_RESPONSE, leader_key=p['leader_key'],
                  round=p['round'], balances=balances, applied=dest.applied.get(p['leader_key'], -1))

    def _on_state_response(self, message: Message) -> None:
        p = message.payload
        leader = self.leaders[p['leader_key']]
        if leader.phase is not Phase.GATHERING or p['round'] != leader.round:
            raise ProtocolViolation(f'State response for round {p["round"]} reached leader {leader.key} '
                                    f'in round {leader.round} ({leader.phase.value})')
        leader.states.update(self._overlay(leader, message.src, p['balances'], p['applied']))
        leader.awaiting.discard(message.src)
        if not leader.awaiting:
            self.on_state_ready(leader)

    def on_state_ready(self, leader: StatefulLeader) -> None:
        """Color new transactions, then pre-commit the first lam colors in ascending order."""
        floor = leader.graph.color_floor()
        for txn in sorted(leader.txns.values(), key=lambda t: (t.ts, t.id)):
            if txn.color is None:
                color = leader.graph.greedy_color(txn.id, floor)
                self.trace.txn_scheduled(txn.id, self.now, color, leader.key)

        colors = leader.graph.colors_in_use()[:leader.lam]
        work = dict(leader.states)
        batches: Dict[int, List[SubTransaction]] = defaultdict(list)
        precommitted, aborted = [], []

        for color in colors:
            for txn in sorted((t for t in leader.txns.values() if t.color == color), key=lambda t: t.id):
                if apply_writes(work, txn.writes):
                    txn.status = TxnStatus.PRECOMMITTED
                    for sub in SubTransaction.split(txn, _subtxn_key, leader.key, leader.shard):
                        batches[sub.dest].append(sub)
                    precommitted.append(txn.id)
                    outcome = COMMIT
                else:
                    txn.status = TxnStatus.ABORTED
                    aborted.append(txn.id)
                    outcome = ABORT
                self.trace.txn_decided(txn.id, self.now, outcome)
                if outcome == ABORT:
                    self.trace.txn_finalized_now(txn.id, self.now)
                leader.graph.remove(txn.id)
                del leader.txns[txn.id]
                self.notify_home(leader.shard, txn, outcome)

        self.trace.record(self.now, leader.shard, 'state_ready', leader=leader.key, colors=colors,
                          lam=leader.lam, precommitted=precommitted, aborted=aborted,
                          remaining=len(leader.txns))
        leader.colors_done = len(colors)

        for dest in sorted(batches):
            seq = leader.next_seq[dest]
            leader.next_seq[dest] += 1
            entries = tuple(batches[dest])
            batch = PrecommitBatch(dest=dest, leader_key=leader.key, leader=leader.shard, seq=seq, entries=entries)
            leader.unapplied[dest].append((seq, tuple(w for sub in entries for w in sub.writes)))
            if self.multi_leader:
                leader.acks.add((dest, seq))
            self.send(leader.shard, dest, MessageKind.PRECOMMIT_BATCH, batch=batch)

        self._end_round(leader)

    def _end_round(self, leader: StatefulLeader) -> None:
        leader.phase = Phase.IDLE
        if not leader.has_work:
            self._go_idle(leader)
        elif leader.colors_done >= leader.lam or leader.pending_trigger:
            self._post_trigger(leader)

    # destination side

    def _on_precommit_batch(self, message: Message) -> None:
        dest = self.dests[message.dst]
        batch: PrecommitBatch = message.payload['batch']
        key = batch.leader_key
        if batch.seq < dest.expected[key] or (key, batch.seq) in dest.buffer:
            raise ProtocolViolation(f'Batch {batch.seq} from leader {key} delivered twice to shard {dest.shard}')
        dest.buffer[(key, batch.seq)] = batch
        if batch.seq != dest.expected[key]:
            self.trace.record(self.now, dest.shard, 'batch_buffered', leader=key, seq=batch.seq,
                              expected=dest.expected[key])
        while (key, dest.expected[key]) in dest.buffer:
            dest.ready.append(dest.buffer.pop((key, dest.expected[key])))
            dest.expected[key] += 1
        self.trace.note_queue(dest.shard, len(dest.ready) + len(dest.buffer))

        if dest.ready and not dest.appending:
            dest.appending = True
            self.engine.post_local(dest.shard, partial(self._append, dest), 'append', delay=1)

    def _append(self, dest: StatefulDestination) -> None:
        """Consensus on one batch: append it whole and apply its writes."""
        batch = dest.ready.popleft()
        for sub in batch.entries:
            if not apply_writes(dest.accounts, sub.writes):
                raise ProtocolViolation(f'Pre-committed writes of txn {sub.txn_id} fail on shard {dest.shard}')
            self.trace.append_chain(dest.shard, ChainEntry(self.now, sub.txn_id, batch.leader_key, batch.seq))
            self.trace.txn_applied(sub.txn_id, dest.shard, self.now)
        dest.applied[batch.leader_key] = batch.seq
        self.on_batch_appended(dest, batch)

        if dest.ready:
            self.engine.post_local(dest.shard, partial(self._append, dest), 'append', delay=1)
        else:
            dest.appending = False

    def on_batch_appended(self, dest: StatefulDestination, batch: PrecommitBatch) -> None:
        pass


class SingleLeaderStateful(StatefulScheduler):
    """One leader batches every transaction in rounds of lam colors."""

    name = 'a3'

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        lam = self.params.lam or max(1, int(self.params.stretch * self.graph.diameter))
        self.leaders[SINGLE_LEADER] = StatefulLeader(
            self.params.leader, SINGLE_LEADER, frozenset(range(self.graph.s)), lam,
            account_level=self.params.account_conflicts)

    def route(self, txn: Transaction) -> None:
        self.send(txn.home, self.params.leader, MessageKind.SUBMIT, txn=txn, leader_key=SINGLE_LEADER)


class MultiLeaderStateful(StatefulScheduler):
    """Per-cluster stateful leaders; a cluster schedules only while it holds its members' control tokens.

    Every shard has one token, initially at its height-(0, 0) cluster. Clusters
    keep a pointer per member shard to where they last sent (or got) its token;
    requests follow the pointers. Overlapping clusters share a token, so at most
    one of them can hold control at a time.
    """

    name = 'a4'
    multi_leader = True

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        for cluster in self.hierarchy.clusters:
            lam = self.params.lam or lambda_for(cluster, self.params.stretch)
            leader = StatefulLeader(cluster.leader, cluster.id, cluster.members, lam, cluster,
                                    account_level=self.params.account_conflicts)
            leader.holder = {s: self.hierarchy.base_cluster(s).id for s in cluster.members}
            self.leaders[cluster.id] = leader
        for shard in range(self.graph.s):
            self.leaders[self.hierarchy.base_cluster(shard).id].tokens.add(shard)

    def start(self, injected: Iterable[Transaction] = ()) -> None:
        for key in sorted(self.leaders):
            leader = self.leaders[key]
            if leader.has_control:
                self.trace.record(self.now, leader.shard, 'control', cluster=key, held=True)
        super().start(injected)

    def route(self, txn: Transaction) -> None:
        leader, key = self.route_to_cluster(txn)
        self.trace.record(self.now, txn.home, 'route', txn=txn.id, cluster=key, q=txn.q, r=txn.r)
        self.send(txn.home, leader, MessageKind.SUBMIT, txn=txn, leader_key=key)

    def on_trigger(self, leader: StatefulLeader) -> None:
        if not leader.has_work:
            self._go_idle(leader)
            return
        if leader.acquiring:
            return
        if leader.has_control:
            self._start_round(leader)
        else:
            self._acquire(leader)

    def _note_control(self, leader: StatefulLeader, before: bool) -> None:
        after = leader.has_control
        if after != before:
            self.trace.record(self.now, leader.shard, 'control', cluster=leader.key, held=after)

    def _acquire(self, leader: StatefulLeader) -> None:
        leader.acquiring = True
        missing = sorted(leader.members - leader.tokens)
        self.trace.record(self.now, leader.shard, 'acquire', cluster=leader.key, missing=missing)
        self._request(leader.key, missing, leader)

    def _request(self, requester: int, shards: Iterable[int], via: StatefulLeader) -> None:
        """Send a request for ``shards`` along the holder pointers of ``via``.

        A pointer back at the requester means the token was granted to it
        after it asked; that grant answers the request, so nothing is sent.
        """
        groups: Dict[int, List[int]] = defaultdict(list)
        for shard in shards:
            if via.holder[shard] == via.key and shard not in via.tokens:
                raise ProtocolViolation(f'Cluster {via.key} points at itself for token {shard} it does not hold')
            groups[via.holder[shard]].append(shard)
        if via.key != requester and requester in groups:
            self.trace.record(self.now, via.shard, 'control_stale', cluster=via.key, requester=requester,
                              shards=sorted(groups.pop(requester)))
        for target in sorted(groups):
            self.send(via.shard, self.leaders[target].shard, MessageKind.CONTROL_REQUEST,
                      requester=requester, shards=sorted(groups[target]), target=target)

    def _outranks(self, requester: int, leader: StatefulLeader) -> bool:
        return self.leaders[requester].order_key > leader.order_key

    def _on_control_request(self, message: Message) -> None:
        p = message.payload
        leader = self.leaders[p['target']]
        requester = p['requester']
        shards = frozenset(p['shards'])
        if requester == leader.key:
            # a request that looped back; the grant that moved the pointer is on its way here
            self.trace.record(self.now, leader.shard, 'control_stale', cluster=leader.key, requester=requester,
                              shards=sorted(shards))
            return

        held = shards & leader.tokens
        absent = shards - held
        if absent:
            if leader.acquiring and not self._outranks(requester, leader):
                leader.requests.append((requester, absent))
            else:
                self.trace.record(self.now, leader.shard, 'control_forward', cluster=leader.key,
                                  requester=requester, shards=sorted(absent))
                self._request(requester, absent, leader)

        if not held:
            return
        if leader.phase is not Phase.IDLE:
            leader.requests.append((requester, held))
        elif leader.acquiring:
            if self._outranks(requester, leader):
                self._grant(leader, requester, held)
                self._request(leader.key, held, leader)
            else:
                leader.requests.append((requester, held))
        elif leader.has_control and leader.has_work:
            leader.requests.append((requester, held))
        else:
            self._grant(leader, requester, held)

    def _grant(self, leader: StatefulLeader, grantee: int, shards: Iterable[int]) -> None:
        shards = sorted(shards)
        before = leader.has_control
        leader.tokens.difference_update(shards)
        for shard in shards:
            leader.holder[shard] = grantee
        self._note_control(leader, before)
        self.send(leader.shard, self.leaders[grantee].shard, MessageKind.CONTROL_GRANT,
                  grantor=leader.key, shards=shards, target=grantee)

    def _on_control_grant(self, message: Message) -> None:
        p = message.payload
        leader = self.leaders[p['target']]
        before = leader.has_control
        leader.tokens.update(p['shards'])
        for shard in p['shards']:
            leader.holder[shard] = leader.key
        self._note_control(leader, before)

        if leader.acquiring and leader.has_control:
            leader.acquiring = False
            if leader.has_work:
                self._start_round(leader)
            else:
                self._serve_requests(leader)
        elif leader.acquiring:
            self._yield_to_higher(leader)
        else:
            self._serve_requests(leader)

    def _yield_to_higher(self, leader: StatefulLeader) -> None:
        """While still acquiring, pass held tokens on to queued requesters that outrank this cluster."""
        keep = []
        for requester, shards in leader.requests:
            held = shards & leader.tokens
            if held and self._outranks(requester, leader):
                self._grant(leader, requester, held)
                self._request(leader.key, held, leader)
                shards = shards - held
            if shards:
                keep.append((requester, shards))
        leader.requests = keep

    def _serve_requests(self, leader: StatefulLeader) -> None:
        """Parents first, then children by lowest cluster id."""
        requests, leader.requests = leader.requests, []
        parents = sorted((r for r in requests if self._outranks(r[0], leader)), key=lambda r: r[0])
        children = sorted((r for r in requests if not self._outranks(r[0], leader)), key=lambda r: r[0])
        for requester, shards in parents + children:
            held = shards & leader.tokens
            if held:
                self._grant(leader, requester, held)
            if shards - held:
                self._request(requester, shards - held, leader)

    def on_batch_appended(self, dest: StatefulDestination, batch: PrecommitBatch) -> None:
        self.send(dest.shard, batch.leader, MessageKind.BATCH_ACK, leader_key=batch.leader_key,
                  seq=batch.seq, dest=dest.shard)

    def _on_batch_ack(self, message: Message) -> None:
        p = message.payload
        leader = self.leaders[p['leader_key']]
        leader.acks.discard((p['dest'], p['seq']))
        leader.unapplied[p['dest']] = [(seq, w) for seq, w in leader.unapplied[p['dest']] if seq > p['seq']]
        if leader.phase is Phase.ACKING and not leader.acks:
            self._round_complete(leader)

    def _end_round(self, leader: StatefulLeader) -> None:
        if leader.acks:
            leader.phase = Phase.ACKING
        else:
            self._round_complete(leader)

    def _round_complete(self, leader: StatefulLeader) -> None:
        leader.phase = Phase.IDLE
        self._serve_requests(leader)
        if not leader.has_work:
            self._go_idle(leader)
        elif leader.colors_done >= leader.lam or leader.pending_trigger:
            self._post_trigger(leader)
