"""Stateless schedulers: leaders color, destinations validate and vote."""
import bisect
import logging
from collections import defaultdict
from functools import partial
from typing import Dict, List, Optional, Set, Tuple

from ..conflict import ConflictGraph, SubTransaction, Transaction, TxnStatus, apply_writes
from ..cover import Cluster
from ..errors import ProtocolViolation
from ..simcore import ChainEntry, Message, MessageKind
from .base import ABORT, COMMIT, SINGLE_LEADER, SchedulerBase

logger = logging.getLogger(__name__)


class StatelessLeader:
    def __init__(self, shard: int, key: int, cluster: Optional[Cluster] = None, account_level: bool = False):
        self.shard = shard
        self.key = key
        self.cluster = cluster
        self.graph = ConflictGraph(account_level=account_level)
        self.txns: Dict[int, Transaction] = {}
        # txn id -> dest -> (attempt, vote)
        self.votes: Dict[int, Dict[int, Tuple[int, str]]] = {}
        self.ignored: Dict[Tuple[int, int], Set[int]] = defaultdict(set)


class StatelessDestination:
    """sch_dq, the busy flag and the account store of one shard."""

    def __init__(self, shard: int, accounts: Dict[str, int]):
        self.shard = shard
        self.accounts = accounts
        self.queue: List[Tuple[tuple, int, int, SubTransaction]] = []
        self.inflight: Optional[SubTransaction] = None
        self.attempt = 0
        self.stalled = False
        # (txn, epoch) -> time the subtransaction was cancelled or aborted here
        self.tombstones: Dict[Tuple[int, int], int] = {}
        self.pick_pending = False

    @property
    def busy(self) -> bool:
        return self.inflight is not None

    def insert(self, sub: SubTransaction) -> None:
        bisect.insort(self.queue, (sub.priority_key, sub.epoch, sub.txn_id, sub))

    def pop(self) -> SubTransaction:
        return self.queue.pop(0)[3]

    def remove(self, txn_id: int, epoch: int) -> bool:
        for index, (_, _, _, sub) in enumerate(self.queue):
            if sub.txn_id == txn_id and sub.epoch == epoch:
                del self.queue[index]
                return True
        return False

    def holds(self, txn_id: int, epoch: int) -> bool:
        return self.inflight is not None and self.inflight.txn_id == txn_id and self.inflight.epoch == epoch

    def bury(self, txn_id: int, epoch: int, now: int, window: int) -> None:
        """Tombstone (txn, epoch), forgetting tombstones older than ``window`` ticks.

        Every subtransaction is sent before its cancel or abort confirm, so
        once the largest link delay has passed it can no longer arrive.
        """
        self.tombstones = {key: t for key, t in self.tombstones.items() if now - t <= window}
        self.tombstones[(txn_id, epoch)] = now


class StatelessScheduler(SchedulerBase):
    """Leader coloring, destination voting, confirm/cancel and ignore/ignored handling."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.leaders: Dict[int, StatelessLeader] = {}
        self.dests = {
            shard: StatelessDestination(shard, self.universe.initial_state(shard))
            for shard in range(self.graph.s)
        }

    def priority_key(self, txn: Transaction) -> tuple:
        raise NotImplementedError

    def leader_state(self, key: int, shard: int) -> StatelessLeader:
        if key not in self.leaders:
            cluster = self.hierarchy.cluster(key) if self.hierarchy is not None and key >= 0 else None
            self.leaders[key] = StatelessLeader(shard, key, cluster, self.params.account_conflicts)
        return self.leaders[key]

    # leader side

    def _on_submit(self, message: Message) -> None:
        leader = self.leader_state(message.payload['leader_key'], message.dst)
        self.on_leader_receive(leader, message.payload['txn'])

    def on_leader_receive(self, leader: StatelessLeader, txn: Transaction) -> None:
        leader.graph.extend(txn)
        leader.txns[txn.id] = txn
        leader.votes[txn.id] = {}
        self.trace.record(self.now, leader.shard, 'leader_receive', txn=txn.id, leader=leader.key)

        recolor = [txn]
        for other in sorted(leader.txns.values(), key=lambda t: (t.ts, t.id)):
            if other.id == txn.id or other.color is None or other.ts <= txn.ts:
                continue
            if leader.votes[other.id]:
                continue
            self._cancel(leader, other)
            recolor.append(other)

        for t in recolor:
            self._color_and_dispatch(leader, t)

    def _cancel(self, leader: StatelessLeader, txn: Transaction) -> None:
        previous = leader.graph.cancel_color(txn.id)
        for dest in txn.dests:
            self.send(leader.shard, dest, MessageKind.CANCEL, txn=txn.id, epoch=txn.epoch)
        self.trace.record(self.now, leader.shard, 'cancel', txn=txn.id, epoch=txn.epoch, color=previous)
        txn.epoch += 1
        leader.votes[txn.id] = {}

    def _color_and_dispatch(self, leader: StatelessLeader, txn: Transaction) -> None:
        floor = leader.graph.color_floor()
        start = leader.graph.sharing_floor(txn.id, floor)
        color = leader.graph.greedy_color(txn.id, start)
        self.trace.txn_scheduled(txn.id, self.now, color, leader.key)
        self.trace.record(self.now, leader.shard, 'color', txn=txn.id, color=color, floor=floor, start=start,
                          epoch=txn.epoch)
        for sub in SubTransaction.split(txn, self.priority_key, leader.key, leader.shard):
            self.send(leader.shard, sub.dest, MessageKind.SUBTXN, sub=sub)

    def _on_vote(self, message: Message) -> None:
        p = message.payload
        leader = self.leaders[p['leader_key']]
        self.on_leader_votes(leader, p['txn'], p['dest'], p['epoch'], p['attempt'], p['vote'])

    def on_leader_votes(self, leader: StatelessLeader, txn_id: int, dest: int, epoch: int,
                        attempt: int, vote: str) -> None:
        txn = leader.txns.get(txn_id)
        if txn is None:
            self.trace.record(self.now, leader.shard, 'late_vote', txn=txn_id, dest=dest)
            return
        if epoch != txn.epoch or attempt in leader.ignored[(txn_id, dest)]:
            self.trace.record(self.now, leader.shard, 'stale_vote', txn=txn_id, dest=dest, epoch=epoch)
            return

        if dest not in txn.accesses:
            raise ProtocolViolation(f'Shard {dest} voted on txn {txn_id}, which does not access it')
        tally = leader.votes[txn_id]
        tally[dest] = (attempt, vote)

        if vote == ABORT:
            self._decide(leader, txn, ABORT)
        elif len(tally) == len(txn.dests) and all(v == COMMIT for _, v in tally.values()):
            self._decide(leader, txn, COMMIT)

    def _decide(self, leader: StatelessLeader, txn: Transaction, outcome: str) -> None:
        txn.status = TxnStatus.COMMITTED if outcome == COMMIT else TxnStatus.ABORTED
        self.trace.txn_decided(txn.id, self.now, outcome)
        self.trace.record(self.now, leader.shard, 'decide', txn=txn.id, outcome=outcome, epoch=txn.epoch)
        for dest in txn.dests:
            self.send(leader.shard, dest, MessageKind.CONFIRM, txn=txn.id, epoch=txn.epoch, outcome=outcome)

        leader.graph.remove(txn.id)
        del leader.txns[txn.id]
        del leader.votes[txn.id]
        for dest in txn.dests:
            leader.ignored.pop((txn.id, dest), None)
        self.notify_home(leader.shard, txn, outcome)

    def _on_ignore(self, message: Message) -> None:
        p = message.payload
        leader = self.leaders[p['leader_key']]
        txn = leader.txns.get(p['txn'])
        if txn is None or txn.epoch != p['epoch']:
            self.trace.record(self.now, leader.shard, 'ignore_late', txn=p['txn'], dest=p['dest'])
            return

        leader.ignored[(txn.id, p['dest'])].add(p['attempt'])
        previous = leader.votes[txn.id].get(p['dest'])
        if previous is not None and previous[0] == p['attempt']:
            del leader.votes[txn.id][p['dest']]
        self.trace.record(self.now, leader.shard, 'ignore_accept', txn=txn.id, dest=p['dest'])
        self.send(leader.shard, p['dest'], MessageKind.IGNORED, txn=txn.id, epoch=txn.epoch, attempt=p['attempt'])

    # destination side

    def _on_subtxn(self, message: Message) -> None:
        self.on_dest_receive(self.dests[message.dst], message.payload['sub'])

    def on_dest_receive(self, dest: StatelessDestination, sub: SubTransaction) -> None:
        if (sub.txn_id, sub.epoch) in dest.tombstones:
            self.trace.record(self.now, dest.shard, 'drop_cancelled', txn=sub.txn_id, epoch=sub.epoch)
            return
        dest.insert(sub)
        self.trace.record(self.now, dest.shard, 'enqueue', txn=sub.txn_id, epoch=sub.epoch, key=list(sub.priority_key))
        self.trace.note_queue(dest.shard, len(dest.queue))
        if dest.busy:
            self.on_dest_priority(dest, sub)
        else:
            self._schedule_pick(dest)

    def on_dest_priority(self, dest: StatelessDestination, sub: SubTransaction) -> None:
        """Stall the in-flight subtransaction when a strictly higher-priority one arrives."""
        current = dest.inflight
        if not self.params.preempt or dest.stalled or sub.priority_key >= current.priority_key:
            return
        dest.stalled = True
        self.trace.record(self.now, dest.shard, 'ignore', txn=current.txn_id, by=sub.txn_id)
        self.send(dest.shard, current.leader, MessageKind.IGNORE, txn=current.txn_id, epoch=current.epoch,
                  attempt=dest.attempt, dest=dest.shard, leader_key=current.leader_key)

    def _schedule_pick(self, dest: StatelessDestination) -> None:
        if dest.pick_pending:
            return
        dest.pick_pending = True
        self.engine.post_local(dest.shard, partial(self._pick, dest), 'pick')

    def _pick(self, dest: StatelessDestination) -> None:
        dest.pick_pending = False
        if dest.busy or not dest.queue:
            return
        sub = dest.pop()
        dest.inflight = sub
        dest.attempt += 1
        dest.stalled = False

        ok = apply_writes({}, sub.writes, lookup=dest.accounts.__getitem__)
        vote = COMMIT if ok else ABORT
        self.trace.record(self.now, dest.shard, 'pick', txn=sub.txn_id, epoch=sub.epoch, key=list(sub.priority_key),
                          vote=vote)
        self.send(dest.shard, sub.leader, MessageKind.VOTE, txn=sub.txn_id, epoch=sub.epoch,
                  attempt=dest.attempt, dest=dest.shard, vote=vote, leader_key=sub.leader_key)

    def _on_confirm(self, message: Message) -> None:
        p = message.payload
        self.on_dest_confirm(self.dests[message.dst], p['txn'], p['epoch'], p['outcome'])

    def on_dest_confirm(self, dest: StatelessDestination, txn_id: int, epoch: int, outcome: str) -> None:
        if dest.holds(txn_id, epoch):
            sub = dest.inflight
            if outcome == COMMIT:
                if not apply_writes(dest.accounts, sub.writes):
                    raise ProtocolViolation(f'Validated writes of txn {txn_id} no longer apply on shard {dest.shard}')
                self.trace.append_chain(dest.shard, ChainEntry(self.now, txn_id, sub.leader_key))
            dest.inflight = None
            dest.stalled = False
            self.trace.record(self.now, dest.shard, 'release', txn=txn_id, epoch=epoch, outcome=outcome)
            self.trace.txn_applied(txn_id, dest.shard, self.now)
            self._schedule_pick(dest)
        elif outcome == ABORT:
            if dest.remove(txn_id, epoch):
                self.trace.record(self.now, dest.shard, 'dequeue', txn=txn_id, epoch=epoch, reason=ABORT)
            dest.bury(txn_id, epoch, self.now, self.tombstone_window)
            self.trace.txn_applied(txn_id, dest.shard, self.now)
        else:
            raise ProtocolViolation(f'Confirmed commit of txn {txn_id} on shard {dest.shard}, which is not in flight')

    @property
    def tombstone_window(self) -> int:
        return self.engine.delay_model.bounds(self.graph.diameter)[1]

    def _on_cancel(self, message: Message) -> None:
        p = message.payload
        dest = self.dests[message.dst]
        txn_id, epoch = p['txn'], p['epoch']
        dest.bury(txn_id, epoch, self.now, self.tombstone_window)
        if dest.holds(txn_id, epoch):
            dest.inflight = None
            dest.stalled = False
            self.trace.record(self.now, dest.shard, 'cancel_release', txn=txn_id, epoch=epoch)
            self._schedule_pick(dest)
        elif dest.remove(txn_id, epoch):
            self.trace.record(self.now, dest.shard, 'dequeue', txn=txn_id, epoch=epoch, reason='cancel')
        else:
            self.trace.record(self.now, dest.shard, 'cancel_early', txn=txn_id, epoch=epoch)

    def _on_ignored(self, message: Message) -> None:
        p = message.payload
        dest = self.dests[message.dst]
        if dest.holds(p['txn'], p['epoch']) and dest.stalled and p['attempt'] == dest.attempt:
            sub = dest.inflight
            dest.inflight = None
            dest.stalled = False
            dest.insert(sub)
            self.trace.record(self.now, dest.shard, 'reinsert', txn=sub.txn_id, epoch=sub.epoch,
                              key=list(sub.priority_key))
            self._schedule_pick(dest)
        else:
            self.trace.record(self.now, dest.shard, 'ignored_dropped', txn=p['txn'])


class SingleLeaderStateless(StatelessScheduler):
    """One designated leader colors every transaction."""

    name = 'a1'

    def priority_key(self, txn: Transaction) -> tuple:
        return (txn.color, txn.ts, txn.id)

    def route(self, txn: Transaction) -> None:
        self.send(txn.home, self.params.leader, MessageKind.SUBMIT, txn=txn, leader_key=SINGLE_LEADER)


class MultiLeaderStateless(StatelessScheduler):
    """Each transaction goes to the leader of its home cluster in the cover hierarchy."""

    name = 'a2'
    multi_leader = True

    def priority_key(self, txn: Transaction) -> tuple:
        if self.params.order == 'color_major':
            return (txn.color, txn.ts, txn.q, txn.r, txn.id)
        return (txn.ts, txn.q, txn.r, txn.color, txn.id)

    def route(self, txn: Transaction) -> None:
        leader, key = self.route_to_cluster(txn)
        self.trace.record(self.now, txn.home, 'route', txn=txn.id, cluster=key, q=txn.q, r=txn.r)
        self.send(txn.home, leader, MessageKind.SUBMIT, txn=txn, leader_key=key)
