"""Deterministic discrete-event engine with weight-proportional message delays."""
import hashlib
import heapq
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Hashable, List, Optional, Tuple

import numpy as np

from .errors import ProtocolViolation, UsageError
from .shard_graph import ShardGraph

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    MESSAGE = 'message'
    TIMER = 'timer'
    LOCAL = 'local'


class MessageKind(str, Enum):
    SUBMIT = 'submit'
    SUBTXN = 'subtxn'
    VOTE = 'vote'
    CONFIRM = 'confirm'
    CANCEL = 'cancel'
    IGNORE = 'ignore'
    IGNORED = 'ignored'
    STATE_REQUEST = 'state_request'
    STATE_RESPONSE = 'state_response'
    PRECOMMIT_BATCH = 'precommit_batch'
    BATCH_ACK = 'batch_ack'
    CONTROL_REQUEST = 'control_request'
    CONTROL_GRANT = 'control_grant'
    OUTCOME = 'outcome'


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    kind: MessageKind
    payload: Dict[str, Any]
    send_time: int
    deliver_time: int


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    shard: int = field(compare=False)
    body: Any = field(compare=False, default=None)
    label: str = field(compare=False, default='')


class EventQueue:
    """Events keyed by (time, insertion sequence)."""

    def __init__(self):
        self._heap: List[Event] = []
        self._counter = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, time: int, kind: EventKind, shard: int, body: Any = None, label: str = '') -> Event:
        event = Event(time=time, seq=self._counter, kind=kind, shard=shard, body=body, label=label)
        self._counter += 1
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None


class DelayModel:
    """Synchronous (delay = weight) or partial synchrony (uniform in [w, stretch * w])."""

    def __init__(self, mode: str = 'synchronous', stretch: float = 1, seed: int = 0):
        if stretch < 1:
            raise UsageError(f'Delay stretch must be >= 1, got {stretch}')
        self.mode = mode
        self.stretch = 1 if mode == 'synchronous' else stretch
        self._rng = np.random.default_rng(seed)

    def bounds(self, weight: int) -> Tuple[int, int]:
        return weight, int(self.stretch * weight)

    def delay(self, weight: int) -> int:
        low, high = self.bounds(weight)
        if high <= low:
            return low
        return int(self._rng.integers(low, high + 1))


@dataclass
class TxnRecord:
    """Lifecycle of one transaction as observed by the run."""

    txn_id: int
    home: int
    ts: int
    dests: List[int]
    write_dests: List[int]
    max_dist: int
    generated: int
    scheduled: Optional[int] = None
    decided: Optional[int] = None
    finalized: Optional[int] = None
    home_notified: Optional[int] = None
    outcome: Optional[str] = None
    color: Optional[int] = None
    leader_key: Optional[int] = None
    injected: bool = False
    last_state: str = 'generated'
    pending_dests: List[int] = field(default_factory=list)


@dataclass(frozen=True)
class ChainEntry:
    time: int
    txn_id: int
    leader_key: int
    batch_seq: Optional[int] = None


class RunTrace:
    """Every event, state transition and per-shard local blockchain of one run."""

    def __init__(self, meta: Optional[Dict[str, Any]] = None):
        self.meta: Dict[str, Any] = dict(meta or {})
        self.records: List[Dict[str, Any]] = []
        self.txns: Dict[int, TxnRecord] = {}
        self.chains: Dict[int, List[ChainEntry]] = defaultdict(list)
        self.message_counts: Counter = Counter()
        self.max_queue: Dict[int, int] = defaultdict(int)
        self.end_time = 0
        self.quiescent = True
        self.truncated = False

    def record(self, time: int, shard: int, kind: str, **data: Any) -> None:
        entry = {'t': time, 'shard': shard, 'kind': kind}
        entry.update(data)
        self.records.append(entry)
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug('[t=%d] %d %s %s', time, shard, kind, data)

    def txn_generated(self, txn, graph: ShardGraph, time: int, injected: bool = False) -> TxnRecord:
        rec = TxnRecord(
            txn_id=txn.id,
            home=txn.home,
            ts=txn.ts,
            dests=txn.dests,
            write_dests=txn.write_dests,
            max_dist=graph.max_distance(txn.home, txn.dests),
            generated=time,
            injected=injected,
            pending_dests=list(txn.dests),
        )
        self.txns[txn.id] = rec
        self.record(time, txn.home, 'generate', txn=txn.id, dests=txn.dests, ts=txn.ts)
        return rec

    def txn_scheduled(self, txn_id: int, time: int, color: int, leader_key: int) -> None:
        rec = self.txns[txn_id]
        if rec.scheduled is None:
            rec.scheduled = time
        rec.color = color
        rec.leader_key = leader_key
        rec.last_state = 'scheduled'

    def txn_decided(self, txn_id: int, time: int, outcome: str) -> None:
        rec = self.txns[txn_id]
        rec.decided = time
        rec.outcome = outcome
        rec.last_state = outcome

    def txn_applied(self, txn_id: int, dest: int, time: int) -> None:
        """A destination applied the decision; the last one finalizes the transaction."""
        rec = self.txns[txn_id]
        if dest in rec.pending_dests:
            rec.pending_dests.remove(dest)
        if not rec.pending_dests and rec.finalized is None:
            rec.finalized = time
            rec.last_state = f'{rec.outcome}:final'

    def txn_finalized_now(self, txn_id: int, time: int) -> None:
        rec = self.txns[txn_id]
        rec.pending_dests = []
        rec.finalized = time
        rec.last_state = f'{rec.outcome}:final'

    def txn_home_notified(self, txn_id: int, time: int) -> None:
        self.txns[txn_id].home_notified = time

    def append_chain(self, shard: int, entry: ChainEntry) -> None:
        self.chains[shard].append(entry)
        self.record(entry.time, shard, 'append', txn=entry.txn_id, leader=entry.leader_key,
                    seq=entry.batch_seq)

    def note_queue(self, shard: int, length: int) -> None:
        if length > self.max_queue[shard]:
            self.max_queue[shard] = length

    def to_lines(self) -> List[str]:
        return [json.dumps(r, sort_keys=True, separators=(',', ':'), default=str) for r in self.records]

    def hash(self) -> str:
        return trace_hash(self)


def trace_hash(trace: RunTrace) -> str:
    """SHA-256 over the canonical JSON lines of the trace."""
    digest = hashlib.sha256()
    for line in trace.to_lines():
        digest.update(line.encode('utf-8'))
        digest.update(b'\n')
    return digest.hexdigest()


def write_trace(trace: RunTrace, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for line in trace.to_lines():
            f.write(line + '\n')


def summarize_payload(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Scalar view of a payload for the trace."""
    summary = {}
    for key, value in payload.items():
        if hasattr(value, 'txn_id'):
            summary[key] = value.txn_id
        elif hasattr(value, 'id') and hasattr(value, 'accesses'):
            summary[key] = value.id
        elif hasattr(value, 'seq') and hasattr(value, 'entries'):
            summary[key] = {'seq': value.seq, 'txns': [e.txn_id for e in value.entries]}
        elif isinstance(value, (int, str, bool, float)) or value is None:
            summary[key] = value
        elif isinstance(value, (list, tuple)):
            summary[key] = list(value)
        elif isinstance(value, dict):
            summary[key] = {str(k): v for k, v in value.items()}
    return summary


class Engine:
    """Single-threaded event loop over one handler object.

    The handler provides ``on_message(message)`` and ``on_timer(shard, tag)``.
    Local actions are plain callables run at their scheduled time.
    """

    def __init__(self, graph: ShardGraph, delay_model: Optional[DelayModel] = None,
                 horizon: Optional[int] = None, trace: Optional[RunTrace] = None):
        self.graph = graph
        self.delay_model = delay_model or DelayModel()
        self.horizon = horizon
        self.trace = trace if trace is not None else RunTrace()
        self.now = 0
        self._queue = EventQueue()
        self._timers: Dict[Hashable, int] = {}
        self._handler = None
        self._drop_rules: List[Tuple[MessageKind, Callable[[Message], bool]]] = []
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    def attach(self, handler: Any) -> None:
        self._handler = handler

    def fault_drop(self, kind: MessageKind, predicate: Callable[[Message], bool] = lambda m: True) -> None:
        """Drop messages of ``kind`` matching ``predicate`` at send time (fault injection)."""
        self._drop_rules.append((kind, predicate))

    def send(self, src: int, dst: int, kind: MessageKind, **payload: Any) -> Message:
        weight = self.graph.distance(src, dst)
        delay = self.delay_model.delay(weight)
        message = Message(src=src, dst=dst, kind=kind, payload=payload,
                          send_time=self.now, deliver_time=self.now + delay)
        self.sent += 1
        self.trace.message_counts[kind.value] += 1
        summary = summarize_payload(payload)

        for drop_kind, predicate in self._drop_rules:
            if drop_kind == kind and predicate(message):
                self.dropped += 1
                self.trace.record(self.now, src, 'dropped', dst=dst, msg=kind.value, **summary)
                return message

        self.trace.record(self.now, src, 'send', dst=dst, msg=kind.value, at=message.deliver_time, **summary)
        self._queue.push(message.deliver_time, EventKind.MESSAGE, dst, message, kind.value)
        return message

    def set_timer(self, shard: int, fire_time: int, tag: Hashable) -> None:
        """Arm (or re-arm) the timer ``tag``; a re-armed tag fires only at its latest time."""
        if fire_time < self.now:
            raise UsageError(f'Timer {tag!r} at {fire_time} is in the past (now={self.now})')
        event = self._queue.push(fire_time, EventKind.TIMER, shard, tag, 'timer')
        self._timers[tag] = event.seq

    def cancel_timer(self, tag: Hashable) -> None:
        self._timers.pop(tag, None)

    def timer_armed(self, tag: Hashable) -> bool:
        return tag in self._timers

    def post_local(self, shard: int, action: Callable[[], None], label: str = 'local', delay: int = 0) -> None:
        if delay < 0:
            raise UsageError('Local work cannot be scheduled in the past')
        self._queue.push(self.now + delay, EventKind.LOCAL, shard, action, label)

    def _check_delay(self, message: Message) -> None:
        low, high = self.delay_model.bounds(self.graph.distance(message.src, message.dst))
        delay = message.deliver_time - message.send_time
        if not low <= delay <= high:
            raise ProtocolViolation(
                f'Message {message.kind.value} {message.src}->{message.dst} took {delay}, outside [{low}, {high}]',
                event=message,
            )

    def run(self) -> RunTrace:
        if self._handler is None:
            raise UsageError('No handler attached to the engine')

        while self._queue:
            event = self._queue.pop()
            if self.horizon is not None and event.time > self.horizon:
                self.trace.truncated = True
                self.trace.quiescent = False
                logger.warning('Run stopped at horizon %d with %d queued events', self.horizon, len(self._queue) + 1)
                break
            self.now = event.time

            try:
                if event.kind is EventKind.MESSAGE:
                    self._check_delay(event.body)
                    self.delivered += 1
                    self._handler.on_message(event.body)
                elif event.kind is EventKind.TIMER:
                    if self._timers.get(event.body) != event.seq:
                        continue
                    del self._timers[event.body]
                    self._handler.on_timer(event.shard, event.body)
                else:
                    event.body()
            except ProtocolViolation as e:
                if e.event is None:
                    e.event = event
                logger.error('Protocol violation at t=%d on shard %d: %s', self.now, event.shard, e)
                raise

        self.trace.end_time = self.now
        if not self.trace.truncated and self.sent != self.delivered + self.dropped:
            raise ProtocolViolation(f'{self.sent} messages sent but {self.delivered} delivered')
        return self.trace
