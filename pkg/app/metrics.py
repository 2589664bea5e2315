"""Post-run analysis: snapshot ratios, safety and liveness verdicts, summaries and CSV output."""
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
import pandas as pd

from .oracle import STATEFUL, STATELESS, lower_bound_tau, snapshot_at
from .simcore import RunTrace

logger = logging.getLogger(__name__)

TXN_COLUMNS = ['txn_id', 'home', 'ts', 'schedule_time', 'finalize_time', 'outcome', 'n_dests', 'max_dist']
SNAPSHOT_COLUMNS = ['t', 'n_pending', 'l', 'd_hat', 't_prime', 'lb', 'ratio']
SWEEP_COLUMNS = [
    'algorithm', 'topology', 's', 'k_max', 'stretch', 'seed', 'txns', 'committed', 'aborted',
    'mean_latency', 'p99_latency', 'makespan', 'max_ratio', 'mean_ratio', 'safety', 'liveness',
]

LB_NOTE = 'ratio = (t_prime - t) / lb where lb is a certified lower bound on the optimal span; ratios over-estimate'


@dataclass
class Verdict:
    name: str
    passed: bool = True
    message: str = ''
    details: Dict[str, Any] = field(default_factory=dict)

    def fail(self, message: str, **details: Any) -> 'Verdict':
        self.passed = False
        self.message = message
        self.details.update(details)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class SnapshotRecord:
    t: int
    n_pending: int
    l: int  # noqa: E741
    d_hat: int
    t_prime: int
    lb: int
    ratio: float


def lb_mode(stateful: bool) -> str:
    return STATEFUL if stateful else STATELESS


def snapshot_times(trace: RunTrace, horizon: Optional[int] = None) -> List[int]:
    """Every max(1, horizon/50) ticks up to the end of the run, plus every generation time."""
    end = trace.end_time
    step = max(1, (horizon if horizon is not None else end) // 50)
    times = set(range(0, end + 1, step))
    times.update(rec.generated for rec in trace.txns.values())
    return sorted(t for t in times if t <= end)


def snapshot_ratio(trace: RunTrace, t: int, mode: str = STATELESS) -> Optional[SnapshotRecord]:
    """Measured span of the transactions pending at t over their certified lower bound."""
    snapshot = snapshot_at(trace, t)
    if snapshot.empty:
        return None
    finals = [trace.txns[i].finalized for i in snapshot.txn_ids]
    if any(f is None for f in finals):
        logger.warning('Snapshot at t=%d has unfinalized transactions; skipped', t)
        return None
    t_prime = max(finals)
    lb = lower_bound_tau(snapshot, mode)
    return SnapshotRecord(
        t=t,
        n_pending=len(snapshot.txn_ids),
        l=snapshot.max_load,
        d_hat=snapshot.d_hat,
        t_prime=t_prime,
        lb=lb,
        ratio=(t_prime - t) / lb,
    )


def snapshot_records(trace: RunTrace, stateful: bool, horizon: Optional[int] = None,
                     times: Optional[Iterable[int]] = None) -> List[SnapshotRecord]:
    mode = lb_mode(stateful)
    records = []
    for t in (times if times is not None else snapshot_times(trace, horizon)):
        record = snapshot_ratio(trace, t, mode)
        if record is None:
            continue
        if record.ratio < 1:
            logger.warning('Snapshot at t=%d has ratio %.3f below 1 (lb=%d)', t, record.ratio, record.lb)
        records.append(record)
    return records


def lb_violations(records: Iterable[SnapshotRecord]) -> int:
    return sum(1 for r in records if r.ratio < 1)


def makespan_bound_violations(records: Iterable[SnapshotRecord], k: int, d: int) -> List[SnapshotRecord]:
    """Snapshots whose span exceeds (k*l + 1) * 3d + 4d."""
    return [r for r in records if r.t_prime - r.t > (k * r.l + 1) * 3 * d + 4 * d]


def verify_safety(trace: RunTrace) -> Verdict:
    """Conflicting committed transactions appear in the same relative order on every shared chain."""
    verdict = Verdict('safety')
    positions: Dict[int, Dict[int, int]] = {}
    for shard, chain in sorted(trace.chains.items()):
        pos: Dict[int, int] = {}
        for index, entry in enumerate(chain):
            if entry.txn_id in pos:
                return verdict.fail(f'Txn {entry.txn_id} appended twice on shard {shard}',
                                    shard=shard, txn=entry.txn_id)
            pos[entry.txn_id] = index
        positions[shard] = pos

    for rec in trace.txns.values():
        if rec.outcome != 'commit' or rec.finalized is None:
            continue
        missing = [d for d in rec.dests if rec.txn_id not in positions.get(d, {})]
        if missing:
            return verdict.fail(f'Committed txn {rec.txn_id} missing from shards {missing}',
                                txn=rec.txn_id, shards=missing)

    first_order: Dict[Tuple[int, int], Tuple[int, int]] = {}
    for shard, pos in sorted(positions.items()):
        ordered = sorted(pos, key=pos.get)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                pair = (min(a, b), max(a, b))
                if not _conflicting(trace, a, b):
                    continue
                seen = first_order.setdefault(pair, (shard, a))
                if seen[1] != a:
                    return verdict.fail(
                        f'Txns {pair[0]} and {pair[1]} commit in opposite orders on shards {seen[0]} and {shard}',
                        pair=list(pair),
                        orders={str(seen[0]): [b, a], str(shard): [a, b]},
                    )
    verdict.details['pairs_checked'] = len(first_order)
    return verdict


def _conflicting(trace: RunTrace, a: int, b: int) -> bool:
    ra, rb = trace.txns[a], trace.txns[b]
    shared = set(ra.dests) & set(rb.dests)
    return any(d in ra.write_dests or d in rb.write_dests for d in shared)


def verify_liveness(trace: RunTrace) -> Verdict:
    """Every generated transaction reached a final state before the run ended."""
    verdict = Verdict('liveness')
    stuck = {str(rec.txn_id): rec.last_state for rec in trace.txns.values() if rec.finalized is None}
    if stuck:
        return verdict.fail(f'{len(stuck)} transactions never finalized', stuck=stuck)
    if trace.truncated:
        return verdict.fail('Run stopped at the horizon before quiescence')
    return verdict


def verify_one_live(trace: RunTrace) -> Verdict:
    """Each home holds at most one live generated transaction at a time."""
    verdict = Verdict('one_live')
    by_home: Dict[int, List] = defaultdict(list)
    for rec in trace.txns.values():
        if not rec.injected:
            by_home[rec.home].append(rec)
    for home, recs in sorted(by_home.items()):
        recs.sort(key=lambda r: (r.generated, r.txn_id))
        for prev, nxt in zip(recs, recs[1:]):
            if prev.home_notified is None or nxt.generated < prev.home_notified:
                return verdict.fail(f'Home {home} generated txn {nxt.txn_id} while {prev.txn_id} was live',
                                    home=home, txns=[prev.txn_id, nxt.txn_id])
    return verdict


def _replay_queues(trace: RunTrace, preempt: bool) -> Optional[Tuple[str, Dict[str, Any]]]:
    """Rebuild which subtransactions sit at each destination and check every pick against them.

    A pick must not pass over a smaller key present at the shard. A
    smaller key arriving while another subtransaction is in flight must
    make the shard ask its leader to ignore the in-flight one before that
    one is released.
    """
    present: Dict[int, Dict[Tuple[int, int], list]] = defaultdict(dict)
    inflight: Dict[int, Tuple[Tuple[int, int], list]] = {}
    overtaken: Dict[int, Dict[str, Any]] = {}
    stalled: Set[int] = set()

    for rec in trace.records:
        kind, shard = rec['kind'], rec['shard']
        if kind in ('enqueue', 'reinsert'):
            ident = (rec['txn'], rec['epoch'])
            if kind == 'reinsert':
                inflight.pop(shard, None)
                overtaken.pop(shard, None)
                stalled.discard(shard)
            present[shard][ident] = list(rec['key'])
            current = inflight.get(shard)
            if preempt and current is not None and shard not in stalled and list(rec['key']) < current[1]:
                overtaken.setdefault(shard, rec)
        elif kind == 'dequeue':
            present[shard].pop((rec['txn'], rec['epoch']), None)
        elif kind == 'pick':
            ident, key = (rec['txn'], rec['epoch']), list(rec['key'])
            present[shard].pop(ident, None)
            smaller = sorted(k for k in present[shard].values() if k < key)
            if smaller:
                return (f'Shard {shard} picked txn {rec["txn"]} at t={rec["t"]} ahead of the smaller key {smaller[0]}',
                        {'record': rec, 'smaller': smaller[0]})
            inflight[shard] = (ident, key)
        elif kind == 'ignore':
            overtaken.pop(shard, None)
            stalled.add(shard)
        elif kind in ('release', 'cancel_release'):
            if kind == 'release' and shard in overtaken:
                arrival = overtaken[shard]
                return (f'Shard {shard} kept txn {rec["txn"]} in flight after the smaller key of txn '
                        f'{arrival["txn"]} arrived at t={arrival["t"]}', {'record': rec, 'arrival': arrival})
            inflight.pop(shard, None)
            overtaken.pop(shard, None)
            stalled.discard(shard)
    return None


def verify_ordering(trace: RunTrace, preempt: bool = True) -> Verdict:
    """Destinations process subtransactions in key order; batches keep their leader's color order."""
    verdict = Verdict('ordering')
    failure = _replay_queues(trace, preempt)
    if failure is not None:
        message, details = failure
        return verdict.fail(message, **details)

    for shard, chain in sorted(trace.chains.items()):
        last: Dict[int, Tuple[int, int]] = {}
        for entry in chain:
            if entry.batch_seq is None:
                continue
            color = trace.txns[entry.txn_id].color
            previous = last.get(entry.leader_key)
            if previous is not None:
                seq, prev_color = previous
                if entry.batch_seq < seq or (entry.batch_seq == seq and color < prev_color):
                    return verdict.fail(f'Shard {shard} appended txn {entry.txn_id} out of batch order',
                                        shard=shard, txn=entry.txn_id)
            last[entry.leader_key] = (entry.batch_seq, color)
    return verdict


def control_intervals(trace: RunTrace) -> Dict[int, List[Tuple[float, float]]]:
    intervals: Dict[int, List[Tuple[float, float]]] = defaultdict(list)
    opened: Dict[int, float] = {}
    for rec in trace.records:
        if rec['kind'] != 'control':
            continue
        cluster = rec['cluster']
        if rec['held']:
            opened[cluster] = rec['t']
        elif cluster in opened:
            intervals[cluster].append((opened.pop(cluster), rec['t']))
    for cluster, start in opened.items():
        intervals[cluster].append((start, float('inf')))
    return intervals


def verify_control(trace: RunTrace, hierarchy) -> Verdict:
    """No two overlapping clusters hold schedule control over intersecting time intervals."""
    verdict = Verdict('control')
    intervals = control_intervals(trace)
    clusters = hierarchy.clusters
    for i, a in enumerate(clusters):
        for b in clusters[i + 1:]:
            if not (a.members & b.members):
                continue
            for s1, e1 in intervals.get(a.id, []):
                for s2, e2 in intervals.get(b.id, []):
                    if s1 < e2 and s2 < e1:
                        return verdict.fail(f'Clusters {a.id} and {b.id} both held control around t={max(s1, s2)}',
                                            clusters=[a.id, b.id])
    return verdict


def verify_cadence(trace: RunTrace) -> Verdict:
    """Triggers of a busy leader are at most 4*lam apart; a round processes at most lam colors."""
    verdict = Verdict('cadence')
    last_trigger: Dict[int, Dict[str, Any]] = {}
    for rec in trace.records:
        kind = rec['kind']
        if kind == 'leader_idle':
            last_trigger.pop(rec['leader'], None)
        elif kind == 'trigger':
            previous = last_trigger.get(rec['leader'])
            if previous is not None and rec['t'] - previous['t'] > 4 * rec['lam']:
                return verdict.fail(f'Leader {rec["leader"]} triggered at t={previous["t"]} and t={rec["t"]}, '
                                    f'more than 4*{rec["lam"]} apart', leader=rec['leader'])
            last_trigger[rec['leader']] = rec
        elif kind == 'state_ready' and len(rec['colors']) > rec['lam']:
            return verdict.fail(f'Leader {rec["leader"]} processed {len(rec["colors"])} colors with lam={rec["lam"]}',
                                leader=rec['leader'])
    return verdict


def summarize(trace: RunTrace) -> Dict[str, Any]:
    """Latency, throughput and message aggregates of one run."""
    records = list(trace.txns.values())
    final = [r for r in records if r.finalized is not None]
    latencies = np.array([r.finalized - r.generated for r in final], dtype=float)
    committed = sum(1 for r in final if r.outcome == 'commit')
    aborted = sum(1 for r in final if r.outcome == 'abort')
    makespan = (max(r.finalized for r in final) - min(r.generated for r in records)) if final else 0

    def stat(fn) -> Optional[float]:
        return float(fn(latencies)) if latencies.size else None

    return {
        'txns': len(records),
        'committed': committed,
        'aborted': aborted,
        'unfinalized': len(records) - len(final),
        'mean_latency': stat(np.mean),
        'median_latency': stat(np.median),
        'p99_latency': stat(lambda a: np.percentile(a, 99)),
        'throughput': committed / trace.end_time if trace.end_time else float(committed),
        'makespan': makespan,
        'end_time': trace.end_time,
        'messages': dict(sorted(trace.message_counts.items())),
        'total_messages': sum(trace.message_counts.values()),
        'max_queue': max(trace.max_queue.values(), default=0),
    }


def txn_frame(trace: RunTrace) -> pd.DataFrame:
    rows = [
        [r.txn_id, r.home, r.ts, r.scheduled, r.finalized, r.outcome, len(r.dests), r.max_dist]
        for r in sorted(trace.txns.values(), key=lambda r: r.txn_id)
    ]
    return pd.DataFrame(rows, columns=TXN_COLUMNS)


def snapshot_frame(records: Iterable[SnapshotRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records], columns=SNAPSHOT_COLUMNS)


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def write_txn_csv(trace: RunTrace, path: Path) -> Path:
    return _write_frame(txn_frame(trace), path)


def write_snapshot_csv(records: Iterable[SnapshotRecord], path: Path) -> Path:
    return _write_frame(snapshot_frame(records), path)


def write_sweep_csv(rows: Iterable[Dict[str, Any]], path: Path) -> Path:
    return _write_frame(pd.DataFrame(list(rows), columns=SWEEP_COLUMNS), path)
