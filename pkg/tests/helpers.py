"""Transaction builders and a bare scheduler runner shared by the test modules."""
from pathlib import Path
from typing import Any, Iterable, Optional

from app.conflict import Access, Transaction, Write
from app.cover import CoverHierarchy
from app.schedulers import SchedulerParams
from app.shard_graph import ShardGraph
from app.simcore import DelayModel, Engine, RunTrace
from app.workload import AccountUniverse

ROOT = Path(__file__).resolve().parent.parent
DATUM = ROOT / 'datum'

# Line S1..S8 with one heavy edge between S4 and S5
HEAVY_LINE_EDGES = [[0, 1, 1], [1, 2, 2], [2, 3, 1], [3, 4, 8], [4, 5, 1], [5, 6, 1], [6, 7, 1]]


def heavy_line_records():
    records = [{'id': i, 'q': 0, 'r': 0, 'members': [i], 'leader': i} for i in range(8)]
    records += [
        {'id': 8, 'q': 1, 'r': 0, 'members': [0, 1], 'leader': 0},
        {'id': 9, 'q': 1, 'r': 0, 'members': [2, 3], 'leader': 2},
        {'id': 10, 'q': 1, 'r': 0, 'members': [4, 5], 'leader': 4},
        {'id': 11, 'q': 1, 'r': 0, 'members': [6, 7], 'leader': 6},
        {'id': 12, 'q': 2, 'r': 0, 'members': [0, 1, 2, 3], 'leader': 2},
        {'id': 13, 'q': 2, 'r': 0, 'members': [4, 5, 6, 7], 'leader': 5},
        {'id': 14, 'q': 3, 'r': 0, 'members': list(range(8)), 'leader': 3},
    ]
    return records


def transfer(txn_id: int, home: int, credit: int, debit: int, amount: int = 5, ts: int = 0,
             credit_account: int = 0, debit_account: int = 1) -> Transaction:
    """Move ``amount`` from an account on ``debit`` to an account on ``credit``."""
    return Transaction(id=txn_id, ts=ts, home=home, accesses={
        credit: Access(writes=(Write(f'{credit}.{credit_account}', amount),)),
        debit: Access(writes=(Write(f'{debit}.{debit_account}', -amount, min_balance=amount),)),
    })


def reader(txn_id: int, home: int, shards: Iterable[int], ts: int = 0) -> Transaction:
    return Transaction(id=txn_id, ts=ts, home=home, accesses={
        shard: Access(reads=frozenset({f'{shard}.0'})) for shard in shards
    })


def make_scheduler(cls, graph: ShardGraph, hierarchy: Optional[CoverHierarchy] = None,
                   horizon: int = 10000, **params: Any):
    engine = Engine(graph, DelayModel(), horizon, RunTrace())
    universe = AccountUniverse(graph.s, 4, 100)
    return cls(engine, graph, universe, SchedulerParams(**params), hierarchy=hierarchy)


def run_scheduler(cls, graph: ShardGraph, txns, hierarchy: Optional[CoverHierarchy] = None,
                  horizon: int = 10000, **params: Any):
    """Run a scheduler over injected transactions only; returns (scheduler, trace)."""
    scheduler = make_scheduler(cls, graph, hierarchy, horizon, **params)
    scheduler.start(txns)
    return scheduler, scheduler.engine.run()


def admit(scheduler, leader, *txns: Transaction) -> None:
    """Hand transactions straight to a stateless leader, as if their submissions just arrived."""
    for txn in txns:
        if txn.id not in scheduler.trace.txns:
            scheduler.trace.txn_generated(txn, scheduler.graph, scheduler.now)
        scheduler.on_leader_receive(leader, txn)
