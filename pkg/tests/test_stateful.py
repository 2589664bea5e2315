import pytest

from app.errors import ProtocolViolation
from app.metrics import verify_cadence, verify_control, verify_liveness, verify_safety
from app.schedulers import ABORT, COMMIT, SINGLE_LEADER, MultiLeaderStateful, PrecommitBatch, SingleLeaderStateful
from app.simcore import Message, MessageKind

from .helpers import make_scheduler, run_scheduler, transfer


def _message(kind, src, dst, **payload):
    return Message(src=src, dst=dst, kind=kind, payload=payload, send_time=0, deliver_time=1)


def _batch(seq, dest=1):
    return PrecommitBatch(dest=dest, leader_key=SINGLE_LEADER, leader=0, seq=seq, entries=())


def _kinds(trace, kind):
    return [r for r in trace.records if r['kind'] == kind]


def test_single_leader_rounds_precommit_one_color_each(clique3):
    a = transfer(0, home=1, credit=1, debit=2)
    b = transfer(1, home=2, credit=2, debit=1, amount=3, credit_account=1, debit_account=1)
    scheduler, trace = run_scheduler(SingleLeaderStateful, clique3, [a, b])

    assert [r['t'] for r in _kinds(trace, 'trigger')] == [1, 3]
    assert [r['colors'] for r in _kinds(trace, 'state_ready')] == [[0], [1]]
    assert trace.txns[0].outcome == trace.txns[1].outcome == COMMIT
    assert (trace.txns[0].finalized, trace.txns[1].finalized) == (5, 7)
    for shard in (1, 2):
        assert [e.txn_id for e in trace.chains[shard]] == [0, 1]
        assert [e.batch_seq for e in trace.chains[shard]] == [0, 1]

    assert scheduler.dests[1].accounts['1.0'] == 105
    assert scheduler.dests[1].accounts['1.1'] == 97
    assert scheduler.dests[2].accounts['2.1'] == 98
    assert _kinds(trace, 'leader_idle')[-1]['t'] == 5
    for verdict in (verify_safety(trace), verify_liveness(trace), verify_cadence(trace)):
        assert verdict.passed, verdict.message


def test_state_includes_unappended_precommits(clique3):
    # the second round reads shard 2 before the first batch is appended there
    a = transfer(0, home=1, credit=1, debit=2, amount=60)
    b = transfer(1, home=2, credit=1, debit=2, amount=60, credit_account=2)
    _, trace = run_scheduler(SingleLeaderStateful, clique3, [a, b])
    assert trace.txns[0].outcome == COMMIT
    assert trace.txns[1].outcome == ABORT
    assert verify_safety(trace).passed


def test_stateful_abort_is_final_at_the_leader(clique3):
    a = transfer(0, home=1, credit=1, debit=2)
    b = transfer(1, home=2, credit=2, debit=1, amount=150)
    scheduler, trace = run_scheduler(SingleLeaderStateful, clique3, [a, b])

    assert trace.txns[1].outcome == ABORT
    assert trace.txns[1].decided == trace.txns[1].finalized == 5
    assert [e.txn_id for e in trace.chains[1]] == [0]
    assert [e.txn_id for e in trace.chains[2]] == [0]
    assert scheduler.dests[2].accounts['2.0'] == 100
    assert verify_safety(trace).passed and verify_liveness(trace).passed


def test_explicit_lambda_takes_two_colors_per_round(clique3):
    a = transfer(0, home=1, credit=1, debit=2)
    b = transfer(1, home=2, credit=2, debit=1, amount=3, credit_account=1, debit_account=1)
    _, trace = run_scheduler(SingleLeaderStateful, clique3, [a, b], lam=2)
    assert [r['colors'] for r in _kinds(trace, 'state_ready')] == [[0, 1]]
    assert [e.txn_id for e in trace.chains[1]] == [0, 1]
    assert verify_cadence(trace).passed


def test_state_response_for_another_round_is_rejected(clique3):
    scheduler = make_scheduler(SingleLeaderStateful, clique3)
    message = _message(MessageKind.STATE_RESPONSE, 1, 0, leader_key=SINGLE_LEADER, round=3,
                       balances={}, applied=-1)
    with pytest.raises(ProtocolViolation):
        scheduler._on_state_response(message)


def test_duplicate_batch_is_rejected(clique3):
    scheduler = make_scheduler(SingleLeaderStateful, clique3)
    scheduler._on_precommit_batch(_message(MessageKind.PRECOMMIT_BATCH, 0, 1, batch=_batch(0)))
    with pytest.raises(ProtocolViolation, match='delivered twice'):
        scheduler._on_precommit_batch(_message(MessageKind.PRECOMMIT_BATCH, 0, 1, batch=_batch(0)))


def test_out_of_order_batch_waits_for_its_predecessor(clique3):
    scheduler = make_scheduler(SingleLeaderStateful, clique3)
    dest = scheduler.dests[1]
    scheduler._on_precommit_batch(_message(MessageKind.PRECOMMIT_BATCH, 0, 1, batch=_batch(1)))
    assert scheduler.trace.records[-1]['kind'] == 'batch_buffered'
    assert scheduler.trace.records[-1]['expected'] == 0
    assert not dest.ready

    scheduler._on_precommit_batch(_message(MessageKind.PRECOMMIT_BATCH, 0, 1, batch=_batch(0)))
    assert [b.seq for b in dest.ready] == [0, 1]
    assert dest.expected[SINGLE_LEADER] == 2


def test_multi_leader_starts_with_base_clusters_in_control(heavy_line_graph, heavy_line_hierarchy):
    scheduler = make_scheduler(MultiLeaderStateful, heavy_line_graph, heavy_line_hierarchy)
    scheduler.start([])
    held = [r['cluster'] for r in scheduler.trace.records if r['kind'] == 'control' and r['held']]
    assert held == list(range(8))


def test_multi_leader_acquires_control_before_scheduling(heavy_line_graph, heavy_line_hierarchy):
    txns = [transfer(0, home=2, credit=2, debit=3), transfer(1, home=4, credit=4, debit=7)]
    _, trace = run_scheduler(MultiLeaderStateful, heavy_line_graph, txns, heavy_line_hierarchy)

    assert trace.txns[0].leader_key == 9
    assert trace.txns[1].leader_key == 13
    assert trace.txns[0].outcome == trace.txns[1].outcome == COMMIT
    acquired = {r['cluster'] for r in _kinds(trace, 'acquire')}
    assert acquired == {9, 13}
    gained = [r for r in _kinds(trace, 'control') if r['held'] and r['cluster'] == 9]
    first_trigger = next(r for r in _kinds(trace, 'trigger') if r['leader'] == 9)
    assert gained[0]['t'] <= first_trigger['t']
    for verdict in (verify_safety(trace), verify_liveness(trace), verify_control(trace, heavy_line_hierarchy)):
        assert verdict.passed, verdict.message


def test_request_is_not_forwarded_back_to_its_requester(heavy_line_graph, heavy_line_hierarchy):
    scheduler = make_scheduler(MultiLeaderStateful, heavy_line_graph, heavy_line_hierarchy)
    base = scheduler.leaders[2]
    scheduler._grant(base, 9, [2])
    assert base.holder[2] == 9 and scheduler.engine.sent == 1

    # cluster 9 asked before the grant reached it
    scheduler._on_control_request(_message(MessageKind.CONTROL_REQUEST, 2, 2, requester=9, shards=[2], target=2))
    stale = scheduler.trace.records[-1]
    assert (stale['kind'], stale['cluster'], stale['requester'], stale['shards']) == ('control_stale', 2, 9, [2])
    assert scheduler.engine.sent == 1


def test_request_that_loops_back_to_its_requester_is_dropped(heavy_line_graph, heavy_line_hierarchy):
    scheduler = make_scheduler(MultiLeaderStateful, heavy_line_graph, heavy_line_hierarchy)
    scheduler._on_control_request(_message(MessageKind.CONTROL_REQUEST, 2, 2, requester=9, shards=[2], target=9))
    assert scheduler.trace.records[-1]['kind'] == 'control_stale'
    assert scheduler.engine.sent == 0
    assert not scheduler.leaders[9].requests
