import json

import pytest
from hypothesis import given, settings, strategies as st

from collsynth.instance import SynthesisInstance
from collsynth.schedule import (
    Composition,
    ExecutionError,
    Schedule,
    ScheduleError,
    combining_instance,
    deserialize,
    execute,
    run,
    serialize,
    verify,
    verify_combining,
)
from collsynth.synthesis import invert_schedule, make_instance
from collsynth.topology import build_line, build_ring

from conftest import allgather_instance


def _kinds(violations):
    return {v.kind for v in violations}


def test_ring_ag_is_valid(ring_ag, ring_ag_inst):
    assert verify(ring_ag, ring_ag_inst) == []
    assert len(ring_ag.sends) == 12
    assert len(ring_ag.sends_at(0)) == 4 and len(ring_ag.sends_at(1)) == 8


def test_deleted_send_names_missing_pair(ring_ag, ring_ag_inst):
    broken = Schedule(2, ring_ag.rounds, ring_ag.sends - {(2, 3, 0, 1)})
    v = verify(broken, ring_ag_inst)
    assert _kinds(v) == {"postcondition"}
    assert v[0].chunk == 2 and "node 0" in v[0].detail


def test_step1_exchanges_moved_to_step0_break_bandwidth(ring_ag, ring_ag_inst):
    moved = frozenset((c, a, b, 0) for c, a, b, _ in ring_ag.sends)
    v = verify(Schedule(2, ring_ag.rounds, moved), ring_ag_inst)
    assert "bandwidth" in _kinds(v)
    bw = [x for x in v if x.kind == "bandwidth"]
    assert all(x.step == 0 for x in bw)


def test_forwarding_needs_a_previous_step(ring_ag_inst):
    # node 1 relays chunk 0 in the same step it receives it
    sched = Schedule(2, (1, 2), frozenset({(0, 0, 1, 0), (0, 1, 2, 0)}))
    assert "source-missing" in _kinds(verify(sched, ring_ag_inst))


def test_duplicate_receipt(ring_ag, ring_ag_inst):
    extra = ring_ag.sends | {(0, 2, 1, 1)}
    v = verify(Schedule(2, ring_ag.rounds, extra), ring_ag_inst)
    assert "duplicate-receipt" in _kinds(v)
    again = Schedule(2, (1, 2), frozenset({(0, 0, 1, 0), (0, 0, 1, 1)}))
    assert "duplicate-receipt" in _kinds(verify(again, ring_ag_inst))


def test_structural_violations(ring_ag_inst):
    sched = Schedule(2, (1, 2), frozenset({(9, 0, 1, 0), (0, 0, 2, 0), (0, 0, 0, 0), (0, 0, 1, 5)}))
    kinds = _kinds(verify(sched, ring_ag_inst))
    assert {"chunk-range", "no-link", "self-send", "step-range"} <= kinds
    assert "rounds" in _kinds(verify(Schedule(2, (1, 1), frozenset()), ring_ag_inst))
    assert "steps" in _kinds(verify(Schedule(1, (3,), frozenset()), ring_ag_inst))


def test_run_is_monotone(ring_ag, ring_ag_inst):
    states = run(ring_ag, ring_ag_inst.pre)
    assert len(states) == 3 and states[0] == ring_ag_inst.pre
    assert all(a <= b for a, b in zip(states, states[1:]))
    assert states[-1] == ring_ag_inst.post


def test_inverted_two_node_broadcast_reduces():
    t = build_line(2)
    bcast = make_instance("broadcast", t, 1, 1, 1, root=0)
    sched = Schedule(1, (1,), frozenset({(0, 0, 1, 0)}))
    assert verify(sched, bcast) == []
    red = invert_schedule(sched)
    assert red.sends == {(0, 1, 0, 0)}
    assert verify_combining(red, combining_instance(bcast)) == []
    buffers = execute(red, combining_instance(bcast), seed=3, combining=True)
    assert buffers.slots[0][0] is not None


def test_inverted_ring_ag_reducescatter(ring_ag, ring_ag_inst):
    rs = invert_schedule(ring_ag)
    inst = combining_instance(ring_ag_inst)
    assert verify_combining(rs, inst) == []
    execute(rs, inst, seed=1, combining=True)


def test_duplicated_contribution_flagged(ring_ag, ring_ag_inst):
    rs = invert_schedule(ring_ag)
    assert (0, 3, 0, 1) not in rs.sends
    doubled = Schedule(2, rs.rounds, rs.sends | {(0, 3, 0, 1)})
    v = verify_combining(doubled, combining_instance(ring_ag_inst))
    assert "multiplicity" in _kinds(v)
    with pytest.raises(ExecutionError):
        execute(doubled, combining_instance(ring_ag_inst), combining=True, check=False)


def test_execute_copies_payload():
    inst = allgather_instance(build_line(2), 1, 1, 1)
    sched = Schedule(1, (1,), frozenset({(0, 0, 1, 0), (1, 1, 0, 0)}))
    buffers = execute(sched, inst, seed=7)
    assert buffers.slots[1][0] == buffers.slots[0][0] is not None
    assert buffers.digest() == execute(sched, inst, seed=7).digest()
    assert buffers.digest() != execute(sched, inst, seed=8).digest()


def test_execute_reduce_adds():
    t = build_line(2)
    inst = SynthesisInstance(1, 1, 1, t, frozenset({(0, 0), (0, 1)}), frozenset({(0, 0)}))
    sched = Schedule(1, (1,), frozenset({(0, 1, 0, 0)}))
    out = execute(sched, inst, seed=0, combining=True)
    import random

    rng = random.Random(0)
    a, b = rng.randrange(-(2**31), 2**31), rng.randrange(-(2**31), 2**31)
    assert out.slots[0][0] == a + b


def test_execute_refuses_invalid(ring_ag, ring_ag_inst):
    broken = Schedule(2, ring_ag.rounds, ring_ag.sends - {(2, 3, 0, 1)})
    with pytest.raises(ExecutionError, match="refusing"):
        execute(broken, ring_ag_inst)
    with pytest.raises(ExecutionError):
        execute(broken, ring_ag_inst, check=False)


def test_allreduce_composition_on_ring(ring_ag, ring_ag_inst):
    comp = Composition(invert_schedule(ring_ag), ring_ag)
    assert (comp.num_steps, comp.total_rounds) == (4, 6)
    out = execute(comp, ring_ag_inst, seed=11)
    assert all(row == out.slots[0] for row in out.slots)


def test_serialize_round_trip(ring_ag, ring4):
    text = serialize(ring_ag, collective="allgather", topology=ring4, G=4, C=1)
    assert text == serialize(ring_ag, collective="allgather", topology=ring4, G=4, C=1)
    doc = deserialize(text)
    assert doc.schedule == ring_ag
    assert (doc.collective, doc.topology_name, doc.G, doc.C, doc.P) == ("allgather", "ring:4", 4, 1, 4)
    assert doc.check_topology(ring4) == []
    assert doc.check_topology(build_ring(4, bw=2))
    data = json.loads(text)
    assert data["sends"] == sorted(data["sends"], key=lambda s: (s[3], s[0], s[1], s[2]))
    assert data["R"] == 3 and data["S"] == 2


def test_serialize_composition(ring_ag, ring4):
    comp = Composition(invert_schedule(ring_ag), ring_ag)
    text = serialize(comp, collective="allreduce", topology=ring4, G=4, C=4)
    assert deserialize(text).schedule == comp


@pytest.mark.parametrize("patch,match", [
    (lambda d: d["sends"].append([0, 0, 1, 2]), "outside"),
    (lambda d: d.update(R=9), "disagrees"),
    (lambda d: d.update(rounds=[1]), "rounds"),
    (lambda d: d["sends"].append(d["sends"][0]), "duplicate"),
    (lambda d: d["sends"].append([0, 0, 1]), "4 fields"),
    (lambda d: d["sends"].append([7, 0, 1, 0]), "out of range"),
    (lambda d: d.pop("collective"), "malformed"),
])
def test_schema_errors(ring_ag, ring4, patch, match):
    data = json.loads(serialize(ring_ag, collective="allgather", topology=ring4, G=4, C=1))
    patch(data)
    with pytest.raises(ScheduleError, match=match):
        deserialize(json.dumps(data))


def test_not_json():
    with pytest.raises(ScheduleError):
        deserialize("{nope")


def test_round_count_must_match_steps():
    with pytest.raises(ScheduleError):
        Schedule(2, (1,), frozenset())


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_any_run_is_monotone(data):
    t = build_ring(4)
    inst = allgather_instance(t, 1, 2, 3)
    sends = data.draw(st.frozensets(
        st.tuples(st.integers(0, 3), st.integers(0, 3), st.integers(0, 3), st.integers(0, 1)), max_size=12))
    states = run(Schedule(2, (1, 2), sends), inst.pre)
    assert all(a <= b for a, b in zip(states, states[1:]))
