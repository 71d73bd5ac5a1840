"""Randomized agreement between the verifier and the executor, and inversion invariants."""

from hypothesis import given, settings, strategies as st

from collsynth.schedule import ExecutionError, Schedule, combining_instance, execute, verify, verify_combining
from collsynth.synthesis import invert_schedule, make_instance, reverse_topology
from collsynth.topology import build_fully_connected, build_line, build_ring

from conftest import ring_allgather_schedule

TOPOLOGIES = [build_ring(4), build_ring(3), build_line(3), build_fully_connected(3)]


def _executes(schedule, inst, combining=False) -> bool:
    try:
        execute(schedule, inst, seed=0, combining=combining, check=False)
    except ExecutionError:
        return False
    return True


@st.composite
def random_schedules(draw):
    topo = draw(st.sampled_from(TOPOLOGIES))
    kind = draw(st.sampled_from(["allgather", "broadcast", "gather"]))
    S = draw(st.integers(1, 3))
    rounds = tuple(draw(st.lists(st.integers(1, 2), min_size=S, max_size=S)))
    inst = make_instance(kind, topo, 1, S, sum(rounds), 0)
    P = topo.num_nodes
    links = sorted(topo.links)
    sends = draw(st.frozensets(
        st.tuples(st.integers(0, inst.G - 1), st.sampled_from(links), st.integers(0, S - 1)), max_size=3 * P))
    return Schedule(S, rounds, frozenset((c, a, b, t) for c, (a, b), t in sends)), inst


@settings(max_examples=300, deadline=None)
@given(random_schedules())
def test_verifier_agrees_with_executor(case):
    schedule, inst = case
    assert (verify(schedule, inst) == []) == _executes(schedule, inst)


@settings(max_examples=200, deadline=None)
@given(random_schedules())
def test_combining_verifier_agrees_with_executor(case):
    schedule, inst = case
    reduce_inst = combining_instance(inst)
    assert (verify_combining(schedule, reduce_inst) == []) == _executes(schedule, reduce_inst, combining=True)


@settings(max_examples=200, deadline=None)
@given(random_schedules())
def test_inversion_preserves_sends_and_validity(case):
    schedule, inst = case
    inverted = invert_schedule(schedule)
    assert len(inverted.sends) == len(schedule.sends)
    assert sum(inverted.rounds) == sum(schedule.rounds)
    assert invert_schedule(inverted) == schedule
    # the topologies here are symmetric, so the reversed instance has the same links
    assert reverse_topology(inst.topology).links == inst.topology.links
    if verify(schedule, inst) == []:
        assert verify_combining(inverted, combining_instance(inst)) == []


def test_ring_ag_inverse_is_a_reducescatter():
    ring_ag = ring_allgather_schedule()
    inst = make_instance("allgather", build_ring(4), 1, 2, 3)
    assert verify_combining(invert_schedule(ring_ag), combining_instance(inst)) == []
