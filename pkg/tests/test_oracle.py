import pytest

from collsynth.oracle import Budget, OracleBudgetError, brute_force
from collsynth.schedule import verify
from collsynth.synthesis import make_instance
from collsynth.topology import build_dgx1, build_fully_connected, build_line, build_ring

from conftest import allgather_instance


def test_ring_ag_instance_found(ring_ag_inst):
    sched = brute_force(ring_ag_inst)
    assert sched is not None and verify(sched, ring_ag_inst) == []


def test_one_step_ring4_impossible(ring4):
    assert brute_force(allgather_instance(ring4, 1, 1, 1)) is None


def test_two_round_ring4_allgather(ring4):
    inst = allgather_instance(ring4, 1, 2, 2)
    sched = brute_force(inst)
    assert sched is not None and verify(sched, inst) == []
    assert sched.rounds == (1, 1)


def test_budget_refusals():
    with pytest.raises(OracleBudgetError, match="G\\*P"):
        brute_force(allgather_instance(build_dgx1(), 1, 2, 2))
    with pytest.raises(OracleBudgetError, match="S ="):
        brute_force(allgather_instance(build_ring(3), 1, 4, 4))
    with pytest.raises(OracleBudgetError, match="R - S"):
        brute_force(allgather_instance(build_ring(3), 1, 1, 4))
    big = Budget(max_cells=64, max_steps=3, max_slack=2)
    assert brute_force(allgather_instance(build_ring(4), 2, 2, 4), big) is not None


@pytest.mark.parametrize("topo", [build_ring(3), build_ring(4), build_fully_connected(3), build_line(2)])
def test_results_verify(topo):
    for kind in ("allgather", "broadcast", "gather"):
        for S in (1, 2, 3):
            for R in range(S, S + 3):
                inst = make_instance(kind, topo, 1, S, R, 0)
                sched = brute_force(inst)
                if sched is not None:
                    assert verify(sched, inst) == []


def test_broadcast_needs_rounds_on_line():
    line = build_line(2)
    assert brute_force(make_instance("broadcast", line, 2, 1, 1, 0)) is None
    assert brute_force(make_instance("broadcast", line, 2, 1, 2, 0)) is not None
