import shutil

import pytest

from collsynth.collectives import make_spec
from collsynth.instance import SynthesisInstance
from collsynth.schedule import Schedule
from collsynth.topology import build_ring

HAVE_SOLVER = shutil.which("z3") is not None
requires_solver = pytest.mark.skipif(not HAVE_SOLVER, reason="z3 not on PATH")

# Lines recorded by the acceptance tests; echoed in the terminal summary so they are visible
# even when pytest captures output.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def ring_allgather_schedule() -> Schedule:
    """Allgather on a 4-node unit ring in 2 steps and 3 rounds."""
    step0 = [(0, 0, 1), (1, 1, 0), (2, 2, 3), (3, 3, 2)]
    step1 = [
        (0, 0, 3), (1, 0, 3), (2, 3, 0), (3, 3, 0),
        (0, 1, 2), (1, 1, 2), (2, 2, 1), (3, 2, 1),
    ]
    sends = {(c, a, b, 0) for c, a, b in step0} | {(c, a, b, 1) for c, a, b in step1}
    return Schedule(2, (1, 2), frozenset(sends))


def allgather_instance(topology, C, S, R) -> SynthesisInstance:
    spec = make_spec("allgather", topology.num_nodes, C)
    return SynthesisInstance(spec.G, S, R, topology, spec.pre, spec.post)


@pytest.fixture
def ring4():
    return build_ring(4)


@pytest.fixture
def ring_ag():
    return ring_allgather_schedule()


@pytest.fixture
def ring_ag_inst(ring4):
    return allgather_instance(ring4, 1, 2, 3)
