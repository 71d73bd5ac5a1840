"""Schedules, their run semantics, and a host-memory executor.

The verifier recomputes the run V_0..V_S from the send set alone and shares no code with
the SMT encoding. The executor is a second, value-based implementation used to cross-check
the verifier.
"""

from __future__ import annotations

import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from . import __version__
from .instance import SynthesisInstance
from .topology import Topology

Send = tuple[int, int, int, int]  # (chunk, src, dst, step)


class ScheduleError(ValueError):
    """Malformed schedule document."""


class ExecutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class Schedule:
    num_steps: int
    rounds: tuple[int, ...]
    sends: frozenset[Send]

    def __post_init__(self):
        if len(self.rounds) != self.num_steps:
            raise ScheduleError(f"{len(self.rounds)} round counts for {self.num_steps} steps")

    @property
    def total_rounds(self) -> int:
        return sum(self.rounds)

    def sorted_sends(self) -> list[Send]:
        return sorted(self.sends, key=lambda t: (t[3], t[0], t[1], t[2]))

    def sends_at(self, step: int) -> list[Send]:
        return [t for t in self.sorted_sends() if t[3] == step]


@dataclass(frozen=True)
class Composition:
    """Allreduce as a combining phase followed by a non-combining phase on the same chunks."""

    reduce_phase: Schedule
    gather_phase: Schedule

    @property
    def num_steps(self) -> int:
        return self.reduce_phase.num_steps + self.gather_phase.num_steps

    @property
    def total_rounds(self) -> int:
        return self.reduce_phase.total_rounds + self.gather_phase.total_rounds


@dataclass(frozen=True)
class Violation:
    kind: str
    step: Optional[int] = None
    chunk: Optional[int] = None
    edge: Optional[tuple[int, int]] = None
    detail: str = ""

    def __str__(self):
        parts = [self.kind]
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.chunk is not None:
            parts.append(f"chunk={self.chunk}")
        if self.edge is not None:
            parts.append(f"edge={self.edge[0]}->{self.edge[1]}")
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


def _structural(schedule: Schedule, topology: Topology, G: int, S: int, R: Optional[int]) -> list[Violation]:
    out = []
    if schedule.num_steps != S:
        out.append(Violation("steps", detail=f"schedule has {schedule.num_steps} steps, instance {S}"))
    if any(r < 1 for r in schedule.rounds):
        out.append(Violation("rounds", detail=f"non-positive round count in {schedule.rounds}"))
    if R is not None and schedule.total_rounds != R:
        out.append(Violation("rounds", detail=f"rounds sum to {schedule.total_rounds}, instance {R}"))
    links = topology.links
    P = topology.num_nodes
    for c, src, dst, t in schedule.sends:
        if not 0 <= c < G:
            out.append(Violation("chunk-range", t, c, (src, dst)))
        if not (0 <= src < P and 0 <= dst < P):
            out.append(Violation("node-range", t, c, (src, dst)))
        elif src == dst:
            out.append(Violation("self-send", t, c, (src, dst)))
        elif (src, dst) not in links:
            out.append(Violation("no-link", t, c, (src, dst)))
        if not 0 <= t < schedule.num_steps:
            out.append(Violation("step-range", t, c, (src, dst)))
    return out


def _bandwidth(schedule: Schedule, topology: Topology) -> list[Violation]:
    out = []
    per_step: dict[int, Counter] = defaultdict(Counter)
    for c, src, dst, t in schedule.sends:
        per_step[t][(src, dst)] += 1
    for t in sorted(per_step):
        if not 0 <= t < schedule.num_steps:
            continue
        usage = per_step[t]
        for con in topology.constraints:
            load = sum(usage[e] for e in con.edges)
            cap = con.bound * schedule.rounds[t]
            if load > cap:
                edge = min(e for e in con.edges if usage[e]) if load else None
                out.append(Violation("bandwidth", t, None, edge, f"{load} sends > {cap}"))
    return out


def run(schedule: Schedule, pre: Iterable) -> list[frozenset]:
    """V_0..V_S: V_{s+1} adds (c, dst) for each step-s send whose source holds c in V_s."""
    states = [frozenset(pre)]
    by_step = defaultdict(list)
    for c, src, dst, t in schedule.sends:
        by_step[t].append((c, src, dst))
    for s in range(schedule.num_steps):
        cur = states[-1]
        arrived = {(c, dst) for c, src, dst in by_step[s] if (c, src) in cur}
        states.append(cur | arrived)
    return states


def verify(schedule: Schedule, inst: SynthesisInstance) -> list[Violation]:
    """All semantic violations of ``schedule`` against ``inst``; empty means valid."""
    violations = _structural(schedule, inst.topology, inst.G, inst.S, inst.R)
    violations += _bandwidth(schedule, inst.topology)

    held = set(inst.pre)
    for s in range(schedule.num_steps):
        arrivals = Counter()
        for c, src, dst, t in schedule.sends:
            if t != s:
                continue
            if (c, src) not in held:
                violations.append(Violation("source-missing", s, c, (src, dst)))
            if (c, dst) in held:
                violations.append(Violation("duplicate-receipt", s, c, (src, dst), "already held"))
            arrivals[(c, dst)] += 1
        for (c, dst), count in sorted(arrivals.items()):
            if count > 1:
                violations.append(Violation("duplicate-receipt", s, c, None, f"node {dst} receives {count} copies"))
        held |= {(c, dst) for c, src, dst, t in schedule.sends if t == s and (c, src) in held}

    for c, n in sorted(set(inst.post) - held):
        violations.append(Violation("postcondition", None, c, None, f"node {n} never receives chunk {c}"))
    return violations


def verify_combining(schedule: Schedule, inst: SynthesisInstance) -> list[Violation]:
    """Check a reducing schedule by tracking contribution multisets.

    ``inst.pre`` lists the nodes contributing their own version of each chunk and
    ``inst.post`` where each chunk's reduced value must end up. A send carries the sender's
    multiset as of the start of the step; the receiver merges it at the end of the step.
    """
    violations = _structural(schedule, inst.topology, inst.G, inst.S, inst.R)
    violations += _bandwidth(schedule, inst.topology)

    contributors: dict[int, Counter] = defaultdict(Counter)
    state: dict[tuple[int, int], Counter] = defaultdict(Counter)
    for c, n in inst.pre:
        contributors[c][n] = 1
        state[(c, n)][n] += 1

    for s in range(schedule.num_steps):
        snapshot = {key: Counter(val) for key, val in state.items()}
        for c, src, dst, t in schedule.sorted_sends():
            if t != s:
                continue
            carried = snapshot.get((c, src))
            if not carried:
                violations.append(Violation("source-missing", s, c, (src, dst)))
                continue
            state[(c, dst)] += carried

    for c, n in sorted(inst.post):
        got = state.get((c, n), Counter())
        want = contributors[c]
        if got != want:
            extra = sorted(k for k in got if got[k] > 1)
            missing = sorted(set(want) - set(got))
            detail = f"node {n}: multiplicity>1 from {extra}, missing {missing}"
            kind = "multiplicity" if extra else "postcondition"
            violations.append(Violation(kind, None, c, None, detail))
    return violations


def combining_instance(dual: SynthesisInstance, topology: Optional[Topology] = None) -> SynthesisInstance:
    """The reducing problem whose inverse is ``dual``: contributors and roots swap roles."""
    return SynthesisInstance(
        dual.G, dual.S, dual.R, topology or dual.topology, pre=dual.post, post=dual.pre
    )


# -- execution ---------------------------------------------------------------------------


@dataclass
class Buffers:
    """Per-node chunk slots; ``None`` marks an empty slot."""

    slots: list[list]
    log: list[str] = field(default_factory=list)

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for node in self.slots:
            for v in node:
                h.update(b"-" if v is None else repr(v).encode())
                h.update(b"|")
        return h.hexdigest()[:16]


def _check_capacity(sends: list[Send], step: int, width: int, topology: Topology) -> None:
    # Each round moves one chunk per unit of bound; track traffic in bytes per constraint.
    traffic: dict[tuple[int, int], int] = Counter()
    for c, src, dst, t in sends:
        traffic[(src, dst)] += 1
    for con in topology.constraints:
        budget = con.bound * width
        used = 0
        for e in con.edges:
            used += traffic.get(e, 0)
        if used > budget:
            raise ExecutionError(f"step {step}: {used} chunks on a link group with budget {budget}")


def _check_sends(schedule: Schedule, topology: Topology, G: int) -> None:
    P = topology.num_nodes
    for c, src, dst, t in schedule.sends:
        if not (0 <= t < schedule.num_steps and 0 <= c < G and 0 <= src < P and 0 <= dst < P):
            raise ExecutionError(f"send {(c, src, dst, t)} addresses a slot or step that does not exist")


def _run_copies(schedule: Schedule, topology: Topology, slots: list[list]) -> None:
    links = topology.links
    _check_sends(schedule, topology, len(slots[0]))
    for step in range(schedule.num_steps):
        sends = schedule.sends_at(step)
        _check_capacity(sends, step, schedule.rounds[step], topology)
        staged = []
        for c, src, dst, t in sends:
            if (src, dst) not in links:
                raise ExecutionError(f"step {step}: no link {src}->{dst}")
            value = slots[src][c]
            if value is None:
                raise ExecutionError(f"step {step}: node {src} has no data for chunk {c}")
            staged.append((dst, c, value))
        for dst, c, value in staged:
            if slots[dst][c] is not None:
                raise ExecutionError(f"step {step}: node {dst} overwrites chunk {c}")
            slots[dst][c] = value


def _run_reductions(schedule: Schedule, topology: Topology, slots: list[list], owned: list[list]) -> None:
    links = topology.links
    _check_sends(schedule, topology, len(slots[0]))
    for step in range(schedule.num_steps):
        sends = schedule.sends_at(step)
        _check_capacity(sends, step, schedule.rounds[step], topology)
        staged = []
        for c, src, dst, t in sends:
            if (src, dst) not in links:
                raise ExecutionError(f"step {step}: no link {src}->{dst}")
            if not owned[src][c]:
                raise ExecutionError(f"step {step}: node {src} has no partial for chunk {c}")
            staged.append((dst, c, slots[src][c]))
        for dst, c, value in staged:
            slots[dst][c] = (slots[dst][c] or 0) + value
            owned[dst][c] = True


def _payload(rng: random.Random, combining: bool):
    if combining:
        return rng.randrange(-(2**31), 2**31)
    return rng.randbytes(8)


def execute(
    schedule: Union[Schedule, Composition],
    inst: SynthesisInstance,
    seed: int = 0,
    *,
    combining: bool = False,
    check: bool = True,
) -> Buffers:
    """Run ``schedule`` over seeded payloads and check the final buffers.

    Non-combining: ``inst.pre`` holders start with a payload per chunk (identical across
    holders) and every post slot must end up bitwise equal to it. Combining: every
    ``inst.pre`` holder starts with its own integer and every ``inst.post`` slot must end up
    with the exact sum. For a :class:`Composition`, ``inst`` is the gather-phase instance;
    every node must finish with the full sum of every chunk.
    """
    if isinstance(schedule, Composition):
        return _execute_allreduce(schedule, inst, seed, check)
    if check:
        problems = (verify_combining if combining else verify)(schedule, inst)
        if problems:
            raise ExecutionError("refusing to execute an invalid schedule: " + "; ".join(map(str, problems[:5])))
    rng = random.Random(seed)
    P, G = inst.P, inst.G
    slots: list[list] = [[None] * G for _ in range(P)]
    if combining:
        owned = [[False] * G for _ in range(P)]
        expected: dict[int, int] = defaultdict(int)
        for c, n in sorted(inst.pre):
            slots[n][c] = _payload(rng, True)
            owned[n][c] = True
            expected[c] += slots[n][c]
        _run_reductions(schedule, inst.topology, slots, owned)
        for c, n in sorted(inst.post):
            if slots[n][c] != expected[c]:
                raise ExecutionError(f"node {n} chunk {c}: got {slots[n][c]}, expected {expected[c]}")
    else:
        source = {}
        for c, n in sorted(inst.pre):
            source.setdefault(c, _payload(rng, False))
            slots[n][c] = source[c]
        _run_copies(schedule, inst.topology, slots)
        for c, n in sorted(inst.post):
            if slots[n][c] != source.get(c):
                raise ExecutionError(f"node {n} chunk {c}: payload mismatch")
    return Buffers(slots)


def _execute_allreduce(comp: Composition, gather_inst: SynthesisInstance, seed: int, check: bool) -> Buffers:
    reduce_inst = combining_instance(gather_inst)
    reduce_inst = SynthesisInstance(
        reduce_inst.G, comp.reduce_phase.num_steps, comp.reduce_phase.total_rounds,
        reduce_inst.topology, reduce_inst.pre, reduce_inst.post,
    )
    if check:
        problems = verify_combining(comp.reduce_phase, reduce_inst) + verify(comp.gather_phase, gather_inst)
        if problems:
            raise ExecutionError("refusing to execute an invalid composition: " + "; ".join(map(str, problems[:5])))
    rng = random.Random(seed)
    P, G = gather_inst.P, gather_inst.G
    inputs = [[_payload(rng, True) for _ in range(G)] for _ in range(P)]
    reference = [sum(inputs[n][c] for n in range(P)) for c in range(G)]

    slots = [list(row) for row in inputs]
    owned = [[True] * G for _ in range(P)]
    _run_reductions(comp.reduce_phase, gather_inst.topology, slots, owned)

    # Only the reduction roots carry a finished value into the gather phase.
    gathered: list[list] = [[None] * G for _ in range(P)]
    for c, n in gather_inst.pre:
        gathered[n][c] = slots[n][c]
    _run_copies(comp.gather_phase, gather_inst.topology, gathered)
    for n in range(P):
        for c in range(G):
            if gathered[n][c] != reference[c]:
                raise ExecutionError(f"node {n} chunk {c}: got {gathered[n][c]}, expected {reference[c]}")
    return Buffers(gathered)


# -- serialization -----------------------------------------------------------------------


def schedule_to_dict(schedule: Schedule) -> dict:
    return {
        "S": schedule.num_steps,
        "R": schedule.total_rounds,
        "rounds": list(schedule.rounds),
        "sends": [[c, src, dst, t] for c, src, dst, t in schedule.sorted_sends()],
    }


def schedule_from_dict(data: dict) -> Schedule:
    try:
        S = int(data["S"])
        rounds = tuple(int(r) for r in data["rounds"])
        sends = []
        for item in data["sends"]:
            if len(item) != 4:
                raise ScheduleError(f"send {item!r} must have 4 fields")
            sends.append(tuple(int(v) for v in item))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScheduleError(f"malformed schedule: {exc}") from exc
    if len(rounds) != S:
        raise ScheduleError(f"rounds has {len(rounds)} entries, S={S}")
    if any(r < 1 for r in rounds):
        raise ScheduleError("every step needs at least one round")
    if "R" in data and int(data["R"]) != sum(rounds):
        raise ScheduleError(f"R={data['R']} disagrees with rounds {list(rounds)}")
    for c, src, dst, t in sends:
        if not 0 <= t < S:
            raise ScheduleError(f"send step {t} outside [0, {S})")
        if min(c, src, dst) < 0:
            raise ScheduleError(f"negative id in send {(c, src, dst, t)}")
    if len(set(sends)) != len(sends):
        raise ScheduleError("duplicate send entries")
    return Schedule(S, rounds, frozenset(sends))


def serialize(
    schedule: Union[Schedule, Composition],
    *,
    collective: str,
    topology: Topology,
    G: int,
    C: int,
    root: Optional[int] = None,
) -> str:
    """Canonical text form; equal schedules give byte-identical output."""
    doc = {
        "collective": collective,
        "topology": {"name": topology.name, "hash": topology.digest()},
        "P": topology.num_nodes,
        "G": G,
        "C": C,
        "version": __version__,
    }
    if root is not None:
        doc["root"] = root
    if isinstance(schedule, Composition):
        doc["S"] = schedule.num_steps
        doc["R"] = schedule.total_rounds
        doc["phases"] = [schedule_to_dict(schedule.reduce_phase), schedule_to_dict(schedule.gather_phase)]
    else:
        doc.update(schedule_to_dict(schedule))
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


@dataclass
class ScheduleDocument:
    schedule: Union[Schedule, Composition]
    collective: str
    topology_name: str
    topology_hash: str
    P: int
    G: int
    C: int
    version: str
    root: Optional[int] = None

    def check_topology(self, topology: Topology) -> list[str]:
        warnings = []
        if topology.digest() != self.topology_hash:
            warnings.append(
                f"topology hash mismatch: file was written for {self.topology_name} ({self.topology_hash}),"
                f" got {topology.name} ({topology.digest()})"
            )
        return warnings


def deserialize(text: str) -> ScheduleDocument:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScheduleError(f"not a schedule document: {exc}") from exc
    try:
        if "phases" in doc:
            phases = [schedule_from_dict(p) for p in doc["phases"]]
            if len(phases) != 2:
                raise ScheduleError("a composition has exactly two phases")
            schedule: Union[Schedule, Composition] = Composition(*phases)
            if int(doc["S"]) != schedule.num_steps or int(doc["R"]) != schedule.total_rounds:
                raise ScheduleError("composition S/R disagree with its phases")
        else:
            schedule = schedule_from_dict(doc)
        result = ScheduleDocument(
            schedule,
            str(doc["collective"]),
            str(doc["topology"]["name"]),
            str(doc["topology"]["hash"]),
            int(doc["P"]),
            int(doc["G"]),
            int(doc["C"]),
            str(doc.get("version", "")),
            None if doc.get("root") is None else int(doc["root"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScheduleError):
            raise
        raise ScheduleError(f"malformed schedule document: {exc}") from exc
    if isinstance(result.schedule, Schedule):
        for c, src, dst, t in result.schedule.sends:
            if c >= result.G or src >= result.P or dst >= result.P:
                raise ScheduleError(f"send {(c, src, dst, t)} out of range for G={result.G}, P={result.P}")
    return result
