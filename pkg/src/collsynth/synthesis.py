"""Single-point synthesis, the Pareto-frontier search, and combining collectives by inversion."""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Optional, Union

from .collectives import DUAL, CollectiveError, Kind, combining_chunks, dual_chunks, make_spec, to_global
from .encoding import decode, encode
from .instance import SynthesisInstance
from .schedule import (
    Composition,
    ExecutionError,
    Schedule,
    combining_instance,
    execute,
    verify,
    verify_combining,
)
from .solver import DEFAULT_TIMEOUT, SolverConfig, Status, solve
from .topology import BandwidthConstraint, Topology, bandwidth_lower_bound, diameter, distances_from

log = logging.getLogger(__name__)

DEFAULT_ROOT = 0
DEFAULT_MAX_STEPS = 16
PROBE_LIMIT = 60.0  # seconds for the coarse probe before a direct query
_REVERSED = "~rev"


class SynthesisError(RuntimeError):
    """A decoded schedule failed verification; indicates a bug, never a user error."""


# -- topology reversal and inversion ---------------------------------------------------------


def reverse_topology(topology: Topology) -> Topology:
    constraints = tuple(
        BandwidthConstraint(frozenset((m, n) for n, m in con.edges), con.bound) for con in topology.constraints
    )
    name = topology.name
    name = name[: -len(_REVERSED)] if name.endswith(_REVERSED) else name + _REVERSED
    return Topology(name, topology.num_nodes, constraints)


def is_symmetric(topology: Topology) -> bool:
    flipped = {(frozenset((m, n) for n, m in con.edges), con.bound) for con in topology.constraints}
    return flipped == {(con.edges, con.bound) for con in topology.constraints}


def invert_schedule(schedule: Schedule, S: Optional[int] = None) -> Schedule:
    S = schedule.num_steps if S is None else S
    if S != schedule.num_steps:
        raise ValueError(f"schedule has {schedule.num_steps} steps, not {S}")
    sends = frozenset((c, m, n, S - 1 - t) for c, n, m, t in schedule.sends)
    return Schedule(S, tuple(reversed(schedule.rounds)), sends)


# -- step refinement -------------------------------------------------------------------------


def splittable(topology: Topology) -> bool:
    """True if no link is governed by two constraints, so a multi-round step can be split."""
    seen: set = set()
    for con in topology.constraints:
        live = con.edges & topology.links
        if live & seen:
            return False
        seen |= live
    return True


def split_steps(schedule: Schedule, S: int, topology: Topology) -> Schedule:
    """Refine ``schedule`` into ``S`` steps with the same rounds by splitting multi-round steps.

    Every send of a split step reads data present when the step began, so each part stays
    valid; each constraint's traffic is divided so no part exceeds its bound times its rounds.
    """
    if not schedule.num_steps <= S <= schedule.total_rounds:
        raise ValueError(f"cannot refine {schedule.num_steps} steps of {schedule.total_rounds} rounds into {S}")
    if not splittable(topology):
        raise ValueError(f"{topology.name} has overlapping constraints; steps cannot be split safely")
    group = {e: i for i, con in enumerate(topology.constraints) for e in con.edges & topology.links}
    bound = [con.bound for con in topology.constraints]
    steps = [(r, schedule.sends_at(t)) for t, r in enumerate(schedule.rounds)]
    while len(steps) < S:
        i = max(range(len(steps)), key=lambda j: steps[j][0])
        r, sends = steps[i]
        first, rest, used = [], [], Counter()
        for send in sends:
            g = group[(send[1], send[2])]
            if used[g] < bound[g]:
                used[g] += 1
                first.append(send)
            else:
                rest.append(send)
        steps[i : i + 1] = [(1, first), (r - 1, rest)]
    sends = frozenset((c, n, m, t) for t, (_, part) in enumerate(steps) for c, n, m, _ in part)
    return Schedule(S, tuple(r for r, _ in steps), sends)


def min_steps(inst: SynthesisInstance) -> int:
    """Fewest steps any schedule needs: the farthest required holder from a chunk's sources."""
    sources = defaultdict(set)
    for c, n in inst.pre:
        sources[c].add(n)
    dist_of = {}
    worst = 0
    for c, n in inst.post:
        if c not in dist_of:
            dist_of[c] = distances_from(inst.topology, sources[c])
        worst = max(worst, dist_of[c].get(n, inst.S + 1))
    return worst


# -- single queries --------------------------------------------------------------------------


@dataclass
class SynthesisResult:
    """Outcome of one query, reported in the requested collective's (C, S, R)."""

    status: Status
    kind: Kind
    C: int
    S: int
    R: int
    schedule: Union[Schedule, Composition, None] = None
    instance: Optional[SynthesisInstance] = None  # the non-combining instance that was solved
    solver_time: float = 0.0
    reason: str = ""
    refined_from: Optional[int] = None  # step count of the coarse schedule this one was split from

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT


def make_instance(kind, topology: Topology, C: int, S: int, R: int, root: Optional[int] = None) -> SynthesisInstance:
    """Instance for a non-combining collective (or the dual spec of a combining one)."""
    kind = Kind(kind)
    if kind.rooted and root is None:
        root = DEFAULT_ROOT
    spec = make_spec(kind, topology.num_nodes, C, root)
    return SynthesisInstance(spec.G, S, R, topology, spec.pre, spec.post)


def solve_instance(
    inst: SynthesisInstance,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    label: str = "query",
) -> tuple[Status, Optional[Schedule], float, str]:
    """Encode, solve, decode and verify one instance."""
    config = config or SolverConfig.from_env()
    cs = encode(inst, dialect=config.encoding_dialect())
    res = solve(cs, timeout, config, label=label)
    if not res.sat:
        return res.status, None, res.wall_time, res.reason
    schedule = decode(res.model, inst)
    problems = verify(schedule, inst)
    if problems:
        raise SynthesisError(f"{label}: decoded schedule fails verification: " + "; ".join(map(str, problems[:5])))
    return Status.SAT, schedule, res.wall_time, ""


def _label(kind: Kind, topology: Topology, C: int, S: int, R: int) -> str:
    return f"{kind.value}-{topology.name}-C{C}-S{S}-R{R}"


def solve_refining(
    inst: SynthesisInstance,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    label: str = "query",
    refine: bool = True,
) -> tuple[Status, Optional[Schedule], float, str, Optional[int]]:
    """:func:`solve_instance`, first probing the coarsest step count when steps can be split.

    With no link under two constraints, a schedule with fewer steps and the same rounds splits
    into one with exactly ``inst.S`` steps, so a satisfiable coarse probe settles the query.
    Fewer steps means a smaller encoding, which the solver often decides much faster. The
    probe gets a bounded share of the budget; otherwise the direct query runs as usual.
    """
    spent = 0.0
    S0 = min_steps(inst)
    if refine and S0 < inst.S <= inst.R and splittable(inst.topology):
        coarse = SynthesisInstance(inst.G, S0, inst.R, inst.topology, inst.pre, inst.post)
        status, sched, spent, _ = solve_instance(
            coarse, min(PROBE_LIMIT, timeout / 4), config, label=f"{label}-coarse{S0}"
        )
        if status is Status.SAT:
            refined = split_steps(sched, inst.S, inst.topology)
            problems = verify(refined, inst)
            if problems:
                raise SynthesisError(f"{label}: refined schedule fails verification: {problems[0]}")
            return Status.SAT, refined, spent, "", S0
    status, sched, secs, reason = solve_instance(inst, max(1.0, timeout - spent), config, label=label)
    return status, sched, spent + secs, reason, None


def synthesize(
    kind,
    topology: Topology,
    C: int,
    S: int,
    R: int,
    root: Optional[int] = None,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    refine: bool = True,
) -> SynthesisResult:
    """Synthesize one (C, S, R) point. Combining kinds go through :func:`synthesize_combining`.

    For Allreduce, ``S`` and ``R`` are the composed totals and must be even. ``refine`` allows
    the coarse probe of :func:`solve_refining`.
    """
    kind = Kind(kind)
    if kind.combining:
        if kind is Kind.ALLREDUCE:
            if S % 2 or R % 2:
                raise CollectiveError(f"allreduce steps and rounds are twice the allgather's; got S={S}, R={R}")
            S, R = S // 2, R // 2
        return synthesize_combining(kind, topology, C, S, R, root, timeout, config, refine=refine)
    inst = make_instance(kind, topology, C, S, R, root)
    status, schedule, secs, reason, coarse = solve_refining(
        inst, timeout, config, label=_label(kind, topology, C, S, R), refine=refine
    )
    return SynthesisResult(status, kind, C, S, R, schedule, inst, secs, reason, coarse)


def synthesize_combining(
    kind,
    topology: Topology,
    C: int,
    S_dual: int,
    R_dual: int,
    root: Optional[int] = None,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    refine: bool = True,
) -> SynthesisResult:
    """Reduce, Reducescatter or Allreduce with ``C`` chunks per node, via the non-combining dual.

    The dual runs ``S_dual`` steps and ``R_dual`` rounds. Reduce and Reducescatter invert a
    Broadcast or Allgather synthesized on the reversed topology. Allreduce runs the inverted
    Allgather and then the Allgather itself, so its totals are twice the dual's.
    """
    kind = Kind(kind)
    if not kind.combining:
        raise CollectiveError(f"{kind.value} is not a combining collective")
    P = topology.num_nodes
    dual_kind = DUAL[kind]
    dual_C = dual_chunks(kind, C, P)
    reversed_topo = reverse_topology(topology)
    symmetric = is_symmetric(topology)

    def run_dual(on: Topology) -> tuple[Status, Optional[Schedule], SynthesisInstance, float, str]:
        inst = make_instance(dual_kind, on, dual_C, S_dual, R_dual, root)
        status, sched, secs, reason, _ = solve_refining(
            inst, timeout, config, label=_label(dual_kind, on, dual_C, S_dual, R_dual), refine=refine
        )
        return status, sched, inst, secs, reason

    status, dual_sched, dual_inst, secs, reason = run_dual(reversed_topo)
    S_out, R_out = (2 * S_dual, 2 * R_dual) if kind is Kind.ALLREDUCE else (S_dual, R_dual)
    if status is not Status.SAT:
        return SynthesisResult(status, kind, C, S_out, R_out, None, dual_inst, secs, reason)

    reduce_phase = invert_schedule(dual_sched, S_dual)
    reduce_inst = combining_instance(dual_inst, topology)
    problems = verify_combining(reduce_phase, reduce_inst)
    if problems:
        raise SynthesisError("inverted schedule fails combining verification: " + "; ".join(map(str, problems[:5])))
    if kind is not Kind.ALLREDUCE:
        return SynthesisResult(Status.SAT, kind, C, S_out, R_out, reduce_phase, dual_inst, secs)

    if symmetric:
        # the reversed topology has the same links, so the dual schedule is valid as-is
        gather, gather_inst = dual_sched, make_instance(dual_kind, topology, dual_C, S_dual, R_dual, root)
    else:
        status, gather, gather_inst, more, reason = run_dual(topology)
        secs += more
        if status is not Status.SAT:
            return SynthesisResult(status, kind, C, S_out, R_out, None, gather_inst, secs, reason)
    comp = Composition(reduce_phase, gather)
    try:
        execute(comp, gather_inst, seed=0)
    except ExecutionError as exc:
        raise SynthesisError(f"allreduce composition fails execution: {exc}") from exc
    return SynthesisResult(Status.SAT, kind, C, S_out, R_out, comp, gather_inst, secs)


# -- Pareto frontier -------------------------------------------------------------------------


@dataclass
class FrontierEntry:
    S: int
    R: int
    C: int
    schedule: Union[Schedule, Composition]
    tags: frozenset = frozenset()
    solver_time: float = 0.0
    proven: bool = True  # False if an undecided candidate could have dominated this entry
    dual: Optional[tuple[int, int, int]] = None  # (C, S, R) of the non-combining dual

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.R, self.C)


@dataclass
class Undecided:
    S: int
    R: int
    C: int
    reason: str


@dataclass
class Frontier:
    kind: Kind
    topology: str
    k: int
    latency_bound: int
    bandwidth_bound: Fraction
    entries: list[FrontierEntry] = field(default_factory=list)
    undecided: list[Undecided] = field(default_factory=list)
    incomplete: bool = False
    queries: int = 0

    def __iter__(self) -> Iterator[FrontierEntry]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def tuples(self) -> list[tuple[int, int, int]]:
        return [(e.C, e.S, e.R) for e in self.entries]


def _valid_chunks(kind: Kind, C: int, P: int) -> bool:
    try:
        to_global(kind, C, P)
    except CollectiveError:
        return False
    return True


def candidates(S: int, k: int, b_l: Fraction, kind: Kind, P: int, below: Optional[Fraction] = None) -> list[tuple[int, int]]:
    """(R, C) pairs with S <= R <= S+k and R/C >= b_l, by ascending R/C then R.

    ``below`` drops pairs whose ratio is not strictly smaller; those are dominated by an
    entry already found with fewer steps.
    """
    out = []
    for R in range(S, S + k + 1):
        C = 1
        while Fraction(R, C) >= b_l:
            if (below is None or Fraction(R, C) < below) and _valid_chunks(kind, C, P):
                out.append((R, C))
            C += 1
    out.sort(key=lambda rc: (Fraction(rc[0], rc[1]), rc[0]))
    return out


def lower_bounds(kind, topology: Topology, root: Optional[int] = None) -> tuple[int, Fraction]:
    """(diameter, bandwidth lower bound on R/C) for a non-combining collective."""
    kind = Kind(kind)
    P = topology.num_nodes
    C = next(c for c in range(1, P + 1) if _valid_chunks(kind, c, P))
    spec = make_spec(kind, P, C, DEFAULT_ROOT if kind.rooted and root is None else root)
    return diameter(topology), bandwidth_lower_bound(topology, spec.pre, spec.post, spec.G, C)


def pareto_synthesize(
    k: int,
    kind,
    topology: Topology,
    root: Optional[int] = None,
    max_steps: int = DEFAULT_MAX_STEPS,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    jobs: int = 1,
    on_entry: Optional[Callable[[FrontierEntry], None]] = None,
) -> Frontier:
    """Search the Pareto frontier of k-synchronous algorithms in increasing step count.

    Combining kinds search their dual and report translated tuples. Candidates the solver
    cannot decide are recorded in ``undecided`` and skipped; every entry found after one is
    marked unproven.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    kind = Kind(kind)
    config = config or SolverConfig.from_env()
    if kind.rooted and root is None:
        root = DEFAULT_ROOT
    dual_kind = DUAL.get(kind, kind)
    search_topo = reverse_topology(topology) if kind.combining else topology
    P = topology.num_nodes
    a_l, b_l = lower_bounds(dual_kind, search_topo, root)
    frontier = Frontier(kind, topology.name, k, a_l, b_l)
    best: Optional[Fraction] = None
    doubt = False

    for S in range(a_l, max_steps + 1):
        todo = candidates(S, k, b_l, dual_kind, P, below=best)
        found = None
        for (R, C), (status, sched, secs, reason) in _ordered_solves(
            todo, lambda R, C: make_instance(dual_kind, search_topo, C, S, R, root), S, timeout, config, jobs,
            dual_kind, search_topo,
        ):
            frontier.queries += 1
            if status is Status.SAT:
                found = (R, C, sched, secs)
                break
            if status is Status.UNKNOWN:
                frontier.undecided.append(Undecided(S, R, C, reason))
                doubt = True
        if found is None:
            continue
        R, C, sched, secs = found
        tags = set()
        if not frontier.entries and not doubt:
            tags.add("latency")
        if Fraction(R, C) == b_l:
            tags.add("bandwidth")
        entry = _translate(kind, topology, root, S, R, C, sched, secs, timeout, config)
        if entry is None:
            continue
        entry.tags = frozenset(tags)
        entry.proven = not doubt
        frontier.entries.append(entry)
        if on_entry:
            on_entry(entry)
        best = Fraction(R, C)
        if best == b_l:
            return frontier
    frontier.incomplete = True
    return frontier


def _ordered_solves(todo, build, S, timeout, config, jobs, kind, topo):
    """Yield (candidate, result) in ``todo`` order, optionally solving ahead in parallel."""
    def one(rc):
        R, C = rc
        return solve_instance(build(R, C), timeout, config, label=_label(kind, topo, C, S, R))

    if jobs <= 1:
        for rc in todo:
            yield rc, one(rc)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(one, rc) for rc in todo]
        try:
            for rc, fut in zip(todo, futures):
                yield rc, fut.result()
        finally:
            for fut in futures:
                fut.cancel()


def _translate(kind, topology, root, S, R, C, sched, secs, timeout, config) -> Optional[FrontierEntry]:
    """Frontier entry in the requested collective's terms from a dual (S, R, C) solution."""
    if not kind.combining:
        return FrontierEntry(S, R, C, sched, solver_time=secs)
    P = topology.num_nodes
    C_out = combining_chunks(kind, C, P)
    if kind is Kind.ALLREDUCE and not is_symmetric(topology):
        # the gather phase needs its own solve on the forward topology
        res = synthesize_combining(kind, topology, C_out, S, R, root, timeout, config)
        if not res.sat:
            log.warning("allreduce point (%d,%d,%d) has no forward-topology allgather", C_out, 2 * S, 2 * R)
            return None
        return FrontierEntry(res.S, res.R, C_out, res.schedule, solver_time=secs + res.solver_time, dual=(C, S, R))
    dual_inst = make_instance(DUAL[kind], reverse_topology(topology), C, S, R, root)
    reduce_phase = invert_schedule(sched, S)
    problems = verify_combining(reduce_phase, combining_instance(dual_inst, topology))
    if problems:
        raise SynthesisError("inverted frontier schedule fails combining verification")
    if kind is not Kind.ALLREDUCE:
        return FrontierEntry(S, R, C_out, reduce_phase, solver_time=secs, dual=(C, S, R))
    comp = Composition(reduce_phase, sched)
    execute(comp, make_instance(DUAL[kind], topology, C, S, R, root), seed=0)
    return FrontierEntry(2 * S, 2 * R, C_out, comp, solver_time=secs, dual=(C, S, R))


# -- checking stored schedules ---------------------------------------------------------------


def check_schedule(
    kind,
    schedule: Union[Schedule, Composition],
    topology: Topology,
    C: int,
    root: Optional[int] = None,
) -> tuple[list[str], SynthesisInstance]:
    """Violations of a schedule for ``kind`` with ``C`` chunks per node, and the instance used.

    For combining kinds the returned instance is the forward (non-combining) dual instance,
    which is what :func:`execute` expects for an Allreduce composition.
    """
    kind = Kind(kind)
    if kind.rooted and root is None:
        root = DEFAULT_ROOT
    if not kind.combining:
        if not isinstance(schedule, Schedule):
            return [f"{kind.value} needs a single-phase schedule"], None
        inst = make_instance(kind, topology, C, schedule.num_steps, schedule.total_rounds, root)
        return [str(v) for v in verify(schedule, inst)], inst
    dual_kind, dual_C = DUAL[kind], dual_chunks(kind, C, topology.num_nodes)
    if kind is Kind.ALLREDUCE:
        if not isinstance(schedule, Composition):
            return ["allreduce needs a two-phase schedule"], None
        red, gat = schedule.reduce_phase, schedule.gather_phase
        back = make_instance(dual_kind, reverse_topology(topology), dual_C, red.num_steps, red.total_rounds, root)
        fwd = make_instance(dual_kind, topology, dual_C, gat.num_steps, gat.total_rounds, root)
        problems = [f"reduce phase: {v}" for v in verify_combining(red, combining_instance(back, topology))]
        problems += [f"gather phase: {v}" for v in verify(gat, fwd)]
        return problems, fwd
    if not isinstance(schedule, Schedule):
        return [f"{kind.value} needs a single-phase schedule"], None
    dual = make_instance(dual_kind, reverse_topology(topology), dual_C, schedule.num_steps, schedule.total_rounds, root)
    inst = combining_instance(dual, topology)
    return [str(v) for v in verify_combining(schedule, inst)], inst
