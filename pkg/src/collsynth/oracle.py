"""Exhaustive feasibility search for tiny instances, used as ground truth against the solver.

The search never consults the SMT encoding. It walks steps in order, choosing a round count
for each step and then a set of deliveries, and memoizes failed ``(placement, step,
rounds left)`` states.

Only maximal delivery sets are explored: having more chunks in more places never makes the
remaining problem harder (surplus sends can be dropped), so any schedule can be matched by
one that delivers a maximal set at every step.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import Optional

from .instance import SynthesisInstance
from .schedule import Schedule


class OracleBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Budget:
    max_cells: int = 32  # G * P; admits every instance of the small acceptance grid
    max_steps: int = 3
    max_slack: int = 2  # R - S


def _check_budget(inst: SynthesisInstance, budget: Budget) -> None:
    if inst.G * inst.P > budget.max_cells:
        raise OracleBudgetError(f"G*P = {inst.G * inst.P} exceeds the oracle budget {budget.max_cells}")
    if inst.S > budget.max_steps:
        raise OracleBudgetError(f"S = {inst.S} exceeds the oracle budget {budget.max_steps}")
    if inst.R - inst.S > budget.max_slack:
        raise OracleBudgetError(f"R - S = {inst.R - inst.S} exceeds the oracle budget {budget.max_slack}")


class _Search:
    def __init__(self, inst: SynthesisInstance):
        self.inst = inst
        self.P = inst.P
        topo = inst.topology
        self.links = sorted(topo.links)
        self.preds = defaultdict(list)
        self.succs = defaultdict(list)
        for n, m in self.links:
            self.preds[m].append(n)
            self.succs[n].append(m)
        # constraint indices touching each link
        self.groups = [(con.bound, frozenset(con.edges)) for con in topo.constraints]
        self.groups_of = {e: [i for i, (_, edges) in enumerate(self.groups) if e in edges] for e in self.links}
        self.post = frozenset(inst.post)
        self.failed: set = set()

    def _hops(self, sources) -> dict[int, int]:
        dist = {s: 0 for s in sources}
        queue = deque(dist)
        while queue:
            n = queue.popleft()
            for m in self.succs[n]:
                if m not in dist:
                    dist[m] = dist[n] + 1
                    queue.append(m)
        return dist

    def _hopeless(self, placement: frozenset, steps_left: int) -> bool:
        holders = defaultdict(set)
        for c, n in placement:
            holders[c].add(n)
        cache = {}
        for c, n in self.post - placement:
            if c not in cache:
                cache[c] = self._hops(holders[c])
            if cache[c].get(n, steps_left + 1) > steps_left:
                return True
        return False

    def _deliveries(self, placement: frozenset, rounds: int):
        """Yield maximal send lists for one step with ``rounds`` rounds."""
        candidates = []
        for c in sorted({c for c, _ in placement}):
            for m in range(self.P):
                if (c, m) in placement:
                    continue
                sources = [n for n in self.preds[m] if (c, n) in placement]
                if sources:
                    candidates.append((c, m, sources))
        caps = [bound * rounds for bound, _ in self.groups]
        used = [0] * len(self.groups)
        chosen: list[tuple[int, int, int]] = []
        skipped: list[int] = []
        seen: set = set()

        def fits(edge) -> bool:
            return all(used[g] < caps[g] for g in self.groups_of[edge])

        def rec(i: int):
            if i == len(candidates):
                # keep only sets that cannot absorb any skipped delivery
                for j in skipped:
                    c, m, sources = candidates[j]
                    if any(fits((n, m)) for n in sources):
                        return
                key = frozenset((c, m) for c, _, m in chosen)
                if key not in seen:
                    seen.add(key)
                    yield list(chosen)
                return
            c, m, sources = candidates[i]
            for n in sources:
                edge = (n, m)
                if fits(edge):
                    for g in self.groups_of[edge]:
                        used[g] += 1
                    chosen.append((c, n, m))
                    yield from rec(i + 1)
                    chosen.pop()
                    for g in self.groups_of[edge]:
                        used[g] -= 1
            skipped.append(i)
            yield from rec(i + 1)
            skipped.pop()

        yield from rec(0)

    def solve(self, placement: frozenset, step: int, rounds_left: int) -> Optional[list]:
        S = self.inst.S
        if step == S:
            return [] if self.post <= placement else None
        key = (placement, step, rounds_left)
        if key in self.failed or self._hopeless(placement, S - step):
            return None
        steps_after = S - step - 1
        choices = [rounds_left] if steps_after == 0 else range(1, rounds_left - steps_after + 1)
        for r in choices:
            for sends in self._deliveries(placement, r):
                nxt = placement | {(c, m) for c, _, m in sends}
                rest = self.solve(nxt, step + 1, rounds_left - r)
                if rest is not None:
                    return [(r, sends)] + rest
        self.failed.add(key)
        return None


def brute_force(inst: SynthesisInstance, budget: Budget = Budget()) -> Optional[Schedule]:
    """A schedule for ``inst`` if one exists, else None. Refuses instances over ``budget``."""
    _check_budget(inst, budget)
    found = _Search(inst).solve(frozenset(inst.pre), 0, inst.R)
    if found is None:
        return None
    rounds = tuple(r for r, _ in found)
    sends = frozenset((c, n, m, t) for t, (_, step_sends) in enumerate(found) for c, n, m in step_sends)
    return Schedule(inst.S, rounds, sends)
