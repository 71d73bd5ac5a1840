"""QF_LIA encoding of a synthesis instance and decoding of solver models.

Expressions are plain data: a ``str`` is a variable, an ``int``/``bool`` a constant, and a
tuple ``(op, *args)`` an application with SMT-LIB semantics. Variables:

* ``st_c_n``     integer, step at the end of which chunk c is first at node n
                 (0 = initially present, S+1 = never)
* ``snd_n_c_m``  boolean, node n sends chunk c to node m at some step
* ``r_s``        integer, rounds in step s (1-based)
* ``ind_n_c_m_s`` boolean, the n->m send of chunk c happens in step s

Two dialects render the cardinality constraints. ``lia`` uses sums of ``(ite b 1 0)``
against ``bound * r_s`` and is plain QF_LIA. ``z3`` uses z3's ``at-most``/``pbeq``
primitives, case-splitting the bandwidth constraint over each possible ``r_s``; z3 solves
this form far faster.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Union

from .instance import SynthesisInstance
from .schedule import Schedule
from .topology import distances_from, distances_to

Expr = Union[str, int, bool, tuple]


class DecodeError(ValueError):
    pass


def st(c: int, n: int) -> str:
    return f"st_{c}_{n}"


def snd(n: int, c: int, m: int) -> str:
    return f"snd_{n}_{c}_{m}"


def rounds_var(s: int) -> str:
    return f"r_{s}"


def ind(n: int, c: int, m: int, s: int) -> str:
    return f"ind_{n}_{c}_{m}_{s}"


def _sum(terms: list) -> Expr:
    if not terms:
        return 0
    if len(terms) == 1:
        return terms[0]
    return ("+", *terms)


def _count(bools: list[str]) -> Expr:
    return _sum([("ite", b, 1, 0) for b in bools])


def _any(bools: list[str]) -> Expr:
    if not bools:
        return False
    return bools[0] if len(bools) == 1 else ("or", *bools)


DIALECTS = ("z3", "lia")


@dataclass
class ConstraintSystem:
    int_vars: list[str] = field(default_factory=list)
    bool_vars: list[str] = field(default_factory=list)
    assertions: list[Expr] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)
    logic: Optional[str] = "QF_LIA"  # None leaves the solver's full language enabled

    def add(self, tag: str, expr: Expr) -> None:
        self.assertions.append(expr)
        self.tags.append(tag)

    def declared(self) -> list[str]:
        return self.int_vars + self.bool_vars

    def tagged(self, tag: str) -> Iterator[Expr]:
        return (a for a, t in zip(self.assertions, self.tags) if t == tag)

    def to_smtlib(self) -> str:
        lines = ["(set-option :produce-models true)"]
        if self.logic:
            lines.append(f"(set-logic {self.logic})")
        lines += [f"(declare-fun {v} () Int)" for v in self.int_vars]
        lines += [f"(declare-fun {v} () Bool)" for v in self.bool_vars]
        lines += [f"(assert {render(a)})" for a in self.assertions]
        lines += ["(check-sat)", "(get-model)", "(exit)"]
        return "\n".join(lines) + "\n"


def render(expr: Expr) -> str:
    if isinstance(expr, bool):
        return "true" if expr else "false"
    if isinstance(expr, int):
        return str(expr) if expr >= 0 else f"(- {-expr})"
    if isinstance(expr, str):
        return expr
    op, *args = expr
    if op == "atmost":
        k, *bools = args
        return f"((_ at-most {k}) {' '.join(render(b) for b in bools)})"
    if op == "pbeq":
        k, *bools = args
        weights = " ".join("1" for _ in bools)
        return f"((_ pbeq {k} {weights}) {' '.join(render(b) for b in bools)})"
    return f"({op} {' '.join(render(a) for a in args)})"


def evaluate(expr: Expr, model: Mapping[str, Union[int, bool]]):
    if isinstance(expr, (bool, int)):
        return expr
    if isinstance(expr, str):
        return model[expr]
    op, *args = expr
    if op == "ite":
        return evaluate(args[1], model) if evaluate(args[0], model) else evaluate(args[2], model)
    if op == "and":
        return all(evaluate(a, model) for a in args)
    if op == "or":
        return any(evaluate(a, model) for a in args)
    if op == "=>":
        return (not evaluate(args[0], model)) or bool(evaluate(args[1], model))
    if op == "atmost":
        return sum(bool(evaluate(b, model)) for b in args[1:]) <= args[0]
    if op == "pbeq":
        return sum(bool(evaluate(b, model)) for b in args[1:]) == args[0]
    vals = [evaluate(a, model) for a in args]
    if op == "not":
        return not vals[0]
    if op == "+":
        return sum(vals)
    if op == "-":
        return -vals[0] if len(vals) == 1 else vals[0] - sum(vals[1:])
    if op == "*":
        out = 1
        for v in vals:
            out *= v
        return out
    if op == "=":
        return all(v == vals[0] for v in vals[1:])
    if op == "<=":
        return all(a <= b for a, b in zip(vals, vals[1:]))
    if op == "<":
        return all(a < b for a, b in zip(vals, vals[1:]))
    if op == ">=":
        return all(a >= b for a, b in zip(vals, vals[1:]))
    if op == ">":
        return all(a > b for a, b in zip(vals, vals[1:]))
    raise ValueError(f"unknown operator {op!r}")


def encode(
    inst: SynthesisInstance, *, dialect: str = "z3", distance_bounds: bool = True, relevance: bool = True
) -> ConstraintSystem:
    """Emit the constraint system for ``inst``.

    Assertions are tagged pre, post, receive (one sender per arrival), causal (a sender
    holds the chunk earlier), bandwidth and rounds, plus the optional dist and relevant groups.

    ``distance_bounds`` adds implied lower bounds ``st_c_n >= hops from the nearest initial
    holder of c``; they prune the search without changing satisfiability.

    ``relevance`` keeps a chunk away from nodes that neither need it nor can pass it on to
    a node that does in the remaining steps. This excludes some valid schedules (ones with
    useless sends) but never all of them: deleting every send that does not lie on a path
    to a required holder leaves a valid schedule that meets the bound.
    """
    if dialect not in DIALECTS:
        raise ValueError(f"unknown dialect {dialect!r}; expected one of {DIALECTS}")
    pb = dialect == "z3"
    G, S, P = inst.G, inst.S, inst.P
    links = inst.topology.sorted_links()
    never = S + 1
    pre = set(inst.pre)
    cs = ConstraintSystem(logic=None if pb else "QF_LIA")

    cs.int_vars += [st(c, n) for c in range(G) for n in range(P)]
    cs.int_vars += [rounds_var(s) for s in range(1, S + 1)]
    cs.bool_vars += [snd(n, c, m) for c in range(G) for n, m in links]
    cs.bool_vars += [ind(n, c, m, s) for s in range(1, S + 1) for c in range(G) for n, m in links]

    for c in range(G):
        for n in range(P):
            cs.add("domain", ("<=", 0, st(c, n), never))
    for s in range(1, S + 1):
        cs.add("domain", (">=", rounds_var(s), 1))

    for c, n in sorted(pre):
        cs.add("pre", ("=", st(c, n), 0))
    for c, n in sorted(inst.post):
        cs.add("post", ("<=", st(c, n), S))

    incoming = defaultdict(list)
    for n, m in links:
        incoming[m].append(n)
    for c in range(G):
        for m in range(P):
            if (c, m) in pre:
                continue
            senders = [snd(n, c, m) for n in incoming[m]]
            if pb:
                exactly_one = ("pbeq", 1, *senders) if senders else False
                cs.add("receive", ("=>", ("<=", st(c, m), S), exactly_one))
                cs.add("receive", ("=>", ("=", st(c, m), never), ("not", _any(senders))))
            else:
                received = _count(senders)
                cs.add("receive", ("=>", ("<=", st(c, m), S), ("=", received, 1)))
                cs.add("receive", ("=>", ("=", st(c, m), never), ("=", received, 0)))

    for c in range(G):
        for n, m in links:
            cs.add("causal", ("=>", snd(n, c, m), ("<", st(c, n), st(c, m))))

    for s in range(1, S + 1):
        for c in range(G):
            for n, m in links:
                cs.add("ind", ("=", ind(n, c, m, s), ("and", snd(n, c, m), ("=", st(c, m), s))))
    for s in range(1, S + 1):
        for con in inst.topology.constraints:
            edges = sorted(con.edges & inst.topology.links)
            if not edges:
                continue
            indicators = [ind(n, c, m, s) for c in range(G) for n, m in edges]
            if not pb:
                cs.add("bandwidth", ("<=", _count(indicators), ("*", con.bound, rounds_var(s))))
                continue
            for r in range(1, inst.R - S + 2):
                cap = con.bound * r
                if cap < len(indicators):
                    cs.add("bandwidth", ("=>", ("=", rounds_var(s), r), ("atmost", cap, *indicators)))

    cs.add("rounds", ("=", _sum([rounds_var(s) for s in range(1, S + 1)]), inst.R))

    if distance_bounds:
        holders = defaultdict(set)
        for c, n in pre:
            holders[c].add(n)
        for c in range(G):
            dist = distances_from(inst.topology, holders[c])
            for n in range(P):
                d = dist.get(n, never)
                if d > S:
                    cs.add("dist", ("=", st(c, n), never))
                elif d > 0:
                    cs.add("dist", (">=", st(c, n), d))

    if relevance:
        post = set(inst.post)
        needers = defaultdict(set)
        for c, n in post:
            needers[c].add(n)
        for c in range(G):
            dist = distances_to(inst.topology, needers[c])
            for n in range(P):
                if (c, n) in pre or (c, n) in post:
                    continue
                latest = S - dist.get(n, never)
                if latest < 1:
                    cs.add("relevant", ("=", st(c, n), never))
                elif latest < S:
                    cs.add("relevant", ("or", ("<=", st(c, n), latest), ("=", st(c, n), never)))
    return cs


def decode(model: Mapping[str, Union[int, bool]], inst: SynthesisInstance) -> Schedule:
    G, S, P = inst.G, inst.S, inst.P
    try:
        rounds = tuple(int(model[rounds_var(s)]) for s in range(1, S + 1))
        sends = set()
        for c in range(G):
            for n, m in inst.topology.sorted_links():
                if model[snd(n, c, m)]:
                    arrival = int(model[st(c, m)])
                    if 1 <= arrival <= S:
                        sends.add((c, n, m, arrival - 1))
    except KeyError as exc:
        raise DecodeError(f"model has no value for {exc.args[0]}") from None
    return Schedule(S, rounds, frozenset(sends))


def model_of_schedule(schedule: Schedule, inst: SynthesisInstance) -> dict[str, Union[int, bool]]:
    """The canonical assignment a valid schedule induces on the encoding's variables."""
    G, S, P = inst.G, inst.S, inst.P
    model: dict[str, Union[int, bool]] = {}
    for c in range(G):
        for n in range(P):
            model[st(c, n)] = S + 1
    for c, n in inst.pre:
        model[st(c, n)] = 0
    for c, n, m, t in schedule.sends:
        model[st(c, m)] = t + 1
    for s in range(1, S + 1):
        model[rounds_var(s)] = schedule.rounds[s - 1]
    sent = {(c, n, m): t + 1 for c, n, m, t in schedule.sends}
    for c in range(G):
        for n, m in inst.topology.sorted_links():
            model[snd(n, c, m)] = (c, n, m) in sent
            for s in range(1, S + 1):
                model[ind(n, c, m, s)] = sent.get((c, n, m)) == s
    return model
