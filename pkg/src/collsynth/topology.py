"""Topologies as node sets with grouped per-round bandwidth constraints."""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from pathlib import Path
from typing import Iterable

Edge = tuple[int, int]


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class BandwidthConstraint:
    """At most ``bound`` chunks per round may cross the edges in ``edges``, summed."""

    edges: frozenset[Edge]
    bound: int

    def __post_init__(self):
        if not self.edges:
            raise TopologyError("bandwidth constraint with an empty edge set")
        if not isinstance(self.bound, int) or self.bound < 0:
            raise TopologyError(f"bound must be a non-negative integer, got {self.bound!r}")


@dataclass(frozen=True)
class Topology:
    name: str
    num_nodes: int
    constraints: tuple[BandwidthConstraint, ...]

    def __post_init__(self):
        if self.num_nodes < 1:
            raise TopologyError("num_nodes must be positive")
        for con in self.constraints:
            for src, dst in con.edges:
                if not (0 <= src < self.num_nodes and 0 <= dst < self.num_nodes):
                    raise TopologyError(f"edge ({src},{dst}) out of range for P={self.num_nodes}")
        for src, dst in self.links:
            if src == dst:
                raise TopologyError(f"self-loop ({src},{dst}) in link set")

    @cached_property
    def links(self) -> frozenset[Edge]:
        """Directed pairs with non-zero bandwidth under every constraint that mentions them."""
        mentioned: set[Edge] = set()
        blocked: set[Edge] = set()
        for con in self.constraints:
            mentioned |= con.edges
            if con.bound == 0:
                blocked |= con.edges
        return frozenset(mentioned - blocked)

    def sorted_links(self) -> list[Edge]:
        return sorted(self.links)

    def in_neighbors(self, node: int) -> list[int]:
        return sorted(src for src, dst in self.links if dst == node)

    def out_neighbors(self, node: int) -> list[int]:
        return sorted(dst for src, dst in self.links if src == node)

    def edge_capacity(self, edge: Edge) -> int:
        """Tightest single-constraint bound on one edge (chunks per round)."""
        bounds = [con.bound for con in self.constraints if edge in con.edges]
        return min(bounds) if bounds else 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "num_nodes": self.num_nodes,
            "constraints": [
                {"edges": [list(e) for e in sorted(con.edges)], "bound": con.bound}
                for con in self.constraints
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Topology:
        try:
            constraints = tuple(
                BandwidthConstraint(frozenset((int(s), int(d)) for s, d in c["edges"]), int(c["bound"]))
                for c in data["constraints"]
            )
            return cls(str(data["name"]), int(data["num_nodes"]), constraints)
        except (KeyError, TypeError) as exc:
            raise TopologyError(f"malformed topology document: {exc}") from exc

    def digest(self) -> str:
        """Stable content hash, independent of constraint order."""
        body = self.to_dict()
        body["constraints"] = sorted(body["constraints"], key=lambda c: (c["edges"], c["bound"]))
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _bidirectional(pairs: Iterable[Edge], bound: int) -> list[BandwidthConstraint]:
    out = []
    for a, b in pairs:
        out.append(BandwidthConstraint(frozenset({(a, b)}), bound))
        out.append(BandwidthConstraint(frozenset({(b, a)}), bound))
    return out


def _cycle_pairs(order: list[int]) -> list[Edge]:
    return [(order[i], order[(i + 1) % len(order)]) for i in range(len(order))]


DGX1_DOUBLE_RING = [0, 1, 4, 5, 6, 7, 2, 3]
DGX1_SINGLE_RING = [0, 2, 1, 3, 6, 4, 7, 5]


def build_dgx1() -> Topology:
    """8 V100 GPUs: two disjoint Hamiltonian NVLink cycles, one doubled."""
    constraints = _bidirectional(_cycle_pairs(DGX1_DOUBLE_RING), 2)
    constraints += _bidirectional(_cycle_pairs(DGX1_SINGLE_RING), 1)
    return Topology("dgx1", 8, tuple(constraints))


def build_amd_z52() -> Topology:
    # All unit 8-rings are isomorphic, so the physical GPU order does not matter.
    return Topology("amd-z52", 8, tuple(_bidirectional(_cycle_pairs(list(range(8))), 1)))


def build_ring(num_nodes: int, bw: int = 1) -> Topology:
    if num_nodes < 2:
        raise TopologyError("a ring needs at least 2 nodes")
    if num_nodes == 2:
        pairs = [(0, 1)]
    else:
        pairs = _cycle_pairs(list(range(num_nodes)))
    return Topology(f"ring:{num_nodes}", num_nodes, tuple(_bidirectional(pairs, bw)))


def build_line(num_nodes: int, bw: int = 1) -> Topology:
    if num_nodes < 2:
        raise TopologyError("a line needs at least 2 nodes")
    pairs = [(i, i + 1) for i in range(num_nodes - 1)]
    return Topology(f"line:{num_nodes}", num_nodes, tuple(_bidirectional(pairs, bw)))


def build_fully_connected(num_nodes: int, bw: int = 1) -> Topology:
    if num_nodes < 1:
        raise TopologyError("need at least one node")
    constraints = tuple(
        BandwidthConstraint(frozenset({(a, b)}), bw)
        for a in range(num_nodes)
        for b in range(num_nodes)
        if a != b
    )
    return Topology(f"full:{num_nodes}", num_nodes, constraints)


def load_topology(path: str | Path) -> Topology:
    with open(path) as fh:
        return Topology.from_dict(json.load(fh))


def topology_from_selector(selector: str) -> Topology:
    """Resolve ``dgx1``, ``amd-z52``, ``ring:N``, ``line:N``, ``full:N`` or ``file:PATH``."""
    if selector == "dgx1":
        return build_dgx1()
    if selector in ("amd-z52", "amd"):
        return build_amd_z52()
    kind, _, arg = selector.partition(":")
    if kind == "file" and arg:
        return load_topology(arg)
    builders = {"ring": build_ring, "line": build_line, "full": build_fully_connected}
    if kind in builders and arg:
        try:
            n = int(arg)
        except ValueError:
            raise TopologyError(f"bad node count in topology selector {selector!r}") from None
        return builders[kind](n)
    raise TopologyError(f"unknown topology selector {selector!r}")


def _bfs(topology: Topology, sources: Iterable[int], backwards: bool = False) -> dict[int, int]:
    adjacency: dict[int, list[int]] = {n: [] for n in range(topology.num_nodes)}
    for src, dst in topology.links:
        if backwards:
            src, dst = dst, src
        adjacency[src].append(dst)
    dist = {s: 0 for s in sources}
    queue = deque(dist)
    while queue:
        node = queue.popleft()
        for nxt in adjacency[node]:
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    return dist


def distances_from(topology: Topology, sources: Iterable[int]) -> dict[int, int]:
    """Hop distance from the nearest of ``sources``; unreachable nodes are absent."""
    return _bfs(topology, sources)


def distances_to(topology: Topology, targets: Iterable[int]) -> dict[int, int]:
    """Hop distance to the nearest of ``targets``; nodes that cannot reach them are absent."""
    return _bfs(topology, targets, backwards=True)


def diameter(topology: Topology) -> int:
    best = 0
    for src in range(topology.num_nodes):
        dist = _bfs(topology, [src])
        for dst in range(topology.num_nodes):
            if dst not in dist:
                raise TopologyError(f"unreachable pair ({src},{dst}) in {topology.name}")
        best = max(best, max(dist.values()))
    return best


def cut_capacity(topology: Topology, edges: frozenset[Edge]) -> Fraction:
    """Upper bound on chunks per round over ``edges`` (LP relaxation of the constraint system)."""
    edges = edges & topology.links
    if not edges:
        return Fraction(0)
    relevant = [con for con in topology.constraints if con.edges & edges]
    if all(len(con.edges) == 1 for con in relevant):
        return Fraction(sum(topology.edge_capacity(e) for e in edges))
    from scipy.optimize import linprog

    order = sorted(edges)
    index = {e: i for i, e in enumerate(order)}
    a_ub, b_ub = [], []
    for con in relevant:
        row = [0.0] * len(order)
        for e in con.edges & edges:
            row[index[e]] = 1.0
        a_ub.append(row)
        b_ub.append(float(con.bound))
    res = linprog([-1.0] * len(order), A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs")
    # Round up so the derived lower bound can only get looser.
    return Fraction(math.ceil(-res.fun * 1000 - 1e-9), 1000)


def bandwidth_lower_bound(topology, pre, post, num_chunks: int, per_node_chunks: int) -> Fraction:
    """Lower bound on R/C from per-node ingress and, for P <= 8, every directed cut.

    A node set X must receive every chunk some member needs but no member starts with; all of
    those cross the edges entering X, which carry at most ``cut_capacity`` chunks per round.
    """
    P = topology.num_nodes
    holders: dict[int, set[int]] = {}
    for c, n in pre:
        holders.setdefault(c, set()).add(n)
    wanted: dict[int, set[int]] = {}
    for c, n in post:
        wanted.setdefault(c, set()).add(n)

    if P <= 8:
        subsets = (
            frozenset(x)
            for size in range(1, P)
            for x in itertools.combinations(range(P), size)
        )
    else:
        subsets = (frozenset({n}) for n in range(P))

    best = Fraction(0)
    for side in subsets:
        demand = sum(
            1
            for c in range(num_chunks)
            if wanted.get(c, set()) & side and not holders.get(c, set()) & side
        )
        if demand == 0:
            continue
        entering = frozenset((s, d) for s, d in topology.links if s not in side and d in side)
        capacity = cut_capacity(topology, entering)
        if capacity == 0:
            raise TopologyError(f"infeasible demand: nodes {sorted(side)} need data but have no ingress")
        best = max(best, Fraction(demand) / capacity)
    return best / per_node_chunks
