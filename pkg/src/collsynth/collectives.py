"""Pre/post chunk placements for the standard collectives.

A placement is a frozenset of ``(chunk, node)`` pairs. Chunks of per-node input ``i`` at
node ``n`` get the global id ``i * P + n`` wherever the input is scattered.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

ChunkPlacement = frozenset  # frozenset[tuple[int, int]]


class CollectiveError(ValueError):
    pass


class Kind(str, enum.Enum):
    GATHER = "gather"
    ALLGATHER = "allgather"
    ALLTOALL = "alltoall"
    BROADCAST = "broadcast"
    SCATTER = "scatter"
    REDUCE = "reduce"
    REDUCESCATTER = "reducescatter"
    ALLREDUCE = "allreduce"

    @property
    def combining(self) -> bool:
        return self in COMBINING

    @property
    def rooted(self) -> bool:
        return self in ROOTED


COMBINING = frozenset({Kind.REDUCE, Kind.REDUCESCATTER, Kind.ALLREDUCE})
ROOTED = frozenset({Kind.GATHER, Kind.SCATTER, Kind.BROADCAST, Kind.REDUCE})

# Non-combining collective each combining one is derived from.
DUAL = {
    Kind.REDUCE: Kind.BROADCAST,
    Kind.REDUCESCATTER: Kind.ALLGATHER,
    Kind.ALLREDUCE: Kind.ALLGATHER,
}


# Kinds whose per-node chunk count C describes the full buffer rather than one node's share.
WHOLE_BUFFER = frozenset({Kind.REDUCESCATTER, Kind.ALLREDUCE, Kind.SCATTER})


def parse_kind(name: str) -> Kind:
    try:
        return Kind(name.lower())
    except ValueError:
        names = ", ".join(k.value for k in Kind)
        raise CollectiveError(f"unknown collective {name!r}; expected one of {names}") from None


def relation_all(G: int, P: int) -> ChunkPlacement:
    return frozenset((c, n) for c in range(G) for n in range(P))


def relation_root(G: int, root: int, P: Optional[int] = None) -> ChunkPlacement:
    if root < 0 or (P is not None and root >= P):
        raise CollectiveError(f"root {root} out of range")
    return frozenset((c, root) for c in range(G))


def relation_scattered(G: int, P: int) -> ChunkPlacement:
    if G % P:
        raise CollectiveError(f"scattered placement needs G divisible by P (G={G}, P={P})")
    return frozenset((c, c % P) for c in range(G))


def relation_transpose(G: int, P: int) -> ChunkPlacement:
    if G % (P * P):
        raise CollectiveError(f"transpose placement needs G divisible by P^2 (G={G}, P={P})")
    return frozenset((c, (c // P) % P) for c in range(G))


def to_global(kind: Kind, C: int, P: int) -> int:
    """Global chunk count G for ``C`` chunks per node.

    For Reducescatter, Allreduce and Scatter, ``C`` counts the chunks of a whole input
    buffer, which already spans every node's share, so G equals C and must split evenly
    over the nodes.
    """
    kind = Kind(kind)
    if C < 1:
        raise CollectiveError("need at least one chunk per node")
    if kind in (Kind.BROADCAST, Kind.REDUCE):
        return C
    if kind in WHOLE_BUFFER:
        if C % P:
            raise CollectiveError(f"{kind.value} needs C divisible by P (C={C}, P={P})")
        return C
    if kind is Kind.ALLTOALL and C % P:
        raise CollectiveError(f"alltoall needs C divisible by P (C={C}, P={P})")
    return P * C


def dual_chunks(kind: Kind, C: int, P: int) -> int:
    """Per-node chunk count of the non-combining dual used to build ``kind``."""
    kind = Kind(kind)
    if kind in (Kind.REDUCESCATTER, Kind.ALLREDUCE):
        to_global(kind, C, P)
        return C // P
    return C


def combining_chunks(kind: Kind, dual_C: int, P: int) -> int:
    """Inverse of :func:`dual_chunks`."""
    kind = Kind(kind)
    if kind in (Kind.REDUCESCATTER, Kind.ALLREDUCE):
        return dual_C * P
    return dual_C


@dataclass(frozen=True)
class CollectiveSpec:
    kind: Kind
    P: int
    per_node_chunks: int
    root: Optional[int]
    G: int
    pre: ChunkPlacement
    post: ChunkPlacement
    combining: bool

    @property
    def dual_kind(self) -> Kind:
        return DUAL.get(self.kind, self.kind)


def _placements(kind: Kind, G: int, P: int, root: Optional[int]):
    if kind is Kind.GATHER:
        return relation_scattered(G, P), relation_root(G, root, P)
    if kind is Kind.ALLGATHER:
        return relation_scattered(G, P), relation_all(G, P)
    if kind is Kind.ALLTOALL:
        return relation_scattered(G, P), relation_transpose(G, P)
    if kind is Kind.BROADCAST:
        return relation_root(G, root, P), relation_all(G, P)
    if kind is Kind.SCATTER:
        return relation_root(G, root, P), relation_scattered(G, P)
    raise CollectiveError(f"{kind.value} has no direct placement")


def make_spec(kind, P: int, C: int, root: Optional[int] = None) -> CollectiveSpec:
    """Build the spec; combining kinds carry the pre/post of their non-combining dual."""
    kind = Kind(kind)
    needs_root = kind in ROOTED
    if needs_root and root is None:
        raise CollectiveError(f"{kind.value} needs a root")
    if not needs_root:
        root = None
    G = to_global(kind, C, P)
    pre, post = _placements(DUAL.get(kind, kind), G, P, root)
    if not pre:
        raise CollectiveError("empty pre-condition")
    return CollectiveSpec(kind, P, C, root, G, pre, post, kind.combining)


def combining_placements(spec: CollectiveSpec):
    """(contributors, destinations) for a Reduce or Reducescatter spec.

    These are the dual's post and pre: every holder in the dual's post contributes its own
    version, and the dual's source of each chunk is where the reduced value must land.
    """
    if spec.kind not in (Kind.REDUCE, Kind.REDUCESCATTER):
        raise CollectiveError(f"{spec.kind.value} is not a single-root combining collective")
    return spec.post, spec.pre
