from __future__ import annotations

from dataclasses import dataclass

from .topology import Topology


@dataclass(frozen=True)
class SynthesisInstance:
    """One feasibility query: G chunks, S steps, R rounds on a topology with pre/post placements."""

    G: int
    S: int
    R: int
    topology: Topology
    pre: frozenset
    post: frozenset

    def __post_init__(self):
        if self.G < 1:
            raise ValueError("G must be at least 1")
        if self.S < 1:
            raise ValueError("S must be at least 1")
        if self.R < self.S:
            raise ValueError(f"R={self.R} < S={self.S}: every step needs at least one round")
        P = self.topology.num_nodes
        for rel_name, rel in (("pre", self.pre), ("post", self.post)):
            for c, n in rel:
                if not (0 <= c < self.G and 0 <= n < P):
                    raise ValueError(f"{rel_name} entry ({c},{n}) out of range")

    @property
    def P(self) -> int:
        return self.topology.num_nodes
