"""The (alpha, beta) cost model: a schedule with S steps, R rounds and C chunks moving L bytes
costs ``S*alpha + (R/C)*L*beta``.

All arithmetic uses :class:`fractions.Fraction` so comparisons between algorithms are exact.
Float or decimal-string inputs are converted exactly via ``Fraction(str(x))``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

Number = Union[int, float, str, Fraction]

# A plausible NVLink-class pair for examples only: 0.7 us latency, 1 / (22 GB/s) per byte.
EXAMPLE_ALPHA = Fraction(7, 10_000_000)
EXAMPLE_BETA = Fraction(1, 22_000_000_000)


def exact(x: Number) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


@dataclass(frozen=True)
class CostPoint:
    steps: int
    bw_ratio: Fraction
    alpha: Fraction
    beta: Fraction
    size: Fraction

    @property
    def time(self) -> Fraction:
        return self.steps * self.alpha + self.bw_ratio * self.size * self.beta


def time(S: int, R: int, C: int, alpha: Number, beta: Number, L: Number) -> Fraction:
    if C == 0:
        raise ZeroDivisionError("C must be at least 1")
    if C < 0 or S < 0 or R < 0:
        raise ValueError("S, R and C must be non-negative")
    alpha, beta, L = exact(alpha), exact(beta), exact(L)
    if alpha < 0 or beta < 0 or L < 0:
        raise ValueError("alpha, beta and size must be non-negative")
    return CostPoint(S, Fraction(R, C), alpha, beta, L).time


def crossover(a: tuple[int, int, int], b: tuple[int, int, int], alpha: Number, beta: Number) -> Optional[Fraction]:
    """Size L > 0 where ``a`` and ``b`` (each ``(S, R, C)``) cost the same, or None.

    None means the cost lines never cross at a positive size: they coincide, are parallel,
    or one is cheaper at every L > 0.
    """
    alpha, beta = exact(alpha), exact(beta)
    (Sa, Ra, Ca), (Sb, Rb, Cb) = a, b
    slope = (Fraction(Ra, Ca) - Fraction(Rb, Cb)) * beta
    offset = (Sb - Sa) * alpha
    if slope == 0:
        return None
    L = offset / slope
    return L if L > 0 else None


def best_for_size(frontier: Sequence[tuple[int, int, int]], alpha: Number, beta: Number,
                  sizes: Iterable[Number]) -> list[tuple[Fraction, int, Fraction]]:
    """For each size, ``(size, index into frontier, predicted time)`` of the cheapest entry.

    Ties go to the entry with fewer steps, then to the earlier one.
    """
    if not frontier:
        raise ValueError("empty frontier")
    out = []
    for L in sizes:
        L = exact(L)
        costs = [(time(S, R, C, alpha, beta, L), S, i) for i, (S, R, C) in enumerate(frontier)]
        t, _, i = min(costs)
        out.append((L, i, t))
    return out


def breakpoints(frontier: Sequence[tuple[int, int, int]], alpha: Number, beta: Number) -> list[Fraction]:
    """Sorted positive pairwise crossovers; the winner can only change at these sizes."""
    points = set()
    for i, a in enumerate(frontier):
        for b in frontier[i + 1:]:
            L = crossover(a, b, alpha, beta)
            if L is not None:
                points.add(L)
    return sorted(points)


def parse_size(text: str) -> int:
    """Byte count from ``4096``, ``64K``, ``1MB``, ``2GiB`` (binary multiples)."""
    t = text.strip().upper().removesuffix("IB").removesuffix("B")
    mult = 1
    for suffix, m in (("K", 1 << 10), ("M", 1 << 20), ("G", 1 << 30), ("T", 1 << 40)):
        if t.endswith(suffix):
            t, mult = t[:-1], m
            break
    value = Fraction(t) * mult
    if value < 0 or value.denominator != 1:
        raise ValueError(f"bad size {text!r}")
    return int(value)


def size_range(lo: int, hi: int) -> list[int]:
    """Powers of two from ``lo`` to ``hi`` inclusive."""
    out, L = [], max(1, lo)
    while L <= hi:
        out.append(L)
        L *= 2
    return out


def cost_rows(frontier: Sequence[tuple[int, int, int]], alpha: Number, beta: Number, sizes: Iterable[Number],
              winners_only: bool = False) -> list[dict]:
    rows = []
    sizes = [exact(L) for L in sizes]
    winners = {L: i for L, i, _ in best_for_size(frontier, alpha, beta, sizes)} if winners_only else None
    for L in sizes:
        for i, (S, R, C) in enumerate(frontier):
            if winners is not None and winners[L] != i:
                continue
            rows.append({
                "size_bytes": L, "entry_id": i, "S": S, "R": R, "C": C,
                "predicted_time": time(S, R, C, alpha, beta, L),
            })
    return rows


def _fmt(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    return f"{float(x):.6g}"


COLUMNS = ("size_bytes", "entry_id", "S", "R", "C", "predicted_time")


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(Fraction(r[c])) for c in COLUMNS])
    return buf.getvalue()


def to_markdown(rows: list[dict]) -> str:
    lines = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(Fraction(r[c])) for c in COLUMNS) + " |")
    return "\n".join(lines) + "\n"
