"""Regression suite over known synthesis results.

A manifest is a JSON document ``{"version": 1, "rows": [...]}``. Each row names a
``collective``, a ``topology`` selector, ``C``/``S``/``R`` in the collective's own terms, the
``expected`` status and the optimality ``tags`` it is known for. ``root`` defaults to 0 for
rooted collectives, and ``unknown_ok`` lets a solver timeout pass for rows known to be slow.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .collectives import Kind, parse_kind
from .schedule import Composition, ExecutionError, execute, verify, verify_combining, combining_instance
from .solver import DEFAULT_TIMEOUT, SolverConfig, Status
from .synthesis import SynthesisResult, synthesize
from .topology import Topology, topology_from_selector


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    collective: str
    topology: str
    C: int
    S: int
    R: int
    expected: str = "sat"
    tags: tuple[str, ...] = ()
    root: Optional[int] = None
    unknown_ok: bool = False

    @property
    def key(self) -> tuple:
        return (self.collective, self.topology, self.C, self.S, self.R)

    @property
    def label(self) -> str:
        return f"{self.collective} {self.topology} C={self.C} S={self.S} R={self.R}"


@dataclass
class ExpectedManifest:
    rows: list[ManifestRow]

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.key in seen:
                raise ManifestError(f"duplicate manifest row {row.key}")
            seen.add(row.key)

    def select(self, pred: Callable[[ManifestRow], bool]) -> ExpectedManifest:
        return ExpectedManifest([r for r in self.rows if pred(r)])


def parse_manifest(text: str) -> ExpectedManifest:
    try:
        doc = json.loads(text)
        rows = []
        for item in doc["rows"]:
            parse_kind(item["collective"])
            expected = item.get("expected", "sat")
            if expected not in {s.value for s in Status}:
                raise ManifestError(f"bad expected status {expected!r}")
            rows.append(ManifestRow(
                collective=item["collective"], topology=item["topology"],
                C=int(item["C"]), S=int(item["S"]), R=int(item["R"]),
                expected=expected, tags=tuple(item.get("tags", ())),
                root=item.get("root"), unknown_ok=bool(item.get("unknown_ok", False)),
            ))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"malformed manifest: {exc}") from exc
    return ExpectedManifest(rows)


def load_manifest(path: Union[str, Path, None] = None) -> ExpectedManifest:
    """Load ``path``, or the manifest shipped with the package."""
    if path is None:
        text = resources.files("collsynth").joinpath("data/manifest.json").read_text()
    else:
        text = Path(path).read_text()
    return parse_manifest(text)


@dataclass
class RowResult:
    row: ManifestRow
    status: str
    verified: Optional[bool]
    seconds: float
    passed: bool
    detail: str = ""


@dataclass
class SuiteReport:
    results: list[RowResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def summary(self) -> str:
        ok = sum(r.passed for r in self.results)
        return f"{ok}/{len(self.results)} rows match the manifest"

    def to_json(self) -> str:
        rows = []
        for r in self.results:
            d = asdict(r.row)
            d["tags"] = list(r.row.tags)
            rows.append({"row": d, "status": r.status, "verified": r.verified,
                         "seconds": round(r.seconds, 3), "passed": r.passed, "detail": r.detail})
        return json.dumps({"passed": self.passed, "summary": self.summary(), "rows": rows}, indent=1) + "\n"

    def to_markdown(self) -> str:
        lines = [
            "| collective | topology | C | S | R | optimality | expected | status | verified | seconds | result |",
            "|---|---|---|---|---|---|---|---|---|---|---|",
        ]
        for r in self.results:
            row = r.row
            tags = ", ".join(row.tags) or "-"
            verified = {True: "yes", False: "NO", None: "-"}[r.verified]
            result = "pass" if r.passed else "FAIL"
            lines.append(
                f"| {row.collective} | {row.topology} | {row.C} | {row.S} | {row.R} | {tags} | {row.expected}"
                f" | {r.status} | {verified} | {r.seconds:.1f} | {result} |"
            )
        lines.append("")
        lines.append(self.summary())
        return "\n".join(lines) + "\n"


def recheck(result: SynthesisResult, topology: Topology) -> list[str]:
    """Independent re-verification of a synthesized schedule; empty means clean."""
    sched, inst = result.schedule, result.instance
    if isinstance(sched, Composition):
        try:
            execute(sched, inst, seed=1)
        except ExecutionError as exc:
            return [str(exc)]
        return []
    if result.kind.combining:
        return [str(v) for v in verify_combining(sched, combining_instance(inst, topology))]
    return [str(v) for v in verify(sched, inst)]


def run_row(row: ManifestRow, timeout: float, config: Optional[SolverConfig] = None) -> RowResult:
    topology = topology_from_selector(row.topology)
    kind = Kind(row.collective)
    root = row.root if row.root is not None or not kind.rooted else 0
    res = synthesize(kind, topology, row.C, row.S, row.R, root, timeout, config)
    verified = None
    detail = res.reason
    if res.sat:
        problems = recheck(res, topology)
        verified = not problems
        detail = "; ".join(problems[:3])
    status = res.status.value
    passed = status == row.expected and verified is not False
    if status == Status.UNKNOWN.value and row.unknown_ok:
        passed = True
        detail = (detail + "; " if detail else "") + "undecided within the timeout, accepted for this row"
    return RowResult(row, status, verified, res.solver_time, passed, detail)


def run_suite(
    manifest: ExpectedManifest,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    jobs: int = 1,
    on_row: Optional[Callable[[RowResult], None]] = None,
) -> SuiteReport:
    """Run every manifest row; the report lists rows in manifest order."""
    rows: Iterable[ManifestRow] = manifest.rows
    report = SuiteReport()
    if jobs <= 1:
        for row in rows:
            r = run_row(row, timeout, config)
            report.results.append(r)
            if on_row:
                on_row(r)
        return report
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_row, row, timeout, config) for row in rows]
        for fut in futures:
            r = fut.result()
            report.results.append(r)
            if on_row:
                on_row(r)
    return report
