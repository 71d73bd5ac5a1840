"""Command-line interface.

Exit codes: 0 Sat/Ok, 1 usage or I/O error, 2 Unsat (or an invalid schedule / failed suite),
3 Unknown (solver timeout).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, costmodel
from .collectives import CollectiveError, Kind, parse_kind, to_global
from .encoding import DIALECTS
from .oracle import OracleBudgetError, brute_force
from .reporting import ManifestError, load_manifest, run_suite
from .schedule import ExecutionError, ScheduleError, deserialize, execute, serialize
from .solver import DEFAULT_TIMEOUT, SolverConfig, SolverConfigError, SolverProtocolError, Status
from .synthesis import (
    DEFAULT_MAX_STEPS,
    FrontierEntry,
    check_schedule,
    make_instance,
    pareto_synthesize,
    synthesize,
)
from .topology import TopologyError, topology_from_selector

EXIT_OK, EXIT_USAGE, EXIT_UNSAT, EXIT_UNKNOWN = 0, 1, 2, 3
_STATUS_EXIT = {Status.SAT: EXIT_OK, Status.UNSAT: EXIT_UNSAT, Status.UNKNOWN: EXIT_UNKNOWN}


class UsageError(Exception):
    pass


def _collective(name: str) -> Kind:
    try:
        return parse_kind(name)
    except CollectiveError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="seconds per solver query")
    p.add_argument("--transcript-dir", type=Path, help="write every SMT-LIB2 query and response here")
    p.add_argument("--dialect", choices=DIALECTS, help="constraint dialect (default: z3 for z3, else lia)")


def _solver_config(args) -> SolverConfig:
    config = SolverConfig.from_env(args.transcript_dir)
    if args.dialect:
        config.dialect = args.dialect
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collsynth", description="Synthesize collective communication schedules.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="synthesize one (C, S, R) point")
    p.add_argument("collective", type=_collective)
    p.add_argument("--topology", required=True)
    p.add_argument("-C", type=int, required=True, help="chunks per node")
    p.add_argument("-S", type=int, required=True, help="steps")
    p.add_argument("-R", type=int, required=True, help="rounds")
    p.add_argument("--root", type=int)
    p.add_argument("--output", "-o", type=Path, help="schedule file (default: stdout)")
    p.add_argument("--direct", action="store_true", help="skip the coarse-step probe and query S steps directly")
    _solver_args(p)

    p = sub.add_parser("pareto", help="search the Pareto frontier of k-synchronous algorithms")
    p.add_argument("collective", type=_collective)
    p.add_argument("--topology", required=True)
    p.add_argument("-k", type=int, required=True)
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--root", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", "-o", type=Path, help="frontier report (JSON)")
    p.add_argument("--schedule-dir", type=Path, help="write each entry's schedule file here")
    _solver_args(p)

    p = sub.add_parser("verify", help="check a schedule file")
    p.add_argument("schedule", type=Path)
    p.add_argument("--topology", help="override the topology named in the file")

    p = sub.add_parser("exec", help="run a schedule over seeded payloads")
    p.add_argument("schedule", type=Path)
    p.add_argument("--topology")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("cost", help="alpha-beta cost tables")
    p.add_argument("inputs", nargs="*", type=Path, help="schedule files or pareto reports")
    p.add_argument("--entry", action="append", default=[], metavar="S,R,C", help="add an entry by hand")
    p.add_argument("--alpha", required=True, help="seconds per step, e.g. 7e-7 or 7/10000000")
    p.add_argument("--beta", required=True, help="seconds per byte on a unit link")
    p.add_argument("--sizes", default="1K:1G", help="LO:HI (powers of two) or a comma list, e.g. 1K,64K,1M")
    p.add_argument("--winners", action="store_true", help="only the cheapest entry per size")
    p.add_argument("--markdown", action="store_true")
    p.add_argument("--output", "-o", type=Path)

    p = sub.add_parser("suite", help="re-run the known-results manifest")
    p.add_argument("--manifest", type=Path, help="default: the manifest shipped with the package")
    p.add_argument("--only", action="append", default=[], metavar="TEXT",
                   help="keep rows whose label contains TEXT (repeatable)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--json", type=Path, help="write the JSON report here")
    p.add_argument("--markdown", type=Path, help="write the markdown report here")
    _solver_args(p)

    # debugging aid: exhaustive search on tiny instances
    p = sub.add_parser("oracle", help="decide a small instance by exhaustive search")
    p.add_argument("collective", type=_collective)
    p.add_argument("--topology", required=True)
    p.add_argument("-C", type=int, required=True)
    p.add_argument("-S", type=int, required=True)
    p.add_argument("-R", type=int, required=True)
    p.add_argument("--root", type=int)
    return parser


def _emit(text: str, path: Optional[Path]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def cmd_synth(args) -> int:
    topology = topology_from_selector(args.topology)
    res = synthesize(args.collective, topology, args.C, args.S, args.R, args.root, args.timeout, _solver_config(args),
                     refine=not args.direct)
    note = f", split from {res.refined_from} steps" if res.refined_from else ""
    print(f"{res.status.value} ({res.solver_time:.1f}s{note})", file=sys.stderr)
    if not res.sat:
        if res.reason:
            print(res.reason, file=sys.stderr)
        return _STATUS_EXIT[res.status]
    root = _root_for(args.collective, args.root)
    problems, _ = check_schedule(args.collective, res.schedule, topology, args.C, root)
    if problems:
        print("internal error, synthesized schedule fails verification:", *problems, sep="\n  ", file=sys.stderr)
        return EXIT_USAGE
    G = res.instance.G
    _emit(serialize(res.schedule, collective=args.collective.value, topology=topology, G=G, C=args.C, root=root),
          args.output)
    return EXIT_OK


def _root_for(kind: Kind, root: Optional[int]) -> Optional[int]:
    if not kind.rooted:
        return None
    return 0 if root is None else root


def _entry_json(e: FrontierEntry, index: int) -> dict:
    d = {"id": index, "C": e.C, "S": e.S, "R": e.R, "ratio": str(e.ratio), "tags": sorted(e.tags),
         "solver_seconds": round(e.solver_time, 3), "proven": e.proven}
    if e.dual:
        d["dual"] = list(e.dual)
    return d


def cmd_pareto(args) -> int:
    topology = topology_from_selector(args.topology)
    kind = args.collective
    root = _root_for(kind, args.root)
    count = 0

    def stream(e: FrontierEntry) -> None:
        nonlocal count
        tags = ",".join(sorted(e.tags)) or "-"
        note = "" if e.proven else " (not proven optimal)"
        print(f"C={e.C} S={e.S} R={e.R} R/C={e.ratio} tags={tags} {e.solver_time:.1f}s{note}", flush=True)
        if args.schedule_dir:
            args.schedule_dir.mkdir(parents=True, exist_ok=True)
            G = to_global(kind, e.C, topology.num_nodes)
            path = args.schedule_dir / f"{kind.value}-C{e.C}-S{e.S}-R{e.R}.json"
            path.write_text(serialize(e.schedule, collective=kind.value, topology=topology, G=G, C=e.C, root=root))
        count += 1

    frontier = pareto_synthesize(args.k, kind, topology, root, args.max_steps, args.timeout, _solver_config(args),
                                 jobs=args.jobs, on_entry=stream)
    print(f"latency bound {frontier.latency_bound} steps, bandwidth bound R/C >= {frontier.bandwidth_bound}")
    for u in frontier.undecided:
        print(f"undecided: C={u.C} S={u.S} R={u.R} ({u.reason})")
    if frontier.incomplete:
        print(f"frontier incomplete: stopped at --max-steps {args.max_steps}")
    if args.output:
        report = {
            "collective": kind.value, "topology": topology.name, "k": args.k,
            "latency_bound": frontier.latency_bound, "bandwidth_bound": str(frontier.bandwidth_bound),
            "incomplete": frontier.incomplete,
            "entries": [_entry_json(e, i) for i, e in enumerate(frontier.entries)],
            "undecided": [{"C": u.C, "S": u.S, "R": u.R, "reason": u.reason} for u in frontier.undecided],
        }
        args.output.write_text(json.dumps(report, indent=1) + "\n")
    if not frontier.entries:
        return EXIT_UNKNOWN if frontier.undecided else EXIT_UNSAT
    return EXIT_OK if not frontier.undecided else EXIT_UNKNOWN


def _load_document(args):
    doc = deserialize(args.schedule.read_text())
    selector = args.topology or doc.topology_name
    topology = topology_from_selector(selector)
    for warning in doc.check_topology(topology):
        print(f"warning: {warning}", file=sys.stderr)
    return doc, topology


def cmd_verify(args) -> int:
    doc, topology = _load_document(args)
    kind = parse_kind(doc.collective)
    problems, _ = check_schedule(kind, doc.schedule, topology, doc.C, doc.root)
    if problems:
        print(f"{len(problems)} violation(s):")
        for p in problems:
            print(f"  {p}")
        return EXIT_UNSAT
    print("Ok")
    return EXIT_OK


def cmd_exec(args) -> int:
    doc, topology = _load_document(args)
    kind = parse_kind(doc.collective)
    problems, inst = check_schedule(kind, doc.schedule, topology, doc.C, doc.root)
    if problems:
        print("refusing to execute an invalid schedule:")
        for p in problems:
            print(f"  {p}")
        return EXIT_UNSAT
    combining = kind.combining and kind is not Kind.ALLREDUCE
    try:
        buffers = execute(doc.schedule, inst, seed=args.seed, combining=combining)
    except ExecutionError as exc:
        print(f"execution failed: {exc}")
        return EXIT_UNSAT
    print(f"Ok digest={buffers.digest()}")
    return EXIT_OK


def _parse_sizes(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return costmodel.size_range(costmodel.parse_size(lo), costmodel.parse_size(hi))
    return [costmodel.parse_size(t) for t in text.split(",") if t.strip()]


def _cost_entries(args) -> list[tuple[int, int, int]]:
    entries = []
    for path in args.inputs:
        data = json.loads(path.read_text())
        if "entries" in data:
            entries += [(e["S"], e["R"], e["C"]) for e in data["entries"]]
        else:
            doc = deserialize(path.read_text())
            entries.append((doc.schedule.num_steps, doc.schedule.total_rounds, doc.C))
    for text in args.entry:
        try:
            S, R, C = (int(x) for x in text.split(","))
        except ValueError:
            raise UsageError(f"--entry expects S,R,C, got {text!r}") from None
        entries.append((S, R, C))
    if not entries:
        raise UsageError("no entries: pass schedule files, a pareto report, or --entry S,R,C")
    return entries


def cmd_cost(args) -> int:
    entries = _cost_entries(args)
    try:
        alpha, beta = Fraction(args.alpha), Fraction(args.beta)
        sizes = _parse_sizes(args.sizes)
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(str(exc)) from None
    rows = costmodel.cost_rows(entries, alpha, beta, sizes, winners_only=args.winners)
    text = costmodel.to_markdown(rows) if args.markdown else costmodel.to_csv(rows)
    _emit(text, args.output)
    for L in costmodel.breakpoints(entries, alpha, beta):
        print(f"crossover at {float(L):.6g} bytes", file=sys.stderr)
    return EXIT_OK


def cmd_suite(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.only:
        manifest = manifest.select(lambda r: any(t in r.label for t in args.only))

    def progress(r):
        mark = "pass" if r.passed else "FAIL"
        print(f"{mark}  {r.row.label}: {r.status} {r.seconds:.1f}s {r.detail}".rstrip(), flush=True)

    report = run_suite(manifest, args.timeout, _solver_config(args), jobs=args.jobs, on_row=progress)
    print(report.summary())
    if args.json:
        args.json.write_text(report.to_json())
    if args.markdown:
        args.markdown.write_text(report.to_markdown())
    return EXIT_OK if report.passed else EXIT_UNSAT


def cmd_oracle(args) -> int:
    topology = topology_from_selector(args.topology)
    if args.collective.combining:
        raise UsageError("the oracle handles non-combining collectives only")
    inst = make_instance(args.collective, topology, args.C, args.S, args.R, args.root)
    found = brute_force(inst)
    if found is None:
        print("unsat")
        return EXIT_UNSAT
    print("sat")
    sys.stdout.write(serialize(found, collective=args.collective.value, topology=topology, G=inst.G, C=args.C,
                               root=_root_for(args.collective, args.root)))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "pareto": cmd_pareto, "verify": cmd_verify, "exec": cmd_exec,
    "cost": cmd_cost, "suite": cmd_suite, "oracle": cmd_oracle,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, CollectiveError, TopologyError, ScheduleError, ManifestError, OracleBudgetError,
            SolverConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverProtocolError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN


if __name__ == "__main__":
    sys.exit(main())
