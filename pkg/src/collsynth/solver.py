"""Drive an external SMT-LIB2 solver process.

The solver is ``$SCCL_SOLVER`` (default: ``z3`` on ``PATH``) run with ``$SCCL_SOLVER_ARGS``
(default ``-smt2 -in``). The argument template may contain ``{file}``, in which case the
script is written to a temporary file instead of stdin, and ``{timeout}`` (seconds).
``$SCCL_SMT_DIALECT`` picks the encoding dialect; by default z3 gets its pseudo-Boolean
primitives and any other solver plain QF_LIA.
"""

from __future__ import annotations

import enum
import logging
import os
import shlex
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from .encoding import ConstraintSystem, evaluate, render

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0
DEFAULT_ARGS = "-smt2 -in"


class SolverConfigError(RuntimeError):
    pass


class SolverProtocolError(RuntimeError):
    def __init__(self, message: str, transcript: str = ""):
        super().__init__(message)
        self.transcript = transcript


class Status(str, enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass
class SolverResult:
    status: Status
    model: Optional[dict[str, Union[int, bool]]] = None
    reason: str = ""
    wall_time: float = 0.0

    @property
    def sat(self) -> bool:
        return self.status is Status.SAT


@dataclass
class SolverConfig:
    executable: Optional[str] = None
    args: str = DEFAULT_ARGS
    transcript_dir: Optional[Path] = None
    extra: list[str] = field(default_factory=list)
    dialect: Optional[str] = None

    @classmethod
    def from_env(cls, transcript_dir: Optional[Path] = None) -> SolverConfig:
        return cls(
            executable=os.environ.get("SCCL_SOLVER"),
            args=os.environ.get("SCCL_SOLVER_ARGS", DEFAULT_ARGS),
            transcript_dir=transcript_dir,
            dialect=os.environ.get("SCCL_SMT_DIALECT") or None,
        )

    def encoding_dialect(self) -> str:
        if self.dialect:
            return self.dialect
        name = os.path.basename(self.executable or "z3").lower()
        return "z3" if name.startswith("z3") else "lia"

    def resolve(self) -> str:
        exe = self.executable or "z3"
        path = shutil.which(exe)
        if path is None:
            raise SolverConfigError(f"SMT solver {exe!r} not found; set SCCL_SOLVER to a QF_LIA solver")
        return path


# -- s-expressions -----------------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    tokens, i, n = [], 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            tokens.append(ch)
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch == '"':
            j = i + 1
            while j < n and not (text[j] == '"' and (j + 1 >= n or text[j + 1] != '"')):
                j += 2 if text[j] == '"' else 1
            tokens.append(text[i : j + 1])
            i = j + 1
        elif ch == "|":
            j = text.index("|", i + 1)
            tokens.append(text[i + 1 : j])
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "();":
                j += 1
            tokens.append(text[i:j])
            i = j
    return tokens


def parse_sexprs(text: str) -> list:
    """Parse every top-level s-expression in ``text`` into nested lists of atoms."""
    stack: list[list] = [[]]
    for tok in tokenize(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ValueError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise ValueError("unbalanced '('")
    return stack[0]


def _value(term):
    if isinstance(term, str):
        if term == "true":
            return True
        if term == "false":
            return False
        return int(term)
    if len(term) == 2 and term[0] == "-":
        return -_value(term[1])
    raise ValueError(f"unsupported model value {term!r}")


def parse_model(forms: list) -> dict[str, Union[int, bool]]:
    if len(forms) == 1 and isinstance(forms[0], list):
        forms = forms[0]
    if forms and forms[0] == "model":
        forms = forms[1:]
    model = {}
    for item in forms:
        if not isinstance(item, list) or not item or item[0] != "define-fun":
            continue
        _, name, params, _sort, body = item
        if params:
            continue
        model[name] = _value(body)
    return model


# -- solving -----------------------------------------------------------------------------


def check_model(cs: ConstraintSystem, model) -> bool:
    """True iff every assertion holds under ``model``; a missing variable counts as failure."""
    try:
        return all(bool(evaluate(a, model)) for a in cs.assertions)
    except KeyError:
        return False


def failing_assertions(cs: ConstraintSystem, model) -> list[str]:
    out = []
    for a, tag in zip(cs.assertions, cs.tags):
        try:
            ok = evaluate(a, model)
        except KeyError as exc:
            out.append(f"[{tag}] unassigned {exc.args[0]}")
            continue
        if not ok:
            out.append(f"[{tag}] {render(a)}")
    return out


def _command(config: SolverConfig, timeout: float, script_path: Optional[str]) -> list[str]:
    args = config.args.format(file=script_path or "", timeout=int(max(1, timeout)))
    return [config.resolve(), *shlex.split(args), *config.extra]


def solve(
    cs: ConstraintSystem,
    timeout: float = DEFAULT_TIMEOUT,
    config: Optional[SolverConfig] = None,
    *,
    label: str = "query",
) -> SolverResult:
    config = config or SolverConfig.from_env()
    script = cs.to_smtlib()
    uses_file = "{file}" in config.args
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="collsynth-") as tmp:
        script_path = None
        if uses_file:
            script_path = os.path.join(tmp, "query.smt2")
            Path(script_path).write_text(script)
        cmd = _command(config, timeout, script_path)
        log.debug("running %s", " ".join(cmd))
        try:
            proc = subprocess.run(
                cmd,
                input=None if uses_file else script,
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired:
            elapsed = time.monotonic() - started
            _write_transcript(config, label, script, "<timeout>")
            return SolverResult(Status.UNKNOWN, reason=f"timeout after {timeout:g}s", wall_time=elapsed)
        except OSError as exc:
            raise SolverConfigError(f"cannot start solver: {exc}") from exc
    elapsed = time.monotonic() - started
    output = proc.stdout
    _write_transcript(config, label, script, output + proc.stderr)
    return _interpret(cs, output, proc.stderr, proc.returncode, elapsed)


def _interpret(cs: ConstraintSystem, output: str, stderr: str, returncode: int, elapsed: float) -> SolverResult:
    stripped = output.lstrip()
    head, _, rest = stripped.partition("\n")
    head = head.strip()
    if head == "unsat":
        return SolverResult(Status.UNSAT, wall_time=elapsed)
    if head in ("unknown", "timeout"):
        return SolverResult(Status.UNKNOWN, reason=head, wall_time=elapsed)
    if head != "sat":
        if not stripped and returncode != 0:
            return SolverResult(Status.UNKNOWN, reason=f"solver exited {returncode}: {stderr.strip()[:200]}",
                                wall_time=elapsed)
        raise SolverProtocolError(f"unexpected solver response {head[:80]!r}", output + stderr)
    try:
        model = parse_model(parse_sexprs(rest))
    except (ValueError, IndexError) as exc:
        raise SolverProtocolError(f"cannot parse model: {exc}", output) from exc
    # Solvers may drop variables that no assertion constrains; any value works for those.
    for name in cs.int_vars:
        model.setdefault(name, 0)
    for name in cs.bool_vars:
        model.setdefault(name, False)
    if not check_model(cs, model):
        bad = failing_assertions(cs, model)[:5]
        raise SolverProtocolError("solver model violates assertions: " + "; ".join(bad), output)
    return SolverResult(Status.SAT, model=model, wall_time=elapsed)


def _write_transcript(config: SolverConfig, label: str, script: str, response: str) -> None:
    if config.transcript_dir is None:
        return
    d = Path(config.transcript_dir)
    d.mkdir(parents=True, exist_ok=True)
    stem = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in label)
    (d / f"{stem}.smt2").write_text(script)
    (d / f"{stem}.out").write_text(response)
