import os
import stat
import sys

import pytest

from collsynth.encoding import ConstraintSystem, encode
from collsynth.solver import (
    SolverConfig,
    SolverConfigError,
    SolverProtocolError,
    Status,
    check_model,
    parse_model,
    parse_sexprs,
    solve,
    tokenize,
)
from collsynth.topology import build_dgx1

from conftest import allgather_instance, requires_solver


def _system(*assertions) -> ConstraintSystem:
    cs = ConstraintSystem(int_vars=["x"], bool_vars=["b"])
    for a in assertions:
        cs.add("t", a)
    return cs


def _fake_solver(tmp_path, body: str) -> SolverConfig:
    """A stand-in solver executable that ignores its input and runs ``body``."""
    script = tmp_path / "fake-solver"
    script.write_text(f"#!{sys.executable}\nimport sys, time\nsys.stdin.read()\n{body}\n")
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return SolverConfig(executable=str(script), args="", dialect="lia")


@requires_solver
def test_trivial_sat():
    res = solve(_system((">=", "x", 1), ("<=", "x", 1)), timeout=30)
    assert res.status is Status.SAT
    assert res.model["x"] == 1
    assert res.wall_time >= 0


@requires_solver
def test_trivial_unsat():
    res = solve(_system((">=", "x", 1), ("<=", "x", 0)), timeout=30)
    assert res.status is Status.UNSAT and res.model is None


@requires_solver
def test_dgx1_allgather_latency_point():
    res = solve(encode(allgather_instance(build_dgx1(), 1, 2, 2)), timeout=120)
    assert res.sat


@requires_solver
def test_resolve_is_deterministic():
    cs = encode(allgather_instance(build_dgx1(), 2, 2, 2))
    assert solve(cs, timeout=120).status == solve(cs, timeout=120).status


def test_check_model():
    cs = _system((">=", "x", 1), ("=", "b", True))
    assert check_model(cs, {"x": 1, "b": True})
    assert not check_model(cs, {"x": 1, "b": False})
    assert not check_model(cs, {"x": 1})


def test_tokenize_and_parse():
    assert tokenize("(a |b c| ; comment\n \"s\")") == ["(", "a", "b c", '"s"', ")"]
    assert parse_sexprs("(a (b c)) d") == [["a", ["b", "c"]], "d"]
    with pytest.raises(ValueError):
        parse_sexprs("(a")
    with pytest.raises(ValueError):
        parse_sexprs("a)")


def test_parse_model_shapes():
    text = "((define-fun x () Int (- 3)) (define-fun b () Bool true) (define-fun f ((y Int)) Int y))"
    assert parse_model(parse_sexprs(text)) == {"x": -3, "b": True}
    wrapped = "(model (define-fun x () Int 2))"
    assert parse_model(parse_sexprs(wrapped)) == {"x": 2}


def test_missing_binary():
    cfg = SolverConfig(executable="definitely-not-a-solver-binary")
    with pytest.raises(SolverConfigError):
        solve(_system((">=", "x", 1)), timeout=5, config=cfg)


def test_garbage_output_is_protocol_error(tmp_path):
    cfg = _fake_solver(tmp_path, "print('hello there')")
    with pytest.raises(SolverProtocolError) as info:
        solve(_system((">=", "x", 1)), timeout=10, config=cfg)
    assert "hello there" in info.value.transcript


def test_wrong_model_is_rejected(tmp_path):
    cfg = _fake_solver(tmp_path, "print('sat'); print('((define-fun x () Int 0))')")
    with pytest.raises(SolverProtocolError, match="violates"):
        solve(_system((">=", "x", 1)), timeout=10, config=cfg)


def test_unparsable_model(tmp_path):
    cfg = _fake_solver(tmp_path, "print('sat'); print('((define-fun x () Int')")
    with pytest.raises(SolverProtocolError):
        solve(_system((">=", "x", 1)), timeout=10, config=cfg)


def test_timeout_is_unknown(tmp_path):
    cfg = _fake_solver(tmp_path, "time.sleep(30)")
    res = solve(_system((">=", "x", 1)), timeout=1, config=cfg)
    assert res.status is Status.UNKNOWN
    assert "timeout" in res.reason


def test_unknown_answer(tmp_path):
    cfg = _fake_solver(tmp_path, "print('unknown')")
    assert solve(_system((">=", "x", 1)), timeout=10, config=cfg).status is Status.UNKNOWN


def test_omitted_variables_default(tmp_path):
    cfg = _fake_solver(tmp_path, "print('sat'); print('((define-fun x () Int 4))')")
    res = solve(_system((">=", "x", 1)), timeout=10, config=cfg)
    assert res.model == {"x": 4, "b": False}


@requires_solver
def test_file_argument_template_and_transcripts(tmp_path):
    cfg = SolverConfig(args="-smt2 {file}", transcript_dir=tmp_path / "tx")
    res = solve(_system((">=", "x", 2), ("<=", "x", 2)), timeout=30, config=cfg, label="two")
    assert res.model["x"] == 2
    assert (tmp_path / "tx" / "two.smt2").read_text().startswith("(set-option")
    assert (tmp_path / "tx" / "two.out").read_text().startswith("sat")


def test_env_configuration(monkeypatch):
    monkeypatch.setenv("SCCL_SOLVER", "/opt/cvc5")
    monkeypatch.setenv("SCCL_SOLVER_ARGS", "--lang smt2 {file}")
    monkeypatch.delenv("SCCL_SMT_DIALECT", raising=False)
    cfg = SolverConfig.from_env()
    assert cfg.executable == "/opt/cvc5" and "{file}" in cfg.args
    assert cfg.encoding_dialect() == "lia"
    monkeypatch.setenv("SCCL_SMT_DIALECT", "z3")
    assert SolverConfig.from_env().encoding_dialect() == "z3"
    monkeypatch.delenv("SCCL_SOLVER")
    monkeypatch.delenv("SCCL_SMT_DIALECT")
    assert SolverConfig.from_env().encoding_dialect() == "z3"
