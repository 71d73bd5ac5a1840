import json

import pytest

from collsynth.cli import EXIT_OK, EXIT_UNSAT, EXIT_USAGE, main
from collsynth.schedule import serialize
from collsynth.topology import build_ring

from conftest import requires_solver


@pytest.fixture
def ring_ag_file(tmp_path, ring_ag, ring4):
    path = tmp_path / "ring_ag.json"
    path.write_text(serialize(ring_ag, collective="allgather", topology=ring4, G=4, C=1))
    return path


def test_verify_ok(ring_ag_file, capsys):
    assert main(["verify", str(ring_ag_file)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "Ok"


def test_verify_and_exec_refuse_tampered(ring_ag_file, capsys):
    data = json.loads(ring_ag_file.read_text())
    data["sends"] = [s for s in data["sends"] if s != [2, 3, 0, 1]]
    ring_ag_file.write_text(json.dumps(data))
    assert main(["verify", str(ring_ag_file)]) == EXIT_UNSAT
    assert "postcondition" in capsys.readouterr().out
    assert main(["exec", str(ring_ag_file)]) == EXIT_UNSAT
    assert "refusing" in capsys.readouterr().out


def test_exec_digest_is_seeded(ring_ag_file, capsys):
    assert main(["exec", str(ring_ag_file), "--seed", "4"]) == EXIT_OK
    first = capsys.readouterr().out
    assert first.startswith("Ok digest=")
    main(["exec", str(ring_ag_file), "--seed", "4"])
    assert capsys.readouterr().out == first
    main(["exec", str(ring_ag_file), "--seed", "5"])
    assert capsys.readouterr().out != first


def test_topology_override_warns(ring_ag_file, tmp_path, capsys):
    wide = tmp_path / "wide.json"
    wide.write_text(json.dumps(build_ring(4, bw=2).to_dict()))
    assert main(["verify", str(ring_ag_file), "--topology", f"file:{wide}"]) == EXIT_OK
    assert "warning" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["synth", "allgather"]) == EXIT_USAGE
    assert main(["synth", "nonsense", "--topology", "ring:4", "-C", "1", "-S", "1", "-R", "1"]) == EXIT_USAGE
    assert main(["verify", str(tmp_path / "missing.json")]) == EXIT_USAGE
    (tmp_path / "bad.json").write_text("{")
    assert main(["verify", str(tmp_path / "bad.json")]) == EXIT_USAGE
    assert main(["synth", "allgather", "--topology", "torus", "-C", "1", "-S", "1", "-R", "1"]) == EXIT_USAGE
    assert main(["cost", "--alpha", "1", "--beta", "1"]) == EXIT_USAGE
    assert main(["cost", "--alpha", "1", "--beta", "1", "--entry", "1,2"]) == EXIT_USAGE


def test_cost_flips_winner(capsys):
    # alpha = 1, beta = 1: the crossover of (2,3,2) and (3,7,6) is at 3 bytes
    argv = ["cost", "--alpha", "1", "--beta", "1", "--entry", "2,3,2", "--entry", "3,7,6",
            "--sizes", "2,4", "--winners"]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr()
    rows = out.out.strip().splitlines()
    assert rows[0] == "size_bytes,entry_id,S,R,C,predicted_time"
    assert [r.split(",")[1] for r in rows[1:]] == ["0", "1"]
    assert "crossover at 3 bytes" in out.err


def test_cost_markdown_to_file(tmp_path):
    out = tmp_path / "t.md"
    assert main(["cost", "--alpha", "7e-7", "--beta", "1/22000000000", "--entry", "7,7,6",
                 "--sizes", "1K:4K", "--markdown", "-o", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].startswith("| size_bytes") and len(lines) == 5


def test_oracle_command(capsys):
    assert main(["oracle", "allgather", "--topology", "ring:4", "-C", "1", "-S", "1", "-R", "1"]) == EXIT_UNSAT
    assert capsys.readouterr().out.strip() == "unsat"
    assert main(["oracle", "allgather", "--topology", "ring:4", "-C", "1", "-S", "2", "-R", "2"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("sat\n") and json.loads(out[4:])["S"] == 2
    assert main(["oracle", "reduce", "--topology", "ring:4", "-C", "1", "-S", "2", "-R", "2"]) == EXIT_USAGE


@requires_solver
def test_synth_verify_exec_round_trip(tmp_path, capsys):
    out = tmp_path / "ag.json"
    assert main(["synth", "allgather", "--topology", "ring:4", "-C", "1", "-S", "2", "-R", "2", "-o", str(out)]) == 0
    assert main(["verify", str(out)]) == EXIT_OK
    assert main(["exec", str(out)]) == EXIT_OK
    assert main(["synth", "allgather", "--topology", "ring:4", "-C", "1", "-S", "1", "-R", "1"]) == EXIT_UNSAT
    assert "unsat" in capsys.readouterr().err


@requires_solver
@pytest.mark.parametrize("kind,C,S,R", [("reducescatter", 4, 2, 3), ("allreduce", 4, 4, 4), ("reduce", 1, 2, 2)])
def test_combining_files_verify_and_exec(tmp_path, kind, C, S, R):
    out = tmp_path / f"{kind}.json"
    argv = ["synth", kind, "--topology", "ring:4", "-C", str(C), "-S", str(S), "-R", str(R), "-o", str(out)]
    assert main(argv) == EXIT_OK
    assert main(["verify", str(out)]) == EXIT_OK
    assert main(["exec", str(out), "--seed", "9"]) == EXIT_OK


@requires_solver
def test_pareto_report_feeds_cost(tmp_path, capsys):
    report = tmp_path / "front.json"
    argv = ["pareto", "allgather", "--topology", "ring:4", "-k", "1", "-o", str(report),
            "--schedule-dir", str(tmp_path / "s")]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert "C=2 S=2 R=3 R/C=3/2 tags=bandwidth,latency" in out
    assert "bandwidth bound R/C >= 3/2" in out
    data = json.loads(report.read_text())
    assert [(e["C"], e["S"], e["R"]) for e in data["entries"]] == [(2, 2, 3)]
    files = list((tmp_path / "s").iterdir())
    assert len(files) == 1 and main(["verify", str(files[0])]) == EXIT_OK
    assert main(["cost", str(report), "--alpha", "1", "--beta", "1", "--sizes", "1K"]) == EXIT_OK


@requires_solver
def test_pareto_incomplete_marker(capsys):
    assert main(["pareto", "broadcast", "--topology", "ring:4", "-k", "0", "--max-steps", "3"]) == EXIT_OK
    assert "frontier incomplete" in capsys.readouterr().out
