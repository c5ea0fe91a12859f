import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import small_config
from evgame import cli, scenario as S
from evgame.outer_game import OuterSolution
from evgame.scenario import generate_instance


def test_generate_prints_start_sets(tmp_path, capsys):
    out = tmp_path / "s.json"
    assert cli.main(["generate", "--preset", "paper-default", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "{1,...,5}" in text and "{1,...,11}" in text and "profiles: 30800" in text
    sc = S.load(out)
    assert sc.n_aggregators == 5 and sc.horizon_slots == 16


def test_generate_deterministic(tmp_path):
    a, b, c = (tmp_path / f"{n}.json" for n in "abc")
    cli.main(["generate", "--seed", "42", "--out", str(a)])
    cli.main(["generate", "--seed", "42", "--out", str(b)])
    cli.main(["generate", "--seed", "43", "--out", str(c)])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_generate_errors(tmp_path):
    assert cli.main(["generate", "--preset", "nope", "--out", str(tmp_path / "x")]) == cli.EXIT_USAGE
    assert cli.main(["generate", "--out", str(tmp_path / "no" / "dir" / "x.json")]) == cli.EXIT_IO


def test_bad_arguments_exit_2():
    for argv in (["solve", "--alpha", "1.5"], ["solve", "--beta", "1"], ["tensor", "--workers", "0"]):
        with pytest.raises(SystemExit) as e:
            cli.main(argv)
        assert e.value.code == cli.EXIT_USAGE


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    sc = generate_instance(small_config(), 7)
    S.save(sc, d / "s.json")
    assert cli.main(["tensor", "--scenario", str(d / "s.json"), "--cache", str(d / "t.bin")]) == 0
    return d


def _run(d, *argv):
    return cli.main([argv[0], "--scenario", str(d / "s.json"), "--cache", str(d / "t.bin"), *argv[1:]])


def test_tensor_rerun_is_cache_hit(pipeline, capsys):
    assert _run(pipeline, "tensor") == 0
    out = capsys.readouterr()
    assert "entries: 144/144" in out.out and "tensor digest:" in out.out
    assert out.err.strip().splitlines()[0].strip() == "144/144"


def test_solve_and_coincidence(pipeline):
    d = pipeline
    assert _run(d, "solve", "--model", "eut", "--out", str(d / "eut.json"), "--eps-target", "1e-3") == 0
    assert _run(d, "solve", "--model", "pt", "--alpha", "1.0", "--out", str(d / "pt1.json"),
                "--eps-target", "1e-3") == 0
    a, b = OuterSolution.load(d / "eut.json"), OuterSolution.load(d / "pt1.json")
    assert a.epsilon == b.epsilon and a.iterations == b.iterations
    for x, y in zip(a.strategies, b.strategies):
        np.testing.assert_array_equal(x, y)
    report = (d / "eut.savings.tsv").read_text()
    assert "# scenario_digest:" in report and "# tensor_digest:" in report and "# solution_digest:" in report
    assert report.count("\n") == 3 + 1 + 3 + 1


def test_solve_vector_alpha(pipeline):
    d = pipeline
    code = _run(d, "solve", "--model", "pt", "--alpha", "0.7,0.5,0.9", "--out", str(d / "v.json"),
                "--max-iters", "50")
    assert code in (0, cli.EXIT_CONVERGENCE)
    assert OuterSolution.load(d / "v.json").model.alphas == (0.7, 0.5, 0.9)
    assert _run(d, "solve", "--model", "pt", "--alpha", "0.7,0.5", "--out", str(d / "w.json")) == cli.EXIT_USAGE
    assert _run(d, "solve", "--model", "pt", "--out", str(d / "w.json")) == cli.EXIT_USAGE


def test_solve_unreached_exit_code(pipeline):
    d = pipeline
    assert _run(d, "solve", "--eps-target", "0", "--max-iters", "5", "--out", str(d / "u.json")) == cli.EXIT_CONVERGENCE
    assert OuterSolution.load(d / "u.json").iterations == 5


def test_alpha_sweep(pipeline):
    d = pipeline
    code = _run(d, "solve", "--alpha-sweep", "0.5:1.0:0.25", "--out", str(d / "sweep.tsv"),
                "--eps-target", "1e-2")
    assert code == 0
    rows = [l for l in (d / "sweep.tsv").read_text().splitlines() if not l.startswith("#")]
    assert rows[0].startswith("alpha\t")
    assert [r.split("\t")[0] for r in rows[1:]] == ["0.5", "0.75", "1"]


def test_report(pipeline, capsys):
    d = pipeline
    _run(d, "solve", "--out", str(d / "r1.json"), "--eps-target", "1e-3")
    _run(d, "solve", "--model", "pt", "--alpha", "0.2", "--out", str(d / "r2.json"), "--max-iters", "2000")
    assert _run(d, "report", "--solution", str(d / "r1.json"), str(d / "r2.json"),
                "--out-dir", str(d / "rep")) == 0
    files = sorted(p.name for p in (d / "rep").iterdir())
    assert files == ["expected_load.tsv", "savings_eut.tsv", "savings_pt_0.2.tsv", "slot1_load.tsv"]
    load = (d / "rep" / "expected_load.tsv").read_text().splitlines()
    header = [l for l in load if not l.startswith("#")][0].split("\t")
    assert header == ["slot", "base_load", "uncoordinated", "eut", "pt(0.2)"]
    assert sum(1 for l in load if l[:1].isdigit()) == 8


def test_report_digest_mismatch(pipeline, tmp_path):
    d = pipeline
    _run(d, "solve", "--out", str(d / "m.json"), "--max-iters", "10")
    sol = json.loads((d / "m.json").read_text())
    sol["tensor_digest"] = "0" * 64
    (tmp_path / "bad.json").write_text(json.dumps(sol))
    assert _run(d, "report", "--solution", str(tmp_path / "bad.json"), "--out-dir", str(tmp_path)) == cli.EXIT_INVALID


def test_wrong_scenario_for_cache(pipeline, tmp_path):
    S.save(generate_instance(small_config(), 8), tmp_path / "other.json")
    code = cli.main(["solve", "--scenario", str(tmp_path / "other.json"), "--cache", str(pipeline / "t.bin"),
                     "--out", str(tmp_path / "x.json")])
    assert code == cli.EXIT_INVALID


def test_missing_and_incomplete_inputs(pipeline, tmp_path):
    assert cli.main(["solve", "--scenario", str(tmp_path / "none.json")]) == cli.EXIT_IO
    assert cli.main(["solve", "--scenario", str(pipeline / "s.json"), "--cache", str(tmp_path / "none.bin")]) == cli.EXIT_IO
    (tmp_path / "bad.json").write_text("{}")
    assert cli.main(["tensor", "--scenario", str(tmp_path / "bad.json")]) == cli.EXIT_INVALID


def test_invalid_scenario(tmp_path):
    d = S.to_dict(generate_instance(small_config(), 7))
    d["aggregators"][0]["efficiency"] = 1.5
    (tmp_path / "s.json").write_text(json.dumps(d))
    assert cli.main(["tensor", "--scenario", str(tmp_path / "s.json"), "--cache", str(tmp_path / "t")]) == cli.EXIT_INVALID


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "evgame", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "generate" in r.stdout
