import json
import subprocess
import sys

import pytest

from souproc.cli import main

SMALL = """
seed = 3
[model]
gamma = 1.0
beta = 0.5
[initial]
kind = "gaussian"
[numerics]
N = 20
h = 0.02
t_max = 1.0
[scenario]
name = "martingale_problem"
replicates = 4
"""

STRICT = """
seed = 5
[model]
gamma = 1.0
beta = 0.5
[numerics]
N = 100
t_max = 10.0
[scenario]
name = "extinction_probability"
replicates = 50
[scenario.params]
abs_tolerance = 0.0
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text(SMALL)
    return p


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    names = [line.split("\t")[0] for line in out.splitlines()]
    for n in ("attractive_convergence", "extinction_point", "repelling_com", "mass_martingale",
              "martingale_problem"):
        assert n in names


def test_usage_errors(capsys, tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text(SMALL.replace("gamma = 1.0", "gamma = []"))
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "model.gamma" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == 2
    assert main(["report", str(tmp_path / "nothing")]) == 2
    assert main(["calibrate", "nope"]) == 2


def test_run_twice_identical(small_cfg, tmp_path, capsys):
    for sub in ("a", "b"):
        assert main(["run", str(small_cfg), "--seed", "42", "--out", str(tmp_path / sub)]) in (0, 1)
    for name in ("timeseries.csv", "summaries.jsonl", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed_base"] == 42 and man["replicate_seeds"] == [42, 43, 44, 45]


def test_threads_flag_and_env(small_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("SOUPROC_THREADS", "3")
    main(["run", str(small_cfg), "--out", str(tmp_path / "env")])
    man = json.loads((tmp_path / "env" / "manifest.json").read_text())
    assert man["threads"] == 3 and man["thread_source"] == "env:SOUPROC_THREADS"
    main(["run", str(small_cfg), "--threads", "2", "--out", str(tmp_path / "flag")])
    man = json.loads((tmp_path / "flag" / "manifest.json").read_text())
    assert man["threads"] == 2 and man["thread_source"] == "flag"
    assert (tmp_path / "env" / "summaries.jsonl").read_bytes() == \
        (tmp_path / "flag" / "summaries.jsonl").read_bytes()
    monkeypatch.setenv("SOUPROC_THREADS", "many")
    assert main(["run", str(small_cfg), "--out", str(tmp_path / "x")]) == 2


def test_gating_failure_exit_one(tmp_path, capsys):
    p = tmp_path / "strict.toml"
    p.write_text(STRICT)
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "FAIL" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "o")]) == 1


def test_report_detects_tampering(small_cfg, tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["run", str(small_cfg), "--out", str(out)])
    capsys.readouterr()
    assert main(["report", str(out)]) == code
    assert "warning" not in capsys.readouterr().err
    p = out / "summaries.jsonl"
    recs = [json.loads(x) for x in p.read_text().splitlines()]
    for r in recs:
        r["values"] = {k: (v * 100 if isinstance(v, float) else v) for k, v in r["values"].items()}
    p.write_text("".join(json.dumps(r) + "\n" for r in recs))
    main(["report", str(out)])
    err = capsys.readouterr().err
    assert "digest mismatch for summaries.jsonl" in err


def test_builtin_name_and_replicate_override(tmp_path, capsys):
    assert main(["run", "invariant_suite", "--out", str(tmp_path / "inv")]) == 0
    assert "n_failed" in capsys.readouterr().out
    assert main(["run", "volterra_identity", "--replicates", "2", "--out", str(tmp_path / "v")]) == 0
    man = json.loads((tmp_path / "v" / "manifest.json").read_text())
    assert len(man["replicate_seeds"]) == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "souproc.cli", "list-scenarios"], capture_output=True, text=True)
    assert r.returncode == 0 and "volterra_identity" in r.stdout
