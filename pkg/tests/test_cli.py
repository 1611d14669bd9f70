import json
import subprocess
import sys

import pytest

from maxent_sortition import cli
from maxent_sortition.oracle import generate_instance

from conftest import T1


@pytest.fixture
def t1_file(tmp_path):
    path = tmp_path / "t1.json"
    path.write_text(json.dumps(T1))
    return str(path)


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_count_t1(capsys, t1_file):
    code, out, _ = run(capsys, "count", "--instance", t1_file)
    assert code == 0 and out.strip() == "4"


def test_count_weighted_and_layers(capsys, t1_file, tmp_path):
    w = tmp_path / "w.json"
    w.write_text(json.dumps({"1": 2, "2": 1, "3": 1, "4": 1}))
    code, out, err = run(capsys, "count", "--instance", t1_file, "--weights", str(w),
                         "--report-layers")
    assert out.strip() == "6"
    assert any(json.loads(ln)["event"] == "layer" for ln in err.splitlines())


def test_count_infeasible_prints_zero(capsys, tmp_path):
    bad = json.loads(json.dumps(T1))
    bad["pool"][1]["attributes"]["gender"] = "M"
    bad["quotas"][0]["min"] = bad["quotas"][0]["max"] = 2
    bad["quotas"][1]["min"], bad["quotas"][1]["max"] = 0, 0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    code, out, _ = run(capsys, "count", "--instance", str(path))
    assert code == 0 and out.strip() == "0"
    code, _, err = run(capsys, "sample", "--instance", str(path), "--num", "1", "--quiet")
    assert code == 2 and "error" in json.loads(err.splitlines()[-1])


def test_sample_is_deterministic(capsys, t1_file, tmp_path):
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.jsonl"
        code, _, _ = run(capsys, "sample", "--instance", t1_file, "--num", "3", "--seed", "7",
                         "--out", str(path), "--quiet")
        assert code == 0
        outs.append(path.read_text())
    assert outs[0] == outs[1]
    assert len(outs[0].splitlines()) == 3


def test_holdout_all_features(capsys, tmp_path):
    inst = generate_instance(20, 4, [2, 2, 3], tightness=0.5, seed=1)
    path = tmp_path / "i.json"
    path.write_text(inst.to_json())
    code, out, _ = run(capsys, "holdout", "--instance", str(path), "--all-features",
                       "--num", "200", "--estimate-samples", "500", "--threads", "1", "--quiet")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("feature,probability")
    assert len(lines) == 1 + 3


def test_evaluate_and_lottery(capsys, t1_file, tmp_path):
    panels = tmp_path / "p.jsonl"
    run(capsys, "sample", "--instance", t1_file, "--num", "50", "--out", str(panels), "--quiet")
    code, out, _ = run(capsys, "evaluate", "--instance", t1_file, "--panels", str(panels))
    assert code == 0 and json.loads(out)["m"] == 50
    lot = tmp_path / "l.jsonl"
    code, _, _ = run(capsys, "lottery", "--instance", t1_file, "--m", "10", "--out", str(lot),
                     "--quiet")
    assert code == 0
    code, out, _ = run(capsys, "lottery-draw", "--lottery", str(lot), "--public-seed", "23")
    assert code == 0 and json.loads(out)["index"] == 3
    code, _, _ = run(capsys, "lottery-draw", "--lottery", str(lot), "--index", "10")
    assert code == 4


def test_fair_sample(capsys, t1_file, tmp_path):
    targets = tmp_path / "t.json"
    targets.write_text(json.dumps({"1": 0.6, "2": 0.4, "3": 0.5, "4": 0.5}))
    diag = tmp_path / "d.jsonl"
    code, out, _ = run(capsys, "fair-sample", "--instance", t1_file, "--targets", str(targets),
                       "--batch", "2000", "--iters", "50", "--num", "20",
                       "--diagnostics", str(diag), "--quiet")
    assert code == 0
    assert len(out.splitlines()) == 20
    assert diag.read_text().count("\n") >= 1


def test_verify(capsys, t1_file):
    code, out, _ = run(capsys, "verify", "--instance", t1_file)
    assert code == 0 and json.loads(out)["agree"] is True


def test_usage_and_io_errors(capsys, tmp_path):
    assert run(capsys, "count", "--instance", str(tmp_path / "missing.json"))[0] == 4
    assert run(capsys, "frobnicate")[0] == 4
    assert run(capsys)[0] == 4
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    code, _, err = run(capsys, "count", "--instance", str(broken))
    assert code == 4 and "line 1" in err


def test_timeout_exit_code(capsys, tmp_path):
    impossible = {
        "panel_size": 2,
        "features": [{"name": "g", "values": ["F", "M"]}, {"name": "h", "values": ["a", "b"]}],
        "quotas": [{"feature": "g", "value": "F", "min": 1, "max": 1},
                   {"feature": "g", "value": "M", "min": 1, "max": 1},
                   {"feature": "h", "value": "a", "min": 2, "max": 2},
                   {"feature": "h", "value": "b", "min": 0, "max": 0}],
        "pool": [{"id": "1", "attributes": {"g": "F", "h": "b"}},
                 {"id": "2", "attributes": {"g": "F", "h": "b"}},
                 {"id": "3", "attributes": {"g": "M", "h": "a"}},
                 {"id": "4", "attributes": {"g": "M", "h": "b"}}],
    }
    path = tmp_path / "x.json"
    path.write_text(json.dumps(impossible))
    code, _, _ = run(capsys, "count", "--instance", str(path), "--memory-budget", "1")
    assert code == 3
    code, _, err = run(capsys, "sample", "--instance", str(path), "--num", "1", "--quiet",
                     "--max-attempts", "50", "--estimate-samples", "100",
                     "--acceptance-floor", "0")
    assert code == 3
    report = json.loads(err.splitlines()[-1])
    assert report["error"] == "timeout" and report["attempts"] == 50


def test_console_script_entry(t1_file):
    proc = subprocess.run([sys.executable, "-m", "maxent_sortition.cli", "count",
                           "--instance", t1_file], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "4"
