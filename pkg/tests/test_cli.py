import json
import subprocess
import sys

import pytest

from cmllab.cli import main


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = main(args + ["--out-dir", str(out)])
    return code, out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_simulate_writes_stats_and_manifest(tmp_path):
    code, out = run(["simulate", "--c", "0.1", "--steps", "1e5", "--seed", "7", "--trace-stride", "100"],
                    tmp_path)
    assert code == 0
    row = json.loads((out / "stats.jsonl").read_text().splitlines()[0])
    assert row["min_dist_after_burn_in"] <= row["max_dist_after_burn_in"]
    man = manifest(out)
    names = {o["path"] for o in man["outputs"]}
    assert "stats.jsonl" in names and any(n.startswith("trace_") for n in names)
    assert man["config"]["orbit"]["steps"] == 100_000
    assert man["seed"] == 7
    assert man["metrics"]["steps"] > 0


def test_simulate_sync_regime(tmp_path):
    code, out = run(["simulate", "--c", "0.3", "--steps", "1e5"], tmp_path)
    assert code == 0
    row = json.loads((out / "stats.jsonl").read_text().splitlines()[0])
    assert row["sync_time"] is not None


def test_csv_format(tmp_path):
    code, out = run(["simulate", "--c", "0.1", "--steps", "1000", "--format", "csv"], tmp_path)
    assert code == 0 and (out / "stats.csv").is_file()


def test_missing_config_exit_2(tmp_path, capsys):
    code, _ = run(["simulate", "--config", str(tmp_path / "absent.toml")], tmp_path)
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_validate_names_bad_row(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[coupling]\nA = [[-1, 1, 0], [1, -1, 0.5], [0, 0.5, -0.5]]\nm = 3\n")
    code, _ = run(["validate", "--config", str(cfg)], tmp_path)
    assert code == 2
    assert "row 1" in capsys.readouterr().err


def test_validate_ok(tmp_path):
    code, out = run(["validate", "--c", "0.2"], tmp_path)
    assert code == 0 and json.loads((out / "validate.json").read_text())


def test_escape_exit_3(tmp_path):
    code, _ = run(["simulate", "--coupling", "all-to-all", "--m", "3", "--c", "0.6", "--steps", "1e4",
                   "--no-shadow"], tmp_path)
    assert code == 3


def test_lemma_table(tmp_path, capsys):
    code, out = run(["lemma", "--a", "4", "--m0", "6", "--delta1", "2e-16h", "--mu", "2", "--c", "0"],
                    tmp_path)
    assert code == 0
    k = json.loads((out / "constants.json").read_text())
    assert k["d"] == pytest.approx(1 / 3, abs=1e-15)
    assert k["mu_upper"] == 3.0
    assert "N0" in capsys.readouterr().out


def test_curve_prop32(tmp_path):
    code, out = run(["curve", "--demo", "prop32", "--c", "0.0", "--count", "20"], tmp_path)
    assert code == 0
    report = json.loads((out / "growth_report.json").read_text())
    assert report["e"] == pytest.approx(1 / 3)
    assert report["counts"]["Fail"] == 0


def test_polytope_and_scan(tmp_path):
    code, out = run(["polytope", "--audit", "50", "--c", "0.05"], tmp_path, "poly")
    assert code == 0 and (out / "center_audit.json").is_file()
    code, out = run(["scan", "--c-lo", "0.2", "--c-hi", "0.3", "--c-step", "0.05", "--seeds-per-c", "4",
                     "--horizon", "2e4", "--plot"], tmp_path, "scan")
    assert code == 0
    assert (out / "bifurcation.svg").is_file() and (out / "runs.jsonl").is_file()


def test_replay_identical_and_tampered(tmp_path, capsys):
    code, out = run(["scan", "--c-lo", "0.24", "--c-hi", "0.26", "--c-step", "0.01",
                     "--seeds-per-c", "4", "--horizon", "2e4"], tmp_path)
    assert code == 0
    assert main(["replay", str(out / "manifest.json"), "--out-dir", str(tmp_path / "again")]) == 0
    man = manifest(out)
    man["outputs"][0]["sha256"] = "0" * 64
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(man))
    assert main(["replay", str(bad), "--out-dir", str(tmp_path / "third")]) == 3
    assert "replay mismatch" in capsys.readouterr().err


def test_replay_bad_manifest(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{}")
    assert main(["replay", str(p)]) == 2


def test_env_out_dir(tmp_path):
    env = {"CMLLAB_OUT_DIR": str(tmp_path / "envout"), "PATH": ""}
    r = subprocess.run([sys.executable, "-m", "cmllab.cli", "validate"], env=env, capture_output=True,
                       text=True, cwd=tmp_path)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "envout" / "manifest.json").is_file()
