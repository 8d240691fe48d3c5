import csv
import json
import subprocess
import sys

import pytest

from maps import __version__
from maps.cli import main
from maps.forge import generate_dataset


def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "maps.cli", *map(str, args)], capture_output=True, text=True)


def test_run_demo_matches_golden_twice(tmp_path, demo_dir):
    golden = (demo_dir / "golden_sls.json").read_bytes()
    for k in range(2):
        out = tmp_path / f"run{k}"
        proc = run_cli("run", "--manifest", demo_dir, "--config", demo_dir / "config.json", "--out", out)
        assert proc.returncode == 0, proc.stderr
        assert (out / "sls.json").read_bytes() == golden
        assert {p.name for p in out.iterdir()} == {"sls.json", "profile.json", "overlay.svg"}


def test_run_forged_zero_noise(tmp_path, forged, capsys):
    manifest = forged(seed=42, n_users=20)
    assert main(["run", "--manifest", str(manifest.root), "--out", str(tmp_path / "o")]) == 0
    sls = json.loads((tmp_path / "o" / "sls.json").read_text())
    assert len(sls["users"]) == 20
    assert capsys.readouterr().out.strip().endswith("sls.json")


def test_run_require_audio_missing_transcript(tmp_path, forged, capsys):
    manifest = forged(seed=3, n_users=5)
    (manifest.root / "transcript.json").unlink()
    code = main(["run", "--manifest", str(manifest.root), "--require-audio", "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert json.loads(err[0])["error"] == "MissingPart"
    assert not (tmp_path / "o").exists()
    assert main(["run", "--manifest", str(manifest.root), "--out", str(tmp_path / "o")]) == 0


def test_run_verbose_prints_stages(tmp_path, forged, capsys):
    manifest = forged(n_users=2)
    assert main(["-v", "run", "--manifest", str(manifest.root), "--out", str(tmp_path)]) == 0
    err = capsys.readouterr().err
    assert "generate_content.image" in err and "fusion" in err


def test_run_overrides(tmp_path, forged):
    manifest = forged(n_users=3)
    code = main(
        [
            "run", "--manifest", str(manifest.root), "--out", str(tmp_path),
            "--delay", "30", "--virtual-time", "--fusion-mode", "model_delegated", "--epsilon", "0.1",
        ]
    )
    assert code == 0
    profile = json.loads((tmp_path / "profile.json").read_text())
    assert profile["total_seconds"] >= 90


def test_generate_evaluate_validate(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["generate-dataset", "--seed", "7", "--scenarios", "3", "--out", str(data)]) == 0
    assert len(list(data.iterdir())) == 3
    scenario = data / "scenario_01"
    assert main(["run", "--manifest", str(scenario), "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    sls = tmp_path / "o" / "sls.json"
    assert main(["evaluate", "--sls", str(sls), "--ground-truth", str(scenario / "ground_truth.json"),
                 "--csv", str(tmp_path / "e.csv")]) == 0
    row = json.loads(capsys.readouterr().out)
    assert row["accuracy_pct"] == "100.0000"
    assert main(["validate", "--sls", str(sls)]) == 0
    assert capsys.readouterr().out.startswith("valid: scenario_01")


def test_validate_rejects_bad_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario_id": "s", "users": []}))
    assert main(["validate", "--sls", str(bad)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "MissingField"


def test_bench_virtual_delay(tmp_path, capsys):
    generate_dataset(tmp_path / "data", seed=1, scenarios=3, users_min=2, users_max=6)
    out = tmp_path / "bench"
    code = main(
        ["bench", "--dataset", str(tmp_path / "data"), "--runs", "2", "--delay", "30", "--virtual-time", "--out", str(out)]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["runs"] == 6 and summary["failed"] == 0
    assert summary["mean_accuracy_pct"] == 100.0
    assert {p.name for p in out.iterdir()} == {
        "evaluation.csv", "scenario_summary.csv", "per_agent.csv", "cdf.csv", "profile_table.csv", "bench.json",
    }
    with open(out / "evaluation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6 and all(r["status"] == "ok" for r in rows)


def test_bench_failed_runs_recorded(tmp_path, capsys):
    generate_dataset(tmp_path / "data", seed=1, scenarios=2, users_min=2, users_max=3)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"kind": "simulated", "malformation": {"audio": "drop_users"}}}))
    out = tmp_path / "bench"
    code = main(["bench", "--dataset", str(tmp_path / "data"), "--runs", "1", "--config", str(cfg), "--out", str(out)])
    assert code == 1
    with open(out / "evaluation.csv") as fh:
        statuses = [r["status"] for r in csv.DictReader(fh)]
    assert statuses == ["error:SchemaViolation"] * 2


def test_bench_empty_dataset(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    out = tmp_path / "bench"
    assert main(["bench", "--dataset", str(tmp_path / "empty"), "--out", str(out)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "MissingPart"
    assert not out.exists()


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["run"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["teleport"])
    assert err.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.strip() == __version__


def test_console_script_installed():
    proc = subprocess.run(["maps", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "generate-dataset" in proc.stdout
