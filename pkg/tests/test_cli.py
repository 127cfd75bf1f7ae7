import json
import subprocess
import sys

import pytest

from facebmi.cli import main


@pytest.fixture(scope="module")
def staged(synthetic_dataset, tmp_path_factory):
    """A work directory taken through ingest, enroll and stub extraction."""
    work = tmp_path_factory.mktemp("work")
    manifest = synthetic_dataset[0]
    assert main(["ingest", str(manifest), "--workdir", str(work)]) == 0
    assert main(["enroll", "--workdir", str(work)]) == 0
    assert main(["extract", "--backbone", "stub", "--stub-size", "16", "--workdir", str(work)]) == 0
    return work


def test_staged_ridge_and_svr(staged, capsys, tmp_path):
    proto = json.dumps({"train_count": 28, "test_count": 10, "gender_balanced_test": True})
    assert main(["train", "--regressor", "ridge", "--protocol", proto, "--param", "lam=1.0",
                 "--workdir", str(staged)]) == 0
    assert main(["eval", "--workdir", str(staged)]) == 0
    out = capsys.readouterr().out
    assert "Overall RR" in out
    header = (staged / "predictions.csv").read_text().splitlines()[0]
    assert header == "sample_id,gender,truth_bmi,predicted_bmi"
    (tmp_path / "rr.json").write_bytes((staged / "report.json").read_bytes())

    assert main(["train", "--regressor", "svr", "--protocol", proto, "--param", "C=10",
                 "--workdir", str(staged)]) == 0
    assert main(["eval", "--workdir", str(staged)]) == 0
    csv_path = tmp_path / "t.csv"
    assert main(["report", str(tmp_path / "rr.json"), str(staged), "--csv", str(csv_path)]) == 0
    assert csv_path.read_text().splitlines()[0].startswith("Model,Overall RR,Overall SVR")


def test_status_file_tracks_stages(staged):
    status = json.loads((staged / "status.json").read_text())
    assert {"ingest", "enroll", "extract"} <= set(status["completed"])


def test_error_exit_codes(tmp_path, capsys):
    assert main(["ingest", str(tmp_path / "nope.csv"), "--workdir", str(tmp_path / "w")]) == 1
    assert main(["eval", "--workdir", str(tmp_path / "empty")]) == 1
    assert main(["extract", "--backbone", "alexnet", "--workdir", str(tmp_path / "w")]) == 1
    assert "alexnet" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["train", "--regressor", "lasso"])
    assert info.value.code == 2


def test_run_with_overrides(synthetic_dataset, tmp_path, capsys):
    manifest = synthetic_dataset[0]
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(f"dataset:\n  manifest: {manifest}\n  protocol:\n    train_count: 28\n    test_count: 10\n"
                   "features:\n  backbone: stub\n  stub_size: [16, 16]\nregressor:\n  kind: ridge\n")
    assert main(["run", str(cfg), "--set", "regressor.lam=0.5", "--output-dir", str(tmp_path / "o")]) == 0
    resolved = json.loads((tmp_path / "o" / "config.resolved.json").read_text())
    assert resolved["regressor"]["lam"] == 0.5
    assert main(["run", str(cfg), "--set", "features.backbone=alexnet", "--output-dir", str(tmp_path / "p")]) == 1
    assert not (tmp_path / "p").exists()


def test_synth_writes_runnable_config(tmp_path):
    assert main(["synth", str(tmp_path / "d"), "--n", "12", "--blanks", "1"]) == 0
    assert (tmp_path / "d" / "config.yaml").is_file()
    assert len((tmp_path / "d" / "manifest.csv").read_text().splitlines()) == 14


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "facebmi.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "ingest" in r.stdout
