import csv
import hashlib
import json

import numpy as np
import pytest

from cirdil.cli import main

FAST = ["--override", "dil.epochs_initial=2", "--override", "dil.epochs_adapt=1",
        "--override", "dil.hidden=[8]", "--override", "dil.milestones=[]", "--samples", "120"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_gen_scenario_files_and_determinism(tmp_path, capsys):
    assert main(["gen-scenario", "--samples", "100", "--seed", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-scenario", "--samples", "100", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.cirds"))
    assert files == [f"T{i}.cirds" for i in range(1, 6)]
    for name in files + ["scenario.json", "changes.json"]:
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)
    assert "T1: 100 samples" in capsys.readouterr().out


def test_run_from_generated_datasets(tmp_path):
    gen = tmp_path / "gen"
    assert main(["gen-scenario", "--samples", "120", "--out", str(gen)]) == 0
    cfg = {"scenario": {"file": str(gen / "scenario.json"), "dataset_dir": str(gen)}, "seeds": [0]}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "c.json"), *FAST, "--out", str(tmp_path / "r")]) == 0
    assert len(read_csv(tmp_path / "r" / "results.csv")) == 4


def test_minimal_run_row_count(tmp_path):
    out = tmp_path / "run"
    assert main(["run", *FAST, "--seed", "0", "--override", "dil.methods=[\"finetune\",\"ewc\"]",
                 "--override", "selection.n=[0,5]", "--out", str(out)]) == 0
    rows = read_csv(out / "results.csv")
    assert list(rows[0])[:3] == ["stage", "stage_task", "test_domain"]
    assert len(rows) == 4 * 2 * 2
    assert (out / "manifests").is_dir() and (out / "results.json").exists()


def test_unknown_method_exit_1(tmp_path, capsys):
    assert main(["run", "--override", "dil.methods=[\"replay\"]", "--out", str(tmp_path)]) == 1
    assert "replay" in capsys.readouterr().err


def test_missing_config_exit_1(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_partial_failure_exit_2(tmp_path):
    assert main(["run", *FAST, "--seed", "0", "--override", "dil.lr=1e100",
                 "--out", str(tmp_path)]) == 2
    assert all(r["status"] == "failed" for r in read_csv(tmp_path / "results.csv"))


def test_env_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv("CIRDIL_OUT", str(tmp_path))
    assert main(["run", *FAST, "--seed", "0"]) == 0
    assert (tmp_path / "run" / "results.csv").exists()


def test_train_then_adapt(tmp_path):
    assert main(["train", *FAST, "--seed", "1", "--method", "si", "--out", str(tmp_path / "t")]) == 0
    assert main(["adapt", *FAST, "--state", str(tmp_path / "t" / "state.npz"), "--task", "T2", "--n", "5",
                 "--strategy", "equally_distributed", "--out", str(tmp_path / "a")]) == 0
    rows = read_csv(tmp_path / "a" / "mae.csv")
    assert [r["domain"] for r in rows] == ["T1", "T2"]
    assert len(json.loads((tmp_path / "a" / "exemplars.json").read_text())["ids"]) == 5
    assert main(["adapt", *FAST, "--state", str(tmp_path / "t" / "state.npz"), "--task", "T1",
                 "--out", str(tmp_path / "b")]) == 1


def test_export_trajectories_cdf_table(tmp_path):
    out = tmp_path / "run"
    assert main(["run", *FAST, "--seed", "0", "--out", str(out)]) == 0
    for what in ("trajectories", "cdf", "table"):
        assert main(["export", str(out), "--what", what, "--figures"]) == 0
        assert (out / f"{what}.png").stat().st_size > 0
    traj = read_csv(out / "trajectories.csv")
    assert list(traj[0]) == ["cell", "seed", "domain", "sample_id", "true_x", "true_y", "pred_x", "pred_y", "error_m"]
    for r in traj:
        d = np.hypot(float(r["pred_x"]) - float(r["true_x"]), float(r["pred_y"]) - float(r["true_y"]))
        assert float(r["error_m"]) == pytest.approx(d, rel=1e-12, abs=1e-15)
    cdf = read_csv(out / "cdf.csv")
    errs = [float(r["error_m"]) for r in cdf if r["domain"] == "T1"]
    assert errs == sorted(errs) and float([r for r in cdf if r["domain"] == "T1"][-1]["quantile"]) == 1.0


def test_export_single_sample_trajectory(tmp_path):
    man = {"cell": {"method": "finetune", "n": 0, "strategy": "none", "lam": 0.0, "weight_averaging": False},
           "seed": 0, "status": "ok", "stages": [], "timing": [], "leakage_violations": 0,
           "predictions": {"T1": {"ids": [7], "true": [[1.0, 2.0]], "pred": [[4.0, 6.0]]}}}
    (tmp_path / "manifests").mkdir()
    (tmp_path / "manifests" / "m.json").write_text(json.dumps(man))
    assert main(["export", str(tmp_path), "--what", "trajectories"]) == 0
    rows = read_csv(tmp_path / "trajectories.csv")
    assert len(rows) == 1 and float(rows[0]["error_m"]) == 5.0 and rows[0]["sample_id"] == "7"


def test_export_empty_dir_exit_1(tmp_path):
    assert main(["export", str(tmp_path), "--what", "trajectories"]) == 1
    assert main(["export", str(tmp_path), "--what", "table"]) == 1


def test_sweep_and_selection_and_timing_commands(tmp_path):
    assert main(["sweep-lambda", *FAST, "--seed", "0", "--override", "sweep.lambdas=[0,10]",
                 "--override", "sweep.n=[0,5]", "--out", str(tmp_path / "s")]) == 0
    assert len(read_csv(tmp_path / "s" / "sweep.csv")) == 4
    assert main(["compare-selection", *FAST, "--seed", "0", "--n", "5", "--metrics", "chebyshev,canberra",
                 "--out", str(tmp_path / "c")]) == 0
    assert len(read_csv(tmp_path / "c" / "selection.csv")) == 2 * 4
    assert main(["timing", *FAST, "--seed", "0", "--n", "5", "--out", str(tmp_path / "t")]) == 0
    assert (tmp_path / "t" / "timing.csv").exists()
