import csv
import json

import numpy as np
import pytest

from rlaudit.cli import main


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.yaml"
    cfg.write_text("synth:\n  n_users: 3\n  T: 60\nstudy:\n  B: 6\n  sigma2: 1.0\n"
                   "  score: {gamma: 0.4}\n  gamma_grid: [0.4, 0.7]\n")
    assert main(["synth", "--config", str(cfg), "--seed", "2", "--out-dir", str(root / "syn")]) == 0
    traj = root / "syn" / "trajectories.csv"
    assert main(["fit", str(traj), "--config", str(cfg), "--out-dir", str(root / "fit")]) == 0
    assert main(["score", str(traj), "--config", str(cfg), "--out-dir", str(root / "score")]) == 0
    args = ["study", str(traj), "--config", str(cfg), "--seed", "4", "--score-matrix",
            "--coefficients", str(root / "fit" / "coefficients.json"),
            "--observed-scores", str(root / "score" / "scores.csv")]
    assert main(args + ["--out-dir", str(root / "st1")]) == 0
    assert main(args + ["--out-dir", str(root / "st2"), "--workers", "2"]) == 0
    return root


def test_synth_outputs(pipeline):
    rows = read_csv(pipeline / "syn" / "trajectories.csv")
    assert len(rows) == 3 * 60
    manifest = json.loads((pipeline / "syn" / "trajectories.manifest.json").read_text())
    assert manifest["master_seed"] == 2 and manifest["synth"]["seed"] == 2


def test_study_bundle_is_byte_identical_across_workers(pipeline):
    names = sorted(p.name for p in (pipeline / "st1").iterdir())
    assert names == ["failures.json", "grid.csv", "resample_scores.csv", "summary.json", "trials.csv", "users.csv"]
    for name in names:
        assert (pipeline / "st1" / name).read_bytes() == (pipeline / "st2" / name).read_bytes()


def test_summary_consistent_with_trials_and_grid(pipeline):
    summary = json.loads((pipeline / "st1" / "summary.json").read_text())
    trials = read_csv(pipeline / "st1" / "trials.csv")
    obs = summary["observed"]["numint"]
    want = np.mean([obs <= int(r["numint"]) for r in trials])
    assert summary["count_percentile"]["numint"] == pytest.approx(want)
    for r in trials:
        assert int(r["numint"]) == int(r["numint_plus"]) + int(r["numint_minus"])
    cell = [r for r in read_csv(pipeline / "st1" / "grid.csv") if float(r["delta"]) == 0.4 and float(r["gamma"]) == 0.4]
    assert float(cell[0]["percentile"]) == summary["count_percentile"]["numint"]
    assert summary["master_seed"] == 4


def test_observed_scores_feed_study(pipeline):
    scores = {r["user_id"]: r for r in read_csv(pipeline / "score" / "scores.csv")}
    users = read_csv(pipeline / "st1" / "users.csv")
    for u in users:
        assert u["good_days"] == scores[u["user_id"]]["good_days"]
        if u["eligible"] == "1":
            assert u["score"] == scores[u["user_id"]]["score"]


def test_exit_codes(tmp_path, pipeline):
    bad = tmp_path / "bad.csv"
    bad.write_text("user_id,t\n")
    assert main(["fit", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert main(["fit", str(tmp_path / "nope.csv"), "--out-dir", str(tmp_path)]) == 1
    cfg = tmp_path / "c.yaml"
    cfg.write_text("study:\n  B: -1\n")
    assert main(["study", str(pipeline / "syn" / "trajectories.csv"), "--config", str(cfg)]) == 1
    assert main(["study", str(pipeline / "syn" / "trajectories.csv"), "--ground-truth", "null-feature:intercept",
                 "--out-dir", str(tmp_path)]) == 1
    with pytest.raises(SystemExit):
        main(["study", "--grid", "0.4"])


def test_type2_score_command(tmp_path, pipeline):
    traj = pipeline / "syn" / "trajectories.csv"
    assert main(["score", str(traj), "--kind", "type2", "--feature", "location", "--gamma", "0.9",
                 "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "scores.csv")
    assert all(0 <= float(r["score"]) <= 1 for r in rows if r["score"])


def test_runtime_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("synth:\n  n_users: 1\n  T: 40\nprior:\n  sigma_beta: [1.0e-14, 1.0e-14, 1.0e-14, 1.0e-14, 1.0e-14]\n")
    assert main(["synth", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
