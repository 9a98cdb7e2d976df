import csv
import json
import math

import numpy as np
import pytest

from slass.cli import main
from slass.configfile import format_config
from slass.core import published_config
from slass.harness import TrialSummary, aggregate, compare_policies, run_experiment


def _summary(trial, errors, dists=None, termination="max_cycles"):
    errors = np.asarray(errors, float)
    dists = errors if dists is None else np.asarray(dists, float)
    return TrialSummary(trial, termination, len(errors), errors, dists, 0)


def test_rmse_three_and_four():
    m = aggregate([_summary(0, [3.0, 3.0]), _summary(1, [4.0, 4.0])])
    np.testing.assert_allclose(m.rmse, math.sqrt(12.5))
    assert m.rmse[0] == pytest.approx(3.536, abs=1e-3)
    np.testing.assert_allclose(m.distance, 3.5)


def test_rmse_zero_for_perfect_estimates():
    m = aggregate([_summary(0, np.zeros(5))])
    np.testing.assert_array_equal(m.rmse, 0.0)
    np.testing.assert_array_equal(m.rmse_stderr, 0.0)


def test_success_rate_and_cycles():
    trials = [
        _summary(0, [1.0], termination="all_arrived"),
        _summary(1, [1.0]),
        _summary(2, [1.0], termination="all_arrived"),
        _summary(3, [1.0]),
    ]
    trials[0].num_cycles, trials[2].num_cycles = 100, 200
    m = aggregate(trials)
    assert m.success_rate == 0.5 and m.mean_cycles_to_arrival == 150.0


def test_aggregate_rejects_nan():
    with pytest.raises(ValueError):
        aggregate([_summary(0, [np.nan])])


def test_aggregate_skips_trial_aborted_before_first_record():
    empty = TrialSummary(1, "aborted", 0, np.full(2, np.nan), np.full(2, np.nan), 0)
    m = aggregate([_summary(0, [3.0, 4.0], termination="all_arrived"), empty])
    np.testing.assert_allclose(m.rmse, [3.0, 4.0])
    assert m.success_rate == 0.5
    with pytest.raises(ValueError):
        aggregate([empty])


def _tiny(**kw):
    base = dict(M_r=6, M_s=12, max_cycles=12, num_trials=3)
    return published_config(2).with_(**{**base, **kw})


def test_run_experiment_clamped_lengths(tmp_path):
    cfg = _tiny(arrive_radius=math.inf)
    res = run_experiment(cfg, "flocking", tmp_path, workers=1)
    assert res.metrics.rmse.shape == (12,)
    assert res.metrics.success_rate == 1.0
    # every trial ends at cycle 1, so the clamped RMSE curve is flat
    np.testing.assert_array_equal(res.metrics.rmse, res.metrics.rmse[0])
    rows = list(csv.reader(open(tmp_path / "flocking_rmse.csv")))
    assert rows[0] == ["cycle", "value", "stderr"] and len(rows) == 13
    manifest = json.loads((tmp_path / "flocking_manifest.json").read_text())
    assert manifest["config"]["M_r"] == 6
    assert [t["termination"] for t in manifest["trials"]] == ["all_arrived"] * 3


def test_compare_same_policy_twice_identical_columns(tmp_path):
    res = compare_policies(_tiny(), ["flocking", "flocking"], tmp_path, workers=1)
    assert list(res) == ["flocking", "flocking_2"]
    rows = list(csv.reader(open(tmp_path / "comparison_rmse.csv")))
    assert rows[0] == ["cycle", "flocking", "flocking_2"]
    assert all(r[1] == r[2] for r in rows[1:])


def test_compare_needs_two_policies():
    with pytest.raises(ValueError):
        compare_policies(_tiny(), ["proposed"])


def test_outputs_byte_identical_and_worker_independent(tmp_path):
    cfg = _tiny()
    compare_policies(cfg, ["proposed", "two_stage"], tmp_path / "a", workers=1, dump_trajectories=True)
    compare_policies(cfg, ["proposed", "two_stage"], tmp_path / "b", workers=2, dump_trajectories=True)
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 5
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_trajectory_dump_columns(tmp_path):
    run_experiment(_tiny(num_trials=1), "proposed", tmp_path, workers=1, dump_trajectories=True)
    rows = list(csv.reader(open(tmp_path / "trajectories" / "proposed_trial0000.csv")))
    assert rows[0][:3] == ["cycle", "true_x1", "true_y1"]
    assert len(rows[0]) == 1 + 4 + 4 + 2 + 4
    assert rows[1][0] == "1"


def test_write_error_has_path_context(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        run_experiment(_tiny(num_trials=1, max_cycles=2), "flocking", blocker / "out", workers=1)


def test_cli_run_and_compare(tmp_path, capsys):
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(format_config(_tiny(), policy="flocking"))
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "r"), "--threads", "1"]) == 0
    assert (tmp_path / "r" / "flocking_rmse.csv").exists()
    assert "flocking: final RMSE" in capsys.readouterr().out
    rc = main(["compare", "--config", str(cfg_path), "--policies", "flocking,two_stage",
               "--trials", "2", "--seed", "9", "--out", str(tmp_path / "c"), "--threads", "1"])
    assert rc == 0
    summary = list(csv.DictReader(open(tmp_path / "c" / "summary.csv")))
    assert [r["policy"] for r in summary] == ["flocking", "two_stage"]
    manifest = json.loads((tmp_path / "c" / "two_stage_manifest.json").read_text())
    assert manifest["config"]["seed"] == 9 and len(manifest["trials"]) == 2


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("num_robots = 2\nwhatever = 1\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    assert main(["compare", "--robots", "1", "--policies", "proposed,pso", "--out", str(tmp_path)]) == 1


def test_threads_env_override(monkeypatch):
    from slass.harness import default_workers

    monkeypatch.setenv("SLASS_THREADS", "3")
    assert default_workers() == 3
