import json

import numpy as np
import pytest

from fedopl.cli import main


def run_cli(args):
    return main(args)


def read_lines(path):
    return path.read_text().splitlines()


class TestExperimentCommand:
    def test_smoke_writes_all_outputs(self, tmp_path):
        out = tmp_path / "run"
        code = run_cli(
            [
                "experiment", "--scenario", "homogeneous", "--seeds", "1",
                "--grid", "100", "--out", str(out), "--seed", "3",
                "--set", "reference_budget=2000", "--set", "test_draws=1000",
                "--set", "rounds=5", "--set", "reference_rounds=10",
            ]
        )
        assert code == 0
        regret = read_lines(out / "regret.csv")
        assert regret[0] == "#fedopl-csv-v1"
        assert regret[1] == "scenario,n,seed,policy,client,metric,value,se"
        assert len(regret) > 2
        policies = {line.split(",")[3] for line in regret[2:]}
        assert policies == {"global", "local_0", "local_1", "local_2", "reference"}
        clients = {line.split(",")[4] for line in regret[2:]}
        assert clients == {"global", "0", "1", "2"}
        metrics = {line.split(",")[5] for line in regret[2:]}
        assert metrics == {"regret", "value"}
        assert (out / "skewness.csv").exists()
        assert (out / "shift.csv").exists()
        manifest = json.loads((out / "manifest_resolved.json").read_text())
        assert manifest["scenario"] == "homogeneous"
        assert np.array(manifest["theta_star"]).shape == (4, 10)

    def test_manifest_round_trip_reproduces_output(self, tmp_path):
        out1 = tmp_path / "a"
        args = [
            "experiment", "--scenario", "homogeneous", "--seeds", "1",
            "--grid", "100", "--seed", "3",
            "--set", "reference_budget=2000", "--set", "test_draws=500",
            "--set", "rounds=4", "--set", "reference_rounds=8",
        ]
        assert run_cli(args + ["--out", str(out1)]) == 0
        out2 = tmp_path / "b"
        assert run_cli(
            ["experiment", "--manifest", str(out1 / "manifest_resolved.json"),
             "--out", str(out2)]
        ) == 0
        assert (out1 / "regret.csv").read_bytes() == (out2 / "regret.csv").read_bytes()

    def test_thread_count_does_not_change_bytes(self, tmp_path):
        args = [
            "experiment", "--scenario", "homogeneous", "--seeds", "2",
            "--grid", "100,150", "--seed", "9",
            "--set", "reference_budget=2000", "--set", "test_draws=500",
            "--set", "rounds=4", "--set", "reference_rounds=8",
        ]
        out1, out2 = tmp_path / "t1", tmp_path / "t4"
        assert run_cli(args + ["--out", str(out1), "--threads", "1"]) == 0
        assert run_cli(args + ["--out", str(out2), "--threads", "4"]) == 0
        for name in ("regret.csv", "skewness.csv", "shift.csv", "manifest_resolved.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_missing_manifest_path_fails_config(self, tmp_path):
        code = run_cli(
            ["experiment", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)]
        )
        assert code == 1

    def test_no_scenario_or_manifest_fails_config(self, tmp_path):
        assert run_cli(["experiment", "--out", str(tmp_path)]) == 1

    def test_unknown_flag_usage_error(self, capsys, tmp_path):
        code = run_cli(["experiment", "--scenario", "homogeneous", "--frobnicate"])
        assert code == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand_usage_error(self):
        assert run_cli(["transmogrify"]) == 1


class TestDiagnoseCommand:
    def test_skewness_example_four_thirds(self, tmp_path, capsys):
        out = tmp_path / "diag"
        code = run_cli(
            ["diagnose", "--lambda", "0.5,0.5", "--counts", "25,75", "--out", str(out)]
        )
        assert code == 0
        lines = read_lines(out / "skewness.csv")
        skew_row = next(l for l in lines if ",skewness," in l)
        assert float(skew_row.split(",")[-1]) == pytest.approx(4.0 / 3.0, abs=1e-15)
        assert "1.3333333333333333" in capsys.readouterr().out

    def test_scenario_shift_report(self, tmp_path):
        out = tmp_path / "diag2"
        code = run_cli(
            ["diagnose", "--scenario", "heterogeneous", "--out", str(out), "--seed", "1"]
        )
        assert code == 0
        lines = read_lines(out / "shift.csv")
        assert lines[1] == "scenario,c,k,quantity,value"
        import math

        row = next(l for l in lines if l.startswith("heterogeneous,0,1,kl_context"))
        assert float(row.split(",")[-1]) == pytest.approx(20 * (1 - math.log(2)), abs=1e-9)

    def test_requires_some_input(self, tmp_path):
        assert run_cli(["diagnose", "--out", str(tmp_path)]) == 1

    def test_lambda_without_counts_fails(self, tmp_path):
        assert run_cli(["diagnose", "--lambda", "0.5,0.5", "--out", str(tmp_path)]) == 1


class TestFedoplCommand:
    def test_writes_training_log_and_policy(self, tmp_path):
        out = tmp_path / "fed"
        code = run_cli(
            ["fedopl", "--scenario", "homogeneous", "--n", "120", "--seed", "2",
             "--rounds", "3", "--out", str(out)]
        )
        assert code == 0
        log = read_lines(out / "training_log.csv")
        assert log[0] == "#fedopl-csv-v1"
        assert log[1] == "round,participants,mean_local_loss,theta_norm"
        assert len(log) == 2 + 3
        assert log[2].split(",")[1] == "0;1;2"
        policy = json.loads((out / "policy.json").read_text())
        assert np.array(policy["theta"]).shape == (4, 10)
        assert len(policy["intercept"]) == 4


class TestAipwCommand:
    def test_exports_dataset_and_scores(self, tmp_path):
        out = tmp_path / "aipw"
        code = run_cli(
            ["aipw", "--scenario", "homogeneous", "--n", "90", "--seed", "4",
             "--out", str(out)]
        )
        assert code == 0
        data = read_lines(out / "dataset.csv")
        scores = read_lines(out / "scores.csv")
        assert data[1].startswith("client_id,index,action,reward,logged_propensity,x0")
        assert scores[1].startswith("client_id,fold,x0")
        assert scores[1].endswith("score_0,score_1,score_2,score_3")
        # 3 clients x 30 samples each
        assert len(data) == 2 + 90
        assert len(scores) == 2 + 90


class TestEnvThreads:
    def test_fedopl_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FEDOPL_THREADS", "2")
        out = tmp_path / "env"
        code = run_cli(
            ["experiment", "--scenario", "homogeneous", "--seeds", "1",
             "--grid", "100", "--out", str(out), "--seed", "3",
             "--set", "reference_budget=2000", "--set", "test_draws=500",
             "--set", "rounds=4", "--set", "reference_rounds=8"]
        )
        assert code == 0

    def test_bad_env_value_is_config_error(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FEDOPL_THREADS", "two")
        code = run_cli(
            ["experiment", "--scenario", "homogeneous", "--grid", "100",
             "--out", str(tmp_path)]
        )
        assert code == 1
