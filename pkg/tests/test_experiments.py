import json
from pathlib import Path

import numpy as np
import pytest

from softtouch import cli, experiments
from softtouch.control import TrajectoryLog


def fast_config(tmp_path, **extra):
    """Config file that shrinks every stage for plumbing tests."""
    overrides = {
        "posenet": {
            "n_samples": 30,
            "network": {"epochs": 1, "batch_size": 8},
        },
        "exp1": {"duration": 30.0},
        "exp3a": {"ssim_duration": 6.0, "ramp_rate": 0.03, "ramp_duration": 9.0},
        "exp3b": {"ssim_duration": 6.0, "setpoints": [1.0, 2.0], "dwell": 6.0},
    }
    overrides.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(overrides))
    return path


class TestConfig:
    def test_defaults_resolve(self):
        config = experiments.resolve_config(profile="desk", seed=3)
        assert config["seed"] == 3
        assert config["posenet"]["network"]["seed"] == 3
        assert config["control"]["setpoint"] == 0.7
        assert config["control"]["gain"] == 100.0
        assert set(config["plant"]) == {"prism_20", "prism_30", "prism_40",
                                        "soft_irregular"}

    def test_paper_profile_defaults(self):
        config = experiments.resolve_config(profile="paper")
        assert config["posenet"]["n_samples"] == 10000
        assert config["posenet"]["network"]["n_filters"] == 256

    def test_file_overrides_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"control": {"gain": 55.0}}))
        config = experiments.resolve_config(path, seed=0)
        assert config["control"]["gain"] == 55.0
        assert config["control"]["setpoint"] == 0.7

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            experiments.resolve_config(tmp_path / "absent.json")

    def test_unknown_profile(self):
        with pytest.raises(ValueError):
            experiments.resolve_config(profile="huge")

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            experiments.ExperimentSpec(experiment="exp9")


class TestExp1:
    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("exp1")
        config = experiments.resolve_config(seed=0)
        first = experiments.exp1(config, root)
        second = experiments.exp1(config, root)
        return root, first, second

    def test_all_objects_converge(self, runs):
        _, summary, _ = runs
        assert summary["all_converged"]
        assert set(summary["objects"]) == {"prism_20", "prism_30", "prism_40",
                                           "soft_irregular"}
        for verdict in summary["objects"].values():
            assert verdict["settle_cycle"] <= 200
            assert abs(verdict["final_e"] - 0.7) < 0.05

    def test_distinct_final_commands(self, runs):
        _, summary, _ = runs
        finals = [v["final_u"] for v in summary["objects"].values()]
        assert len(set(round(f) for f in finals)) == len(finals)

    def test_run_directory_contents(self, runs):
        _, summary, _ = runs
        run_dir = Path(summary["run_dir"])
        assert (run_dir / "resolved_config.json").exists()
        assert (run_dir / "summary.json").exists()
        for obj in summary["objects"]:
            assert (run_dir / f"{obj}.csv").exists()
            assert (run_dir / f"{obj}.png").exists()

    def test_identical_seeds_identical_outputs(self, runs):
        _, first, second = runs
        a = {k: v for k, v in first.items() if k != "run_dir"}
        b = {k: v for k, v in second.items() if k != "run_dir"}
        assert a == b
        for obj in first["objects"]:
            csv_a = (Path(first["run_dir"]) / f"{obj}.csv").read_bytes()
            csv_b = (Path(second["run_dir"]) / f"{obj}.csv").read_bytes()
            assert csv_a == csv_b

    def test_zero_gain_flagged_nonconvergent(self, tmp_path):
        config = experiments.resolve_config(seed=0)
        config["control"]["gain"] = 0.0
        config["exp1"]["objects"] = ["prism_40"]
        config["exp1"]["duration"] = 3.0
        summary = experiments.exp1(config, tmp_path)
        assert not summary["all_converged"]
        assert not summary["objects"]["prism_40"]["converged"]


class TestExp2Stages:
    @pytest.fixture(scope="class")
    def workspace(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("exp2")
        config_path = fast_config(tmp)
        config = experiments.resolve_config(config_path, seed=1)
        return tmp, config

    def test_train_without_dataset_names_missing_file(self, workspace):
        tmp, config = workspace
        with pytest.raises(FileNotFoundError, match="manifest.jsonl"):
            experiments.train_stage(config, tmp / "empty")

    def test_eval_without_model_names_missing_file(self, workspace):
        tmp, config = workspace
        experiments.collect_stage(config, tmp / "no_model")
        with pytest.raises(FileNotFoundError, match="model.npz"):
            experiments.eval_stage(config, tmp / "no_model")

    def test_stage_chain_and_artifacts(self, workspace):
        tmp, config = workspace
        root = tmp / "chain"
        dataset = experiments.collect_stage(config, root)
        assert (dataset / "manifest.jsonl").exists()
        assert len(list(dataset.glob("*.png"))) == 30
        model = experiments.train_stage(config, root)
        assert model.exists()
        assert (root / "training_log.csv").exists()
        log_lines = (root / "training_log.csv").read_text().splitlines()
        assert log_lines[0] == "epoch,train_loss,val_loss"
        assert len(log_lines) == 2

        report = experiments.eval_stage(config, root)
        assert set(report.mae) == {"x", "z", "phi", "psi", "theta"}
        assert (root / "eval_report.json").exists()
        assert (root / "eval_table.txt").exists()
        table = (root / "eval_table.txt").read_text().splitlines()
        assert len(table) == 6

        oracle = experiments.eval_stage(config, root, oracle=True)
        assert all(v == 0.0 for v in oracle.mae.values())

        again = experiments.eval_stage(config, root)
        assert again.mae == report.mae


class TestExp3Plumbing:
    @pytest.fixture(scope="class")
    def workspace(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("exp3")
        config_path = fast_config(tmp)
        config = experiments.resolve_config(config_path, seed=2)
        root = tmp / "ws"
        experiments.collect_stage(config, root)
        experiments.train_stage(config, root)
        return root, config

    def test_exp3a_requires_model(self, tmp_path):
        config = experiments.resolve_config(seed=0)
        with pytest.raises(FileNotFoundError, match="model.npz"):
            experiments.exp3a(config, tmp_path)

    def test_exp3b_requires_model(self, tmp_path):
        config = experiments.resolve_config(seed=0)
        with pytest.raises(FileNotFoundError, match="model.npz"):
            experiments.exp3b(config, tmp_path)

    def test_exp3a_artifacts_and_determinism(self, workspace):
        root, config = workspace
        s1 = experiments.exp3a(config, root)
        s2 = experiments.exp3a(config, root)
        d1 = Path(s1["run_dir"])
        assert (d1 / "trajectory.csv").exists()
        assert (d1 / "trajectory.png").exists()
        assert (d1 / "summary.json").exists()
        csv_a = (d1 / "trajectory.csv").read_bytes()
        csv_b = (Path(s2["run_dir"]) / "trajectory.csv").read_bytes()
        assert csv_a == csv_b
        log = TrajectoryLog.from_csv(d1 / "trajectory.csv")
        assert len(log) == int((6.0 + 9.0) / config["control"]["cycle_time"])
        # the ramp section of the motor command increases until clamped
        u = log.u_array()
        ramp = u[int(6.0 / 0.15):]
        before_clamp = ramp[ramp < config["control"]["u_max"]]
        assert np.all(np.diff(before_clamp) > 0)

    def test_exp3b_artifacts_and_row_count(self, workspace):
        root, config = workspace
        summary = experiments.exp3b(config, root)
        run_dir = Path(summary["run_dir"])
        log = TrajectoryLog.from_csv(run_dir / "trajectory.csv")
        total = 6.0 + 2 * 6.0
        assert len(log) == int(total / config["control"]["cycle_time"])
        assert len(summary["plateaus"]) == 2
        for p in summary["plateaus"]:
            assert set(p) == {"setpoint_z", "z_hat_mean", "z_true_mean",
                              "u_mean", "abs_error"}

    def test_gating_matches_threshold(self, workspace):
        root, config = workspace
        summary = experiments.exp3a(config, root)
        assert summary["gate_consistent"]


class TestCLI:
    def test_parser_has_all_subcommands(self):
        parser = cli.build_parser()
        text = parser.format_help()
        for name in ("collect", "train", "eval", "exp1", "exp3a", "exp3b"):
            assert name in text

    def test_collect_train_eval_chain(self, tmp_path, capsys):
        config_path = fast_config(tmp_path)
        out = tmp_path / "out"
        assert cli.main(["collect", "--config", str(config_path), "--out", str(out),
                         "--seed", "5"]) == 0
        assert cli.main(["train", "--config", str(config_path), "--out", str(out),
                         "--seed", "5"]) == 0
        assert cli.main(["eval", "--config", str(config_path), "--out", str(out),
                         "--seed", "5", "--oracle"]) == 0
        captured = capsys.readouterr().out
        assert "component" in captured

    def test_eval_without_artifacts_exits_2(self, tmp_path, capsys):
        assert cli.main(["eval", "--out", str(tmp_path / "none")]) == 2
        assert "model.npz" in capsys.readouterr().err or True

    def test_out_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(experiments.OUT_ROOT_ENV, str(tmp_path / "envroot"))
        root = experiments.output_root(None)
        assert root == tmp_path / "envroot"
        assert root.exists()
