"""Integration tests for the pipeline stages on a tiny run config."""

import json

import pandas as pd
import pytest

from geonav import pipeline
from geonav.bench.scenarios import compare_trees
from geonav.core.config import Workbench, config_from_dict
from geonav.core.exceptions import ArchitectureMismatchError, ConfigError
from geonav.core.registry import Registry
from geonav.eval.battery import NullPolicy, OraclePolicy
from geonav.eval.reports import COMPARISON_COLUMNS
from geonav.learn.artifacts import load_actor


@pytest.fixture
def teacher_a(small_config, bench):
    return pipeline.train_stage(small_config, bench, "A")


class TestOutputLocation:
    """Test cases for output directories."""

    def test_config_out_dir(self, small_config, tmp_path):
        assert pipeline.run_dir(small_config) == tmp_path / "out" / "test"

    def test_environment_override(self, small_config, tmp_path, monkeypatch):
        monkeypatch.setenv(pipeline.OUT_ENV_VAR, str(tmp_path / "elsewhere"))
        assert pipeline.run_dir(small_config) == tmp_path / "elsewhere" / "test"

    @pytest.mark.parametrize("args, name", [
        (("A",), "teacher_A"),
        (("A", "st"), "teacher_A_ST"),
        (("D", None, 2), "teacher_D_s2"),
    ])
    def test_teacher_stage_names(self, args, name):
        assert pipeline.teacher_stage_name(*args) == name


class TestTrainStage:
    """Test cases for teacher training."""

    def test_files_and_registry(self, teacher_a, small_config):
        directory = pipeline.run_dir(small_config) / "teacher_A"
        assert teacher_a.directory == directory
        for name in ("teacher.json", "teacher.bin", "training_log.csv", "reward_curve.csv", "config.toml"):
            assert (directory / name).exists()
        log = pd.read_csv(directory / "training_log.csv")
        assert log["steps"].sum() == teacher_a.extra["total_steps"] == 50
        assert teacher_a.extra["episodes"] == len(log)
        with Registry.for_run(pipeline.run_dir(small_config)) as registry:
            kinds = {row["kind"] for row in registry.artifacts("test", "teacher_A")}
        assert {"checkpoint", "training_log", "reward_curve", "config"} <= kinds

    def test_checkpoint_is_a_teacher(self, teacher_a, small_config):
        bundle = load_actor(teacher_a.files["checkpoint"])
        assert (bundle.role, bundle.name) == ("teacher", "A")
        assert bundle.actor.layer_dims == [6, 8, 8, 2]

    def test_unknown_region(self, small_config, bench):
        with pytest.raises(ConfigError):
            pipeline.train_stage(small_config, bench, "Q")

    def test_resume_without_checkpoint(self, small_config, bench):
        with pytest.raises(ConfigError) as exc:
            pipeline.train_stage(small_config, bench, "A", resume=True)
        assert exc.value.field == "resume"

    def test_resume_from_final_checkpoint(self, small_config_data):
        small_config_data["td3"]["checkpoint_interval"] = 1
        cfg = config_from_dict(small_config_data)
        bench = Workbench.from_config(cfg)
        first = pipeline.train_stage(cfg, bench, "A")
        log = (first.directory / "training_log.csv").read_text(encoding="utf-8")
        assert (first.directory / "resume.json").exists()
        resumed = pipeline.train_stage(cfg, bench, "A", resume=True)
        assert resumed.extra["total_steps"] == first.extra["total_steps"]
        assert (resumed.directory / "training_log.csv").read_text(encoding="utf-8") == log

    @pytest.mark.slow
    def test_same_seed_same_outputs(self, small_config_data, tmp_path):
        roots = []
        for name in ("first", "second"):
            cfg = config_from_dict({**small_config_data, "out_dir": str(tmp_path / name)})
            pipeline.train_stage(cfg, Workbench.from_config(cfg), "A")
            roots.append(pipeline.run_dir(cfg) / "teacher_A")
        assert compare_trees(*roots) == []


class TestDistillStage:
    """Test cases for student distillation."""

    def test_student_from_two_teachers(self, teacher_a, small_config, bench):
        teacher_d = pipeline.train_stage(small_config, bench, "D")
        out = pipeline.distill_stage(
            small_config, bench, [teacher_a.files["checkpoint"], teacher_d.files["checkpoint"]],
        )
        student = load_actor(out.files["checkpoint"])
        assert (student.role, student.metadata["teachers"]) == ("student", ["A", "D"])
        assert student.actor.layer_dims == [6, 8, 8, 2]
        assert (out.directory / "datasets" / "A.json").exists()
        assert (out.directory / "datasets" / "D.json").exists()
        log = pd.read_csv(out.files["validation_log"])
        assert set(log["teacher"]) == {"A", "D"}
        assert set(out.extra["final_val_mse"]) == {"A", "D"}

    def test_without_datasets(self, teacher_a, small_config, bench):
        out = pipeline.distill_stage(small_config, bench, [teacher_a.files["checkpoint"]], save_datasets=False)
        assert not (out.directory / "datasets").exists()

    def test_no_teachers(self, small_config, bench):
        with pytest.raises(ConfigError):
            pipeline.distill_stage(small_config, bench, [])

    def test_architecture_mismatch(self, teacher_a, small_config_data, tmp_path):
        small_config_data["td3"]["hidden"] = [4]
        small_config_data["out_dir"] = str(tmp_path / "narrow")
        cfg = config_from_dict(small_config_data)
        bench = Workbench.from_config(cfg)
        narrow = pipeline.train_stage(cfg, bench, "D")
        with pytest.raises(ArchitectureMismatchError):
            pipeline.distill_stage(cfg, bench, [teacher_a.files["checkpoint"], narrow.files["checkpoint"]])


class TestTasksStage:
    """Test cases for battery task files."""

    def test_tasks_and_calibration(self, small_config, bench):
        out = pipeline.tasks_stage(small_config, bench, "A_small")
        tasks = pd.read_csv(out.files["tasks_A_small"])
        assert list(tasks.columns) == pipeline.TASK_COLUMNS
        assert tasks["task_id"].tolist() == [0, 1, 2]
        assert tasks["max_steps"].unique().tolist() == [15]
        calibration = json.loads(out.files["calibration_A_small"].read_text(encoding="utf-8"))
        assert calibration["goal_radius_km"] == out.extra["goal_radius_km"] > 0.0

    def test_battery_is_shared_across_calls(self, small_config, bench):
        assert pipeline.battery_tasks(small_config, bench, "middle") == pipeline.battery_tasks(small_config, bench, "middle")

    def test_without_calibration(self, small_config, bench):
        out = pipeline.tasks_stage(small_config, bench, "middle", calibrate=False)
        assert "goal_radius_km" not in out.extra
        assert out.extra["n_tasks"] == 2


class TestResolvePolicy:
    """Test cases for policy specs."""

    def test_builtin_policies(self, small_config):
        assert isinstance(pipeline.resolve_policy(small_config, "oracle")[0], OraclePolicy)
        assert pipeline.resolve_policy(small_config, "null")[1] == "null"
        assert pipeline.resolve_policy(small_config, "baseline:de")[1] == "baseline_DE"

    def test_teacher_checkpoint(self, teacher_a, small_config):
        _, label = pipeline.resolve_policy(small_config, str(teacher_a.files["checkpoint"]))
        assert label == "teacher_A"

    @pytest.mark.parametrize("spec", ["baseline:simplex", "random", "missing.json"])
    def test_unknown(self, small_config, spec):
        with pytest.raises(ConfigError) as exc:
            pipeline.resolve_policy(small_config, spec)
        assert exc.value.field == "policy"


class TestEvalStage:
    """Test cases for battery evaluation."""

    def test_reports_and_comparison(self, small_config, bench):
        oracle = pipeline.eval_stage(small_config, bench, "oracle", "A_small")
        assert oracle.directory == pipeline.run_dir(small_config) / "eval" / "oracle__A_small"
        assert oracle.report.sr_permille == 1000.0
        assert len(list((oracle.directory / "trajectories").iterdir())) == 3
        pipeline.eval_stage(small_config, bench, "null", "A_small", trajectories=False)
        comparison = pd.read_csv(pipeline.run_dir(small_config) / "eval" / "comparison_A_small.csv")
        assert list(comparison.columns) == COMPARISON_COLUMNS
        assert comparison["policy"].tolist() == ["null", "oracle"]
        assert comparison["sr_permille"].tolist() == [0.0, 1000.0]

    def test_null_records(self, small_config, bench):
        out = pipeline.eval_stage(small_config, bench, "null", "middle", trajectories=False)
        assert out.extra["label"] == "null"
        assert [r.termination_reason for r in out.extra["records"]] == ["step_budget", "step_budget"]
        assert not (out.directory / "trajectories").exists()

    def test_baseline(self, small_config, bench):
        seen = []
        out = pipeline.eval_stage(small_config, bench, "baseline:DE", "A_small", on_episode=seen.append)
        assert out.extra["label"] == "baseline_DE"
        assert len(seen) == 3
        metrics = pd.read_csv(out.files["metrics"])
        assert metrics.iloc[0]["policy"] == "baseline_DE"
        assert metrics.iloc[0]["region"] == "A"

    def test_workers_do_not_change_reports(self, small_config_data, tmp_path):
        outputs = []
        for workers in (1, 3):
            cfg = config_from_dict({**small_config_data, "workers": workers, "out_dir": str(tmp_path / f"w{workers}")})
            pipeline.eval_stage(cfg, Workbench.from_config(cfg), "baseline:PSO", "A_small")
            outputs.append(pipeline.run_dir(cfg) / "eval" / "baseline_PSO__A_small")
        assert compare_trees(*outputs) == []

    def test_workers_argument_overrides_config(self, small_config, bench):
        out = pipeline.eval_stage(small_config, bench, "oracle", "A_small", trajectories=False, workers=2)
        assert [r.task.task_id for r in out.extra["records"]] == [0, 1, 2]

    def test_policies_are_fresh(self, small_config):
        assert pipeline.resolve_policy(small_config, "null")[0] is not pipeline.resolve_policy(small_config, "null")[0]
        assert isinstance(pipeline.resolve_policy(small_config, "null")[0], NullPolicy)
