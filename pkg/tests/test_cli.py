"""Tests for the CLI commands module."""

from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from geonav.cli.commands import app
from geonav.core.config import build_provider, config_from_dict
from geonav.core.exceptions import NonFiniteError
from geonav.core.models import GeoPoint
from geonav.sim.field_model import load_grid, sample, save_grid


@pytest.fixture
def runner():
    """Create a CLI test runner."""
    return CliRunner()


@pytest.fixture
def run_dir(tmp_path):
    return tmp_path / "out" / "test"


class TestCLICommands:
    """Test cases for the top-level commands."""

    def test_cli_help(self, runner):
        """Test the main help command."""
        result = runner.invoke(app, ["--help"])
        assert result.exit_code == 0
        assert "GEONAV" in result.stdout
        for command in ("train", "distill", "eval", "compare", "field", "tasks", "scenario"):
            assert command in result.stdout

    def test_invalid_command(self, runner):
        result = runner.invoke(app, ["navigate"])
        assert result.exit_code != 0

    def test_train_unknown_region(self, runner, config_file):
        result = runner.invoke(app, ["train", "-c", str(config_file), "--region", "Q"])
        assert result.exit_code == 1
        assert "Error" in result.stdout

    def test_train_missing_config(self, runner, tmp_path):
        result = runner.invoke(app, ["train", "-c", str(tmp_path / "absent.toml"), "--region", "A"])
        assert result.exit_code == 1

    def test_train(self, runner, config_file, run_dir):
        result = runner.invoke(app, ["-v", "train", "-c", str(config_file), "--region", "A"])
        assert result.exit_code == 0
        assert "Teacher A trained" in result.stdout
        assert (run_dir / "teacher_A" / "teacher.json").exists()

    def test_train_runtime_failure(self, runner, config_file):
        with patch("geonav.cli.commands.pipeline.train_stage", side_effect=NonFiniteError("critic loss")):
            result = runner.invoke(app, ["train", "-c", str(config_file), "--region", "A"])
        assert result.exit_code == 2
        assert "Run aborted" in result.stdout

    def test_distill_missing_teacher(self, runner, config_file, tmp_path):
        result = runner.invoke(app, ["distill", "-c", str(config_file), str(tmp_path / "nope.json")])
        assert result.exit_code == 1
        assert "not found" in result.stdout

    def test_distill_configured_teachers(self, runner, config_file, run_dir):
        for region in ("A", "D"):
            assert runner.invoke(app, ["train", "-c", str(config_file), "--region", region]).exit_code == 0
        result = runner.invoke(app, ["distill", "-c", str(config_file)])
        assert result.exit_code == 0
        assert "2 teacher(s)" in result.stdout
        assert (run_dir / "student" / "student.json").exists()

    def test_eval_and_compare(self, runner, config_file, run_dir):
        result = runner.invoke(app, ["eval", "-c", str(config_file), "-p", "oracle", "-b", "A_small"])
        assert result.exit_code == 0
        assert "SR" in result.stdout
        result = runner.invoke(app, ["eval", "-c", str(config_file), "-p", "baseline:DE", "-b", "A_small",
                                     "--no-trajectories"])
        assert result.exit_code == 0
        assert (run_dir / "eval" / "baseline_DE__A_small" / "metrics.csv").exists()

        result = runner.invoke(app, ["compare", "-c", str(config_file)])
        assert result.exit_code == 0
        assert "oracle" in result.stdout
        assert "baseline_DE" in result.stdout

    def test_eval_with_workers(self, runner, config_file, run_dir):
        result = runner.invoke(app, ["eval", "-c", str(config_file), "-p", "null", "-b", "A_small",
                                     "--workers", "2", "--no-trajectories"])
        assert result.exit_code == 0
        assert len(pd.read_csv(run_dir / "eval" / "null__A_small" / "episodes.csv")) == 3

    def test_eval_rejects_zero_workers(self, runner, config_file):
        result = runner.invoke(app, ["eval", "-c", str(config_file), "-p", "null", "-b", "A_small", "-w", "0"])
        assert result.exit_code != 0

    def test_eval_unknown_policy(self, runner, config_file):
        result = runner.invoke(app, ["eval", "-c", str(config_file), "-p", "random", "-b", "A_small"])
        assert result.exit_code == 1

    def test_eval_unknown_battery(self, runner, config_file):
        result = runner.invoke(app, ["eval", "-c", str(config_file), "-p", "null", "-b", "nowhere"])
        assert result.exit_code == 1

    def test_compare_empty_run(self, runner, config_file):
        result = runner.invoke(app, ["compare", "-c", str(config_file)])
        assert result.exit_code == 0
        assert "No metrics recorded" in result.stdout


class TestFieldCommands:
    """Test cases for the field sub-commands."""

    def test_query_inside_coverage(self, runner):
        result = runner.invoke(app, ["field", "query", "--lon", "100", "--lat", "-20"])
        assert result.exit_code == 0
        assert "BF" in result.stdout
        assert "nT" in result.stdout

    def test_query_outside_coverage(self, runner):
        result = runner.invoke(app, ["field", "query", "--lon", "0", "--lat", "0"])
        assert result.exit_code == 1
        assert "outside coverage" in result.stdout

    def test_import_reports_bad_line(self, runner, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("lon_deg,lat_deg,bx_nt,by_nt,bz_nt\n90,-20,1,2,3\n91,-20,abc,2,3\n", encoding="utf-8")
        result = runner.invoke(app, ["field", "import", str(path), "-o", str(tmp_path / "copy.csv")])
        assert result.exit_code == 1
        assert "line 3" in result.stdout

    def test_import_round_trip(self, runner, linear_grid, tmp_path):
        save_grid(linear_grid, tmp_path / "in.csv")
        result = runner.invoke(app, ["field", "import", str(tmp_path / "in.csv"), "-o", str(tmp_path / "copy.csv")])
        assert result.exit_code == 0
        assert "5 x 4 nodes" in result.stdout
        assert np.array_equal(load_grid(tmp_path / "copy.csv").cells, linear_grid.cells)

    def test_import_refuses_overwrite(self, runner, linear_grid, tmp_path):
        save_grid(linear_grid, tmp_path / "in.csv")
        result = runner.invoke(app, ["field", "import", str(tmp_path / "in.csv"), "-o", str(tmp_path / "in.csv")])
        assert result.exit_code == 1

    def test_export_contours(self, runner, tmp_path):
        output = tmp_path / "contours" / "bf.csv"
        result = runner.invoke(app, ["field", "export-contours", str(output), "--nlon", "3", "--nlat", "2"])
        assert result.exit_code == 0
        frame = pd.read_csv(output, float_precision="round_trip")
        assert list(frame.columns) == ["lon_deg", "lat_deg", "bf_nt"]
        assert frame["lon_deg"].tolist() == [90.0, 112.5, 135.0, 90.0, 112.5, 135.0]
        provider = build_provider(config_from_dict({"regions_preset": "four_corners"}))
        row = frame.iloc[4]
        assert row["bf_nt"] == sample(provider, GeoPoint(112.5, -10.0)).bf

    def test_export_contours_needs_lattice(self, runner, tmp_path):
        result = runner.invoke(app, ["field", "export-contours", str(tmp_path / "bf.csv"), "--nlon", "1"])
        assert result.exit_code == 1


class TestTasksAndScenarios:
    """Test cases for task and scenario sub-commands."""

    def test_tasks_generate(self, runner, config_file, run_dir):
        result = runner.invoke(app, ["tasks", "generate", "-c", str(config_file), "-b", "A_small", "--no-calibrate"])
        assert result.exit_code == 0
        assert "3 tasks generated" in result.stdout
        assert len(pd.read_csv(run_dir / "tasks" / "A_small.csv")) == 3

    def test_scenario_run_passes(self, runner, repo_root, tmp_path):
        scenario = repo_root / "scenarios" / "09_metric_units.toml"
        result = runner.invoke(app, ["scenario", "run", str(scenario), "--out", str(tmp_path)])
        assert result.exit_code == 0
        assert "1 scenario(s) passed" in result.stdout
        assert pd.read_csv(tmp_path / "summary.csv")["passed"].tolist() == [1]

    def test_scenario_run_fails(self, runner, tmp_path):
        path = tmp_path / "strict.toml"
        path.write_text(
            'name = "strict"\nkind = "metric_units"\n\n'
            '[[assertions]]\nfield = "spl_all_optimal_permille"\nop = "<"\nvalue = 10\n',
            encoding="utf-8",
        )
        result = runner.invoke(app, ["scenario", "run", str(path), "--out", str(tmp_path / "out")])
        assert result.exit_code == 1
        assert (tmp_path / "out" / "strict" / "diff.txt").read_text(encoding="utf-8").startswith("- ")

    def test_scenario_missing_file(self, runner, tmp_path):
        result = runner.invoke(app, ["scenario", "run", str(tmp_path / "absent.toml"), "--out", str(tmp_path)])
        assert result.exit_code == 1
