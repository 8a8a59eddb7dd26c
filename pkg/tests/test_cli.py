"""Tests for the command line entry point."""
from unittest.mock import patch

import pytest

from src.cli import build_config, build_parser, main
from src.config import ExitCode, GammaMode, InitStrategy, Method, PropertyKind, Selection
from src.oracles import OracleResult
from src.schemas import ExperimentConfig, ProlinSettings

TINY_FLAGS = [
    "--name", "cli", "--seed", "0", "--rounds", "4", "--clients", "6", "--fraction", "0.5",
    "--positives", "2", "--local-size", "10", "--batch-size", "5", "--hidden-dim", "6",
    "--aux-size", "60", "--detector-updates", "20", "--detector-epochs", "20", "--eval-every", "2",
    "--method", "ols", "--method", "reg",
]


class TestBuildConfig:
    """Tests for turning flags into a config"""

    def test_flags_override_preset(self):
        """Test that explicit flags land on the desk preset"""
        args = build_parser().parse_args(["run", "--property", "ascent", "--rounds", "30", "--seed", "4", "--seed", "5"])
        config = build_config(args)
        assert config.property is PropertyKind.ASCENT
        assert config.rounds == 30
        assert config.seeds == [4, 5]
        assert config.clients == 20

    def test_json_config_with_override(self, tmp_path):
        """Test that flags override a JSON config file"""
        path = tmp_path / "experiment.json"
        path.write_text(ExperimentConfig.desk(name="fromfile", clients=10).model_dump_json())
        args = build_parser().parse_args(["run", "--config", str(path), "--lam", "2.5", "--no-secure-aggregation"])
        config = build_config(args)
        assert (config.name, config.clients, config.lam) == ("fromfile", 10, 2.5)
        assert config.secure_aggregation is False

    def test_remaining_top_level_flags(self):
        """Test the data, detector and encoding flags"""
        args = build_parser().parse_args([
            "run", "--eval-size", "150", "--detector-l2", "0.5", "--fixed-point-bits", "20", "--target-label-flip",
        ])
        config = build_config(args)
        assert (config.eval_size, config.detector_l2, config.fixed_point_bits) == (150, 0.5, 20)
        assert config.target_label_flip is True

    def test_nested_flags(self):
        """Test that dataset and PROLIN flags change only the named nested fields"""
        args = build_parser().parse_args([
            "run", "--dataset-dim", "3", "--dataset-separation", "6.5",
            "--prolin-init", "uniform", "--prolin-learning-rate", "0.2", "--prolin-max-iters", "50",
            "--prolin-gamma-mode", "fixed", "--prolin-gamma3", "4.0", "--prolin-selection", "top_k",
            "--no-prolin-normalize",
        ])
        config = build_config(args)
        assert (config.dataset.kind, config.dataset.dim, config.dataset.separation) == ("synthetic", 3, 6.5)
        assert config.prolin.init is InitStrategy.UNIFORM
        assert (config.prolin.learning_rate, config.prolin.max_iters, config.prolin.gamma3) == (0.2, 50, 4.0)
        assert config.prolin.gamma_mode is GammaMode.FIXED
        assert config.prolin.selection is Selection.TOP_K
        assert config.prolin.normalize is False
        assert config.prolin.momentum == ProlinSettings().momentum

    def test_nested_flags_keep_file_values(self, tmp_path):
        """Test that a nested flag merges into the PROLIN settings of a JSON config"""
        path = tmp_path / "experiment.json"
        path.write_text(ExperimentConfig.desk(prolin=ProlinSettings(max_iters=77, gamma1=2.0)).model_dump_json())
        args = build_parser().parse_args(["run", "--config", str(path), "--prolin-gamma2", "3.0"])
        prolin = build_config(args).prolin
        assert (prolin.max_iters, prolin.gamma1, prolin.gamma2) == (77, 2.0, 3.0)

    def test_invalid_choice_rejected(self):
        """Test that unknown enum values are rejected by the parser"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["run", "--prolin-gamma-mode", "adaptive"])

    def test_methods_flag(self):
        """Test that repeated --method flags select methods"""
        args = build_parser().parse_args(["run", "--method", "prolin", "--method", "ols"])
        assert build_config(args).methods == [Method.PROLIN, Method.OLS]


class TestMain:
    """Tests for exit codes and commands"""

    def test_oracle_ok(self, capsys):
        """Test that a passing suite exits 0"""
        assert main(["oracle", "--suite", "ovl"]) == ExitCode.OK
        assert "ovl" in capsys.readouterr().out

    def test_oracle_mismatch(self):
        """Test that a failing suite exits 3"""
        with patch.dict("src.oracles.SUITES", {"ovl": lambda: OracleResult("ovl", False, "forced")}):
            assert main(["oracle", "--suite", "ovl"]) == ExitCode.ORACLE_MISMATCH

    def test_bad_config(self, tmp_path):
        """Test that an inconsistent config exits 2"""
        code = main(["run", "--clients", "5", "--fraction", "0.01", "--positives", "1", "--root", str(tmp_path)])
        assert code == ExitCode.BAD_CONFIG

    def test_export_missing_archive(self, tmp_path):
        """Test that a stage failure exits 1"""
        assert main(["export", str(tmp_path / "absent"), "f1"]) == ExitCode.STAGE_FAILURE

    def test_unknown_command(self):
        """Test that argparse rejects unknown subcommands"""
        with pytest.raises(SystemExit):
            main(["train"])

    def test_run_then_export(self, archive_root, capsys):
        """Test a small run followed by an F1 export"""
        assert main(["run", *TINY_FLAGS, "--root", str(archive_root)]) == ExitCode.OK
        assert "Archive:" in capsys.readouterr().out
        assert (archive_root / "metrics_mean.csv").exists()
        assert main(["export", str(archive_root), "f1", "--method", "reg"]) == ExitCode.OK
        assert (archive_root / "plots" / "f1_reg.csv").exists()

    def test_simulate_then_attack(self, archive_root, capsys):
        """Test attacking a run produced by the simulate command"""
        assert main(["simulate", *TINY_FLAGS, "--root", str(archive_root)]) == ExitCode.OK
        run_dir = capsys.readouterr().out.strip().splitlines()[-1]
        assert main(["attack", run_dir]) == ExitCode.OK
        assert "F1" in capsys.readouterr().out
