"""Configuration parsing and the command-line interface."""

import json

import numpy as np
import pytest

from tryondiff import cli
from tryondiff.config import ConfigError, PipelineConfig, load_config, write_config


class TestConfig:
    def test_defaults_valid(self):
        cfg = PipelineConfig()
        assert cfg.T == 50
        assert cfg.resolutions == (32, 64)

    def test_roundtrip(self, tmp_path):
        cfg = PipelineConfig(T=10, scm_widths=(8, 12), out_dir="elsewhere")
        path = tmp_path / "p.ini"
        write_config(cfg, path)
        back = load_config(path)
        assert back == cfg

    def test_case_sensitive_keys(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text("[diffusion]\nT = 7\n")
        assert load_config(path).T == 7

    def test_unknown_section_and_key(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text("[nosuch]\nx = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)
        path.write_text("[scm]\nlearning = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_value_reports_location(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text("[diffusion]\nT = many\n")
        with pytest.raises(ConfigError) as e:
            load_config(path)
        assert "diffusion.T" in str(e.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.ini")

    def test_resolution_validation(self):
        with pytest.raises(ConfigError):
            PipelineConfig(resolutions=(64, 32))
        with pytest.raises(ConfigError):
            PipelineConfig(resolutions=(30,))

    def test_rung_size_aspect(self):
        cfg = PipelineConfig()
        assert cfg.rung_size(64) == (64, 48)
        assert cfg.rung_size(32) == (32, 24)

    def test_bool_parsing(self, tmp_path):
        path = tmp_path / "p.ini"
        path.write_text("[train]\nteacher_forcing = no\n")
        assert load_config(path).teacher_forcing is False
        path.write_text("[train]\nteacher_forcing = maybe\n")
        with pytest.raises(ConfigError):
            load_config(path)


class TestCLIErrors:
    def test_no_command_is_usage_error(self, capsys):
        assert cli.main([]) == 1

    def test_unknown_command(self, capsys):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_required_argument(self, capsys):
        assert cli.main(["gen-data"]) == 1

    def test_missing_config_file(self, capsys):
        assert cli.main(["gen-data", "--config", "/nonexistent.ini"]) == 1

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == 0

    def test_train_before_gen_data_fails(self, tmp_path, capsys):
        cfg = tmp_path / "p.ini"
        cfg.write_text(f"[data]\nroot = {tmp_path / 'none'}\n[train]\nout_dir = {tmp_path / 'out'}\n")
        assert cli.main(["train", "--config", str(cfg), "--stage", "scm"]) == 1

    def test_tryon_before_training_fails(self, tmp_path, capsys):
        cfg = tmp_path / "p.ini"
        cfg.write_text(f"[data]\nroot = {tmp_path / 'none'}\n[train]\nout_dir = {tmp_path / 'out'}\n")
        code = cli.main(
            ["try-on", "--config", str(cfg), "--person", "x", "--garment", "y"]
        )
        assert code == 2  # missing checkpoints is a runtime failure


class TestCLIPipeline:
    def test_gen_data_summary(self, micro_env, capsys):
        code = cli.main(["gen-data", "--config", str(micro_env["config"])])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["command"] == "gen-data"
        assert "32" in summary["datasets"]

    def test_try_on_writes_artifacts(self, micro_env, capsys):
        code = cli.main(
            [
                "try-on",
                "--config", str(micro_env["config"]),
                "--person", "test_00000",
                "--garment", "test_00001",
                "--role", "upper",
            ]
        )
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        from pathlib import Path

        assert Path(summary["image"]).exists()
        assert Path(summary["segmentation"]).exists()

    def test_unknown_sample_id(self, micro_env, capsys):
        code = cli.main(
            [
                "edit",
                "--config", str(micro_env["config"]),
                "--person", "test_99999",
                "--shape-garment", "test_00000",
                "--texture-garment", "test_00001",
            ]
        )
        assert code == 1

    def test_eval_subcommand(self, micro_env, tmp_path, capsys):
        from PIL import Image

        rng = np.random.default_rng(0)
        for d in ("pred", "ref"):
            (tmp_path / d).mkdir()
        for i in range(3):
            arr = (rng.random((32, 32, 3)) * 255).astype(np.uint8)
            Image.fromarray(arr).save(tmp_path / "pred" / f"s{i}.png")
            Image.fromarray(arr).save(tmp_path / "ref" / f"s{i}.png")
        code = cli.main(
            [
                "eval",
                "--config", str(micro_env["config"]),
                "--pred", str(tmp_path / "pred"),
                "--ref", str(tmp_path / "ref"),
            ]
        )
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["report"]["metrics"]["ssim"]["mean"] == pytest.approx(1.0)

    def test_outfit_subcommand(self, micro_env, capsys):
        code = cli.main(
            [
                "outfit",
                "--config", str(micro_env["config"]),
                "--person", "test_00000",
                "--top", "test_00001",
                "--bottom", "test_00000",
            ]
        )
        assert code == 0
