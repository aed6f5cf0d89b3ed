"""Tests for the experiment runner and its command line."""

import json

import pandas as pd
import pytest

import src.cli as cli
from src.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, build_parser, config_from_args, main, run, run_suite
from src.config import RunConfig
from src.exceptions import SamplerError
from src.network import load_checkpoint

TINY_SETTINGS = {
    "hidden_layers": "1", "hidden_width": "4",
    "n_ic": "8", "n_bc": "4", "n_pde": "16",
    "pretrain_epochs": "3", "iterations": "1", "vanilla_epochs": "3", "ensemble_epochs": "2",
    "ensemble_size": "2",
    "n_samples": "2", "n_burnin": "2", "n_leapfrog": "1", "n_chains": "1",
    "sigma_ic": "1.0", "sigma_pl": "1.0", "sigma_bc": "1.0", "sigma_pde": "1.0", "sigma_p": "1.0",
    "eval_points": "50", "grid_nx": "8", "grid_nt": "3",
}


def _tiny(tmp_path, **overrides):
    values = {"system": "reaction", "rho": "5", "output_dir": str(tmp_path / "run"), **TINY_SETTINGS}
    values.update(overrides)
    return RunConfig.from_mapping(values)


class TestRun:
    def test_vanilla_artifacts(self, tmp_path):
        outcome = run(_tiny(tmp_path, method="vanilla"), show_progress=False)
        assert outcome.status == EXIT_OK
        out = outcome.output_dir
        for name in ("summary.txt", "history.csv", "fields.csv", "checkpoint.bin",
                     "effective_config.env", "loss_curve.csv"):
            assert (out / name).exists(), name
        summary = json.loads((out / "summary.txt").read_text())
        assert summary["method"] == "vanilla"
        assert summary["rho"] == 5.0
        assert summary["n_samples"] == 1
        assert summary["relative_l2"] > 0
        assert "wall_time" in summary and "training" in summary["phase_seconds"]
        assert len(pd.read_csv(out / "fields.csv")) == 24
        arch, theta = load_checkpoint(out / "checkpoint.bin")
        assert arch.hidden_width == 4 and theta.numel() == arch.num_parameters

    def test_bayesian_artifacts(self, tmp_path):
        outcome = run(_tiny(tmp_path, method="bayes-pl"), show_progress=False)
        assert outcome.status == EXIT_OK
        out = outcome.output_dir
        assert (out / "sampler_trace.csv").exists()
        assert (out / "data.csv").exists()
        assert len(pd.read_csv(out / "history.csv")) == 1
        assert outcome.summary["iterations_run"] == 1
        assert outcome.summary["n_samples"] == 2
        assert 0.0 <= outcome.summary["acceptance_rate"] <= 1.0

    def test_ensemble_run(self, tmp_path):
        outcome = run(_tiny(tmp_path, method="ensemble-nopl"), show_progress=False)
        assert outcome.status == EXIT_OK
        assert outcome.summary["n_samples"] == 2

    def test_effective_config_reproduces(self, tmp_path):
        config = _tiny(tmp_path, method="vanilla")
        outcome = run(config, show_progress=False)
        assert RunConfig.from_file(outcome.output_dir / "effective_config.env") == config.resolved()

    def test_repeat_runs_are_identical(self, tmp_path):
        timing = {"wall_time", "phase_seconds"}
        summaries = []
        for name in ("first", "second"):
            outcome = run(_tiny(tmp_path, method="bayes-pl", output_dir=str(tmp_path / name)), show_progress=False)
            summaries.append({k: v for k, v in outcome.summary.items() if k not in timing})
        assert summaries[0] == summaries[1]
        first, second = (pd.read_csv(tmp_path / name / "fields.csv") for name in ("first", "second"))
        pd.testing.assert_frame_equal(first, second)

    def test_config_error(self, tmp_path):
        outcome = run(_tiny(tmp_path, system="burgers", rho=""), show_progress=False)
        assert outcome.status == EXIT_CONFIG
        assert outcome.output_dir is None
        assert "system" in outcome.error
        assert not (tmp_path / "run").exists()

    def test_training_failure_writes_diagnostics(self, tmp_path, monkeypatch):
        def failing_train(*args, **kwargs):
            raise SamplerError("Acceptance rate 0 over burn-in", chain=1, iteration=4)

        monkeypatch.setattr(cli, "train", failing_train)
        outcome = run(_tiny(tmp_path, method="bayes-pl"), show_progress=False)
        assert outcome.status == EXIT_FAILURE
        diagnostics = (outcome.output_dir / "diagnostics.txt").read_text()
        assert "SamplerError" in diagnostics
        assert "iteration 4" in diagnostics
        assert not (outcome.output_dir / "summary.txt").exists()

    def test_unexpected_error_is_contained(self, tmp_path, monkeypatch):
        def crashing_train(*args, **kwargs):
            raise RuntimeError("CUDA out of memory")

        monkeypatch.setattr(cli, "train", crashing_train)
        outcome = run(_tiny(tmp_path, method="bayes-pl"), show_progress=False)
        assert outcome.status == EXIT_FAILURE
        assert "RuntimeError" in outcome.error
        assert "CUDA out of memory" in (outcome.output_dir / "diagnostics.txt").read_text()


class TestSuite:
    def test_failures_are_recorded(self, tmp_path):
        configs = [_tiny(tmp_path, method="vanilla"), _tiny(tmp_path, method="mcmc")]
        frame = run_suite(configs, tmp_path / "suite")
        assert list(frame["status"]) == [EXIT_OK, EXIT_CONFIG]
        assert list(frame["parameter"]) == ["rho", "rho"]
        assert (tmp_path / "suite" / "results.csv").exists()
        assert (tmp_path / "suite" / "reaction_rho5_vanilla" / "summary.txt").exists()

    def test_crashing_run_does_not_stop_the_suite(self, tmp_path, monkeypatch):
        def crashing_train(*args, **kwargs):
            raise RuntimeError("matrix is singular")

        monkeypatch.setattr(cli, "train", crashing_train)
        configs = [_tiny(tmp_path, method="bayes-pl"), _tiny(tmp_path, method="vanilla")]
        frame = run_suite(configs, tmp_path / "suite")
        assert list(frame["status"]) == [EXIT_FAILURE, EXIT_OK]
        assert "matrix is singular" in frame["error"][0]
        results = pd.read_csv(tmp_path / "suite" / "results.csv")
        assert list(results["method"]) == ["bayes-pl", "vanilla"]

    def test_two_systems_two_methods(self, tmp_path):
        configs = [
            _tiny(tmp_path, method=method, **params)
            for params in ({"system": "reaction", "rho": "5"}, {"system": "convection", "rho": "", "beta": "30"})
            for method in ("vanilla", "ensemble-pl")
        ]
        frame = run_suite(configs, tmp_path / "suite")
        assert len(frame) == 4
        assert list(frame["status"]) == [EXIT_OK] * 4
        assert set(frame["system"]) == {"reaction", "convection"}
        assert frame["relative_l2"].notna().all()


class TestCommandLine:
    def test_param_maps_to_primary_parameter(self):
        args = build_parser().parse_args(["run", "--system", "convection", "--param", "40", "--out", "x"])
        config = config_from_args(args)
        assert config.beta == 40.0 and config.rho is None
        assert config.output_dir == "x"

    def test_default_output_is_slugged(self):
        args = build_parser().parse_args(["run", "--system", "diffusion", "--param", "5", "--method", "vanilla"])
        assert config_from_args(args).output_dir.endswith("diffusion_d5_vanilla")

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("system=convection\nbeta=30\nseed=1\noutput_dir=elsewhere\n")
        args = build_parser().parse_args(["run", "--config", str(path), "--seed", "7", "--param", "40"])
        config = config_from_args(args)
        assert (config.seed, config.beta, config.output_dir) == (7, 40.0, "elsewhere")

    def test_main_run(self, tmp_path, capsys):
        path = tmp_path / "tiny.env"
        path.write_text("".join(f"{key}={value}\n" for key, value in TINY_SETTINGS.items()))
        status = main(["run", "--config", str(path), "--system", "reaction", "--param", "5",
                       "--method", "vanilla", "--out", str(tmp_path / "out"), "--no-progress"])
        assert status == EXIT_OK
        assert "relative L2" in capsys.readouterr().out
        assert (tmp_path / "out" / "summary.txt").exists()

    def test_main_config_error(self, capsys):
        status = main(["run", "--system", "burgers", "--param", "1"])
        assert status == EXIT_CONFIG
        assert "error" in capsys.readouterr().out

    def test_unknown_suite_preset(self, capsys):
        assert main(["suite", "--preset", "everything"]) == EXIT_CONFIG

    def test_requires_subcommand(self):
        with pytest.raises(SystemExit):
            main([])
