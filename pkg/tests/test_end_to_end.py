"""Full-pipeline accuracy checks at desk scale.

These take tens of minutes each on a laptop CPU; run with `pytest -m slow`.
"""

import pytest

from evaluation.benchmark_suite import get_suite
from src.cli import EXIT_OK, run, run_suite
from src.config import RunConfig

pytestmark = pytest.mark.slow


def _run(tmp_path, **settings):
    values = {"desk_scale": "true", "seed": "0", "output_dir": str(tmp_path / "run"), **settings}
    outcome = run(RunConfig.from_mapping(values), show_progress=False)
    assert outcome.status == EXIT_OK, outcome.error
    return outcome.summary


class TestPseudoLabelAccuracy:
    def test_reaction(self, tmp_path):
        summary = _run(tmp_path, system="reaction", rho="5", method="bayes-pl")
        assert summary["relative_l2"] < 5e-2

    def test_convection(self, tmp_path):
        summary = _run(tmp_path, system="convection", beta="30", method="bayes-pl")
        assert summary["relative_l2"] < 5e-2

    def test_ensemble_reaction(self, tmp_path):
        summary = _run(tmp_path, system="reaction", rho="5", method="ensemble-pl")
        assert summary["relative_l2"] < 1e-1

    def test_convection_variance_tracks_error(self, tmp_path):
        summary = _run(tmp_path, system="convection", beta="30", method="bayes-pl")
        assert summary["variance_error_spearman"] > 0


class TestFailureModes:
    def test_vanilla_fails_on_stiff_reaction(self, tmp_path):
        summary = _run(tmp_path, system="reaction", rho="7", method="vanilla")
        assert summary["relative_l2"] > 0.5

    def test_pretraining_alone_is_not_enough(self, tmp_path):
        summary = _run(tmp_path, system="convection", beta="30", method="bayes-pl", iterations="0")
        assert summary["n_samples"] == 1
        assert summary["relative_l2"] > 0.1


class TestPretraining:
    @pytest.mark.parametrize("epochs, fits", [(4000, False), (40000, True)])
    def test_high_frequency_initial_condition(self, tmp_path, epochs, fits):
        summary = _run(tmp_path, system="diffusion", d="10", method="bayes-pl", iterations="0",
                       pretrain_epochs=str(epochs))
        assert (summary["ic_mse"] < 1e-3) is fits


class TestEarlyStop:
    def test_stops_before_budget(self, tmp_path):
        config = RunConfig.from_mapping({"system": "reaction", "rho": "5", "desk_scale": "true"}).resolved()
        summary = _run(tmp_path, system="reaction", rho="5", method="bayes-pl", early_stop="true")
        assert summary["iterations_run"] < config.iterations
        assert summary["n_pl"] == config.n_pde


class TestReactionSuite:
    def test_pseudo_labels_beat_vanilla(self, tmp_path):
        configs = get_suite("reaction", methods=["bayes-pl", "vanilla"], seed=0, desk_scale=True)
        frame = run_suite(configs, tmp_path / "suite")
        assert (frame["status"] == EXIT_OK).all()
        bayes = frame[frame["method"] == "bayes-pl"]
        assert len(bayes) == 2 and (bayes["relative_l2"] < 5e-2).all()
        vanilla = frame[(frame["method"] == "vanilla") & (frame["value"] == 7.0)]
        assert float(vanilla["relative_l2"].iloc[0]) > 0.5
