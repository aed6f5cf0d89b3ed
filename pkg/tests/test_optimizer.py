"""Tests for Adam, the PINN loss and pretraining."""

import math

import numpy as np
import pytest
import torch

from src.data_loader import DatasetSizes, PointSet, TrainingData, build_bundle
from src.exceptions import DivergenceError, UsageError
from src.network import Architecture, init_parameters
from src.optimizer import (
    AdamConfig,
    AdamState,
    LossCurve,
    LossWeights,
    adam_step,
    pinn_loss,
    pinn_loss_terms,
    pretrain,
    train_adam,
)
from src.systems import SystemKind, SystemSpec

TINY = Architecture(hidden_layers=1, hidden_width=8)
REACTION = SystemSpec(SystemKind.REACTION, rho=2.0)


def _tiny_data(u_shift=0.0):
    bundle = build_bundle(REACTION, seed=0, sizes=DatasetSizes(16, 8, 32))
    data = bundle.training_data()
    if u_shift:
        return TrainingData(**{**vars(data), "ic_u": data.ic_u + u_shift})
    return data


class TestAdamStep:
    def test_matches_torch_adam(self):
        rng = np.random.default_rng(0)
        target = torch.tensor(rng.normal(size=6), dtype=torch.float64)
        start = torch.tensor(rng.normal(size=6), dtype=torch.float64)

        reference = start.clone().requires_grad_(True)
        torch_adam = torch.optim.Adam([reference], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
        state = AdamState.zeros(6, AdamConfig(learning_rate=1e-2))
        theta = start.clone()
        for _ in range(50):
            torch_adam.zero_grad()
            loss = torch.sum((reference - target) ** 4)
            loss.backward()
            torch_adam.step()
            state, theta = adam_step(state, theta, 4 * (theta - target) ** 3)
        np.testing.assert_allclose(theta.numpy(), reference.detach().numpy(), rtol=1e-8, atol=1e-10)
        assert state.step == 50

    def test_first_step_is_sign_scaled(self):
        state = AdamState.zeros(3, AdamConfig(learning_rate=0.1))
        gradient = torch.tensor([2.0, -0.5, 30.0], dtype=torch.float64)
        _, theta = adam_step(state, torch.zeros(3, dtype=torch.float64), gradient)
        np.testing.assert_allclose(theta.numpy(), [-0.1, 0.1, -0.1], rtol=1e-7)

    def test_zero_gradient_leaves_parameters_unchanged(self):
        state = AdamState.zeros(4)
        start = torch.tensor([0.3, -1.2, 0.0, 5.0], dtype=torch.float64)
        theta = start.clone()
        for _ in range(200):
            state, theta = adam_step(state, theta, torch.zeros(4, dtype=torch.float64))
        torch.testing.assert_close(theta, start, rtol=0.0, atol=0.0)
        assert state.step == 200

    def test_minimizes_quadratic(self):
        state = AdamState.zeros(1)
        theta = torch.ones(1, dtype=torch.float64)
        for _ in range(10000):
            state, theta = adam_step(state, theta, 2.0 * theta)
        assert abs(float(theta)) < 1e-2

    def test_non_finite_gradient(self):
        state = AdamState.zeros(2)
        with pytest.raises(DivergenceError) as excinfo:
            adam_step(state, torch.zeros(2, dtype=torch.float64), torch.tensor([1.0, math.nan], dtype=torch.float64))
        assert excinfo.value.epoch == 1

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            adam_step(AdamState.zeros(2), torch.zeros(2, dtype=torch.float64), torch.zeros(3, dtype=torch.float64))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AdamConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            AdamConfig(beta2=1.0)


class TestLossWeights:
    def test_ensemble_weights_are_active_fractions(self):
        bundle = build_bundle(REACTION, seed=0, sizes=DatasetSizes(16, 8, 40))
        bc_mask = np.zeros(8, dtype=bool)
        bc_mask[:2] = True
        pde_mask = np.zeros(40, dtype=bool)
        pde_mask[:10] = True
        weights = LossWeights.ensemble(bundle.training_data(bc_mask, pde_mask))
        assert (weights.ic, weights.bc, weights.pde) == (1.0, 0.25, 0.25)

    def test_uniform(self):
        assert LossWeights.uniform() == LossWeights(1.0, 1.0, 1.0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LossWeights(pde=-1.0)


class TestPinnLoss:
    def test_zero_network(self):
        data = _tiny_data()
        theta = torch.zeros(TINY.num_parameters, dtype=torch.float64)
        terms = pinn_loss_terms(REACTION, TINY, theta, data)
        np.testing.assert_allclose(float(terms["ic"]), float(torch.mean(data.ic_u**2)), rtol=1e-14)
        assert float(terms["bc"]) == 0.0
        assert float(terms["pde"]) == 0.0

    def test_labeled_term_covers_pseudo_labels(self):
        bundle = build_bundle(REACTION, seed=0, sizes=DatasetSizes(4, 4, 10)).with_pseudo_labels([0, 1], [1.0, 1.0])
        theta = torch.zeros(TINY.num_parameters, dtype=torch.float64)
        terms = pinn_loss_terms(REACTION, TINY, theta, bundle.training_data())
        expected = (float(torch.sum(torch.as_tensor(bundle.ic.u) ** 2)) + 2.0) / 6
        np.testing.assert_allclose(float(terms["ic"]), expected, rtol=1e-12)

    def test_weighted_sum(self):
        data = _tiny_data()
        theta = init_parameters(TINY, 3)
        terms = pinn_loss_terms(REACTION, TINY, theta, data)
        weights = LossWeights(ic=2.0, bc=0.5, pde=0.25)
        expected = 2.0 * terms["ic"] + 0.5 * terms["bc"] + 0.25 * terms["pde"]
        np.testing.assert_allclose(float(pinn_loss(REACTION, TINY, theta, data, weights)), float(expected), rtol=1e-14)

    def test_empty_sets(self):
        empty = TrainingData.from_sets(
            PointSet([1.0], [0.0], [0.5]), PointSet.empty(), PointSet.empty(False), PointSet.empty(False)
        )
        terms = pinn_loss_terms(REACTION, TINY, init_parameters(TINY, 0), empty)
        assert float(terms["bc"]) == 0.0 and float(terms["pde"]) == 0.0


class TestTrainAdam:
    def test_loss_decreases(self):
        data = _tiny_data()
        theta = init_parameters(TINY, 1)
        curve = LossCurve()
        trained = train_adam(REACTION, TINY, theta, data, LossWeights.uniform(), 200,
                             AdamConfig(learning_rate=1e-2), curve)
        assert len(curve.rows) == 200
        assert curve.rows[-1]["total"] < 0.9 * curve.rows[0]["total"]
        assert float(pinn_loss(REACTION, TINY, trained, data)) < curve.rows[0]["total"]
        assert not torch.equal(trained, theta)

    def test_non_finite_loss(self):
        data = _tiny_data(u_shift=math.nan)
        with pytest.raises(DivergenceError) as excinfo:
            train_adam(REACTION, TINY, init_parameters(TINY, 0), data, LossWeights.uniform(), 5)
        assert excinfo.value.epoch == 1

    def test_loss_curve_frame(self, tmp_path):
        curve = LossCurve()
        train_adam(REACTION, TINY, init_parameters(TINY, 0), _tiny_data(), LossWeights.uniform(), 3, curve=curve)
        frame = curve.to_frame()
        assert list(frame.columns) == ["epoch", "total", "ic", "bc", "pde"]
        assert list(frame["epoch"]) == [1, 2, 3]
        assert curve.to_csv(tmp_path / "loss.csv").exists()


class TestPretrain:
    def test_zero_epochs_is_initialization(self):
        theta = pretrain(REACTION, TINY, _tiny_data(), epochs=0, seed=4)
        assert torch.equal(theta, init_parameters(TINY, 4))

    def test_deterministic(self):
        first = pretrain(REACTION, TINY, _tiny_data(), epochs=20, seed=2)
        second = pretrain(REACTION, TINY, _tiny_data(), epochs=20, seed=2)
        assert torch.equal(first, second)

    def test_negative_epochs(self):
        with pytest.raises(UsageError):
            pretrain(REACTION, TINY, _tiny_data(), epochs=-1, seed=0)
