"""Tests for the MLP, its parameter layout and checkpoints."""

import math

import numpy as np
import pytest
import torch

from src.exceptions import UsageError
from src.network import (
    Architecture,
    ensemble_predictions,
    flatten,
    forward,
    forward_jet,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
    unflatten,
)

SMALL = Architecture(hidden_layers=2, hidden_width=5)


def _random_theta(arch, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return torch.tensor(rng.normal(scale=scale, size=arch.num_parameters), dtype=torch.float64)


class TestArchitecture:
    def test_default_architecture_parameter_count(self):
        assert Architecture().num_parameters == 7851

    def test_closed_form_count(self):
        arch = Architecture(input_dim=2, hidden_layers=3, hidden_width=7, output_dim=1)
        w = 7
        assert arch.num_parameters == (2 * w + w) + 2 * (w * w + w) + (w + 1)

    def test_rejects_empty_layers(self):
        with pytest.raises(ValueError):
            Architecture(hidden_width=0)


class TestLayout:
    def test_flatten_unflatten_round_trip(self):
        theta = _random_theta(SMALL)
        assert torch.equal(flatten(unflatten(SMALL, theta)), theta)

    def test_layer_shapes(self):
        layers = unflatten(SMALL, _random_theta(SMALL))
        assert [tuple(w.shape) for w, _ in layers] == [(2, 5), (5, 5), (5, 1)]
        assert [tuple(b.shape) for _, b in layers] == [(5,), (5,), (1,)]

    def test_length_mismatch(self):
        with pytest.raises(UsageError):
            unflatten(SMALL, torch.zeros(SMALL.num_parameters + 1, dtype=torch.float64))


class TestInitParameters:
    def test_deterministic(self):
        assert torch.equal(init_parameters(Architecture(), 11), init_parameters(Architecture(), 11))

    def test_seeds_differ(self):
        assert not torch.equal(init_parameters(SMALL, 1), init_parameters(SMALL, 2))

    def test_length_and_bounds(self):
        arch = Architecture()
        theta = init_parameters(arch, 3)
        assert theta.numel() == 7851
        for weight, bias in unflatten(arch, theta):
            fan_in, fan_out = weight.shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            assert float(weight.abs().max()) <= bound
            assert torch.all(bias == 0)
        assert bool(torch.isfinite(theta).all())


class TestForward:
    def test_zero_parameters(self):
        theta = torch.zeros(SMALL.num_parameters, dtype=torch.float64)
        out = forward(SMALL, theta, [0.1, 2.0, 5.0], [0.0, 0.5, 1.0])
        np.testing.assert_array_equal(out.numpy(), 0.0)

    def test_output_bias(self):
        theta = torch.zeros(SMALL.num_parameters, dtype=torch.float64)
        theta[-1] = 0.37
        out = forward(SMALL, theta, [0.1, 2.0], [0.3, 0.9])
        np.testing.assert_array_equal(out.numpy(), 0.37)

    def test_matches_hand_computed_matrix_chain(self):
        theta = _random_theta(SMALL, seed=4)
        values = theta.numpy()
        w1 = values[:10].reshape(2, 5)
        b1 = values[10:15]
        w2 = values[15:40].reshape(5, 5)
        b2 = values[40:45]
        w3 = values[45:50].reshape(5, 1)
        b3 = values[50:51]
        x = np.array([0.2, 1.3, 4.4])
        t = np.array([0.1, 0.6, 0.9])
        h = np.tanh(np.stack([x, t], axis=1) @ w1 + b1)
        h = np.tanh(h @ w2 + b2)
        expected = (h @ w3 + b3)[:, 0]
        np.testing.assert_allclose(forward(SMALL, theta, x, t).numpy(), expected, rtol=1e-12, atol=1e-14)

    def test_broadcasting(self):
        theta = _random_theta(SMALL)
        out = forward(SMALL, theta, torch.linspace(0, 1, 4, dtype=torch.float64), 0.5)
        assert out.shape == (4,)


class TestForwardJet:
    def test_zero_parameters(self):
        theta = torch.zeros(SMALL.num_parameters, dtype=torch.float64)
        jet = forward_jet(SMALL, theta, [0.5, 1.5], [0.2, 0.4])
        for component in (jet.val, jet.dx, jet.dt, jet.dxx):
            np.testing.assert_array_equal(component.numpy(), 0.0)

    def test_value_equals_forward_exactly(self):
        theta = _random_theta(Architecture(), seed=2, scale=0.2)
        x = torch.linspace(0, 2 * math.pi, 17, dtype=torch.float64)
        t = torch.linspace(0, 1, 17, dtype=torch.float64)
        assert torch.equal(forward_jet(Architecture(), theta, x, t).val, forward(Architecture(), theta, x, t))

    def test_single_tanh_unit(self):
        arch = Architecture(hidden_layers=1, hidden_width=1)
        # W1 = [[1], [0]], b1 = 0, W2 = [[1]], b2 = 0  ->  u = tanh(x)
        theta = torch.tensor([1.0, 0.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        x = torch.tensor([-0.7, 0.0, 1.2], dtype=torch.float64)
        jet = forward_jet(arch, theta, x, torch.zeros(3, dtype=torch.float64))
        s = torch.tanh(x)
        np.testing.assert_allclose(jet.dx.numpy(), (1 - s**2).numpy(), rtol=1e-14)
        np.testing.assert_allclose(jet.dxx.numpy(), (-2 * s * (1 - s**2)).numpy(), rtol=1e-14, atol=1e-16)
        np.testing.assert_array_equal(jet.dt.numpy(), 0.0)

    def test_derivatives_match_finite_differences(self):
        arch = SMALL
        theta = _random_theta(arch, seed=9)
        x = np.array([0.3, 2.1, 5.5])
        t = np.array([0.2, 0.5, 0.8])
        jet = forward_jet(arch, theta, x, t)

        def u(xq, tq):
            return forward(arch, theta, xq, tq).numpy()

        h, h2 = 1e-5, 1e-4
        dx = (u(x + h, t) - u(x - h, t)) / (2 * h)
        dt = (u(x, t + h) - u(x, t - h)) / (2 * h)
        dxx = (u(x + h2, t) - 2 * u(x, t) + u(x - h2, t)) / h2**2
        np.testing.assert_allclose(jet.dx.numpy(), dx, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(jet.dt.numpy(), dt, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(jet.dxx.numpy(), dxx, rtol=1e-6, atol=1e-6)


class TestEnsemblePredictions:
    def test_shape_and_rows(self):
        samples = [_random_theta(SMALL, seed=s) for s in range(3)]
        x = np.linspace(0, 6, 8)
        t = np.linspace(0, 1, 8)
        predictions = ensemble_predictions(SMALL, samples, x, t)
        assert predictions.shape == (3, 8)
        np.testing.assert_array_equal(predictions[1], forward(SMALL, samples[1], x, t).numpy())

    def test_accepts_stacked_tensor(self):
        samples = torch.stack([_random_theta(SMALL, seed=s) for s in range(2)])
        assert ensemble_predictions(SMALL, samples, [1.0], [0.5]).shape == (2, 1)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        theta = _random_theta(SMALL, seed=5)
        path = save_checkpoint(tmp_path / "ckpt" / "model.bin", SMALL, theta)
        arch, loaded = load_checkpoint(path)
        assert arch == SMALL
        assert torch.equal(loaded, theta)

    def test_header(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.bin", SMALL, _random_theta(SMALL))
        header = path.read_bytes().split(b"\n", 1)[0].decode()
        assert header.startswith("bplpinn-checkpoint")
        assert f"count={SMALL.num_parameters}" in header

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "other.bin"
        path.write_bytes(b"not a checkpoint\n\x00\x00")
        with pytest.raises(UsageError):
            load_checkpoint(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = save_checkpoint(tmp_path / "model.bin", SMALL, _random_theta(SMALL))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(UsageError):
            load_checkpoint(path)
