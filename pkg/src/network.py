"""
The candidate solution u_theta(x, t): a tanh multilayer perceptron whose
parameters live in one flat float64 vector.

Parameter layout (portable across implementations): layers in order from input
to output; per layer the weight matrix of shape (fan_in, fan_out) in row-major
order, followed by the bias vector of length fan_out. A layer computes
`a @ W + b`.

Checkpoint files are a one-line text header describing the architecture,
followed by the raw parameter vector as little-endian float64.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from src.autodiff import DTYPE, Jet2, affine, as_tensor
from src.exceptions import UsageError

CHECKPOINT_MAGIC = "bplpinn-checkpoint"

ParameterVector = torch.Tensor


@dataclass(frozen=True)
class Architecture:
    input_dim: int = 2
    hidden_layers: int = 4
    hidden_width: int = 50
    output_dim: int = 1

    def __post_init__(self):
        if min(self.input_dim, self.hidden_layers, self.hidden_width, self.output_dim) < 1:
            raise ValueError(f"Architecture sizes must be positive: {self}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    @property
    def num_parameters(self) -> int:
        sizes = self.layer_sizes
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes[:-1], sizes[1:]))


def unflatten(arch: Architecture, theta: ParameterVector) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Splits the flat vector into (weight, bias) views, one pair per layer."""
    if theta.ndim != 1 or theta.numel() != arch.num_parameters:
        raise UsageError(
            f"Parameter vector of length {theta.numel()} does not match architecture "
            f"with {arch.num_parameters} parameters"
        )
    layers = []
    offset = 0
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weight = theta[offset:offset + fan_in * fan_out].view(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = theta[offset:offset + fan_out]
        offset += fan_out
        layers.append((weight, bias))
    return layers


def flatten(layers: list[tuple[torch.Tensor, torch.Tensor]]) -> ParameterVector:
    return torch.cat([torch.cat([w.reshape(-1), b.reshape(-1)]) for w, b in layers])


def init_parameters(arch: Architecture, seed: int) -> ParameterVector:
    """Glorot-uniform weights, zero biases; deterministic per seed."""
    generator = torch.Generator().manual_seed(int(seed))
    layers = []
    sizes = arch.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weight = (torch.rand(fan_in, fan_out, generator=generator, dtype=DTYPE) * 2.0 - 1.0) * bound
        layers.append((weight, torch.zeros(fan_out, dtype=DTYPE)))
    return flatten(layers)


def _inputs(x, t) -> torch.Tensor:
    x, t = torch.broadcast_tensors(as_tensor(x), as_tensor(t))
    return torch.stack([x, t], dim=-1)


def forward(arch: Architecture, theta: ParameterVector, x, t) -> torch.Tensor:
    """u_theta at the given points; x and t broadcast, the result has their shape."""
    a = _inputs(x, t)
    layers = unflatten(arch, theta)
    for weight, bias in layers[:-1]:
        a = torch.tanh(a @ weight + bias)
    weight, bias = layers[-1]
    return (a @ weight + bias)[..., 0]


def forward_jet(arch: Architecture, theta: ParameterVector, x, t) -> Jet2:
    """u_theta with exact input derivatives (u, u_x, u_t, u_xx) at the given points.

    The value component is computed with exactly the operations `forward` uses.
    """
    if arch.input_dim != 2:
        raise UsageError("forward_jet needs a network over (x, t)")
    val = _inputs(x, t)
    # d/dx and d/dt of the raw input pair, broadcast against the batch
    seed_dx = torch.tensor([1.0, 0.0], dtype=DTYPE)
    seed_dt = torch.tensor([0.0, 1.0], dtype=DTYPE)
    a = Jet2(val, seed_dx, seed_dt, torch.zeros(2, dtype=DTYPE))

    layers = unflatten(arch, theta)
    for weight, bias in layers[:-1]:
        a = affine(a, weight, bias).tanh()
    weight, bias = layers[-1]
    out = affine(a, weight, bias)
    shape = val.shape[:-1]
    return Jet2(*(component[..., 0].expand(shape) for component in (out.val, out.dx, out.dt, out.dxx)))


def ensemble_predictions(arch: Architecture, samples, x, t) -> np.ndarray:
    """Predictions of every parameter vector, shape (n_samples, n_points)."""
    with torch.no_grad():
        rows = [forward(arch, theta, x, t).reshape(-1) for theta in samples]
    return torch.stack(rows).numpy()


def save_checkpoint(path: str | Path, arch: Architecture, theta: ParameterVector) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = (
        f"{CHECKPOINT_MAGIC} input_dim={arch.input_dim} hidden_layers={arch.hidden_layers} "
        f"hidden_width={arch.hidden_width} output_dim={arch.output_dim} "
        f"count={arch.num_parameters} dtype=<f8\n"
    )
    payload = theta.detach().numpy().astype("<f8").tobytes()
    path.write_bytes(header.encode("ascii") + payload)
    logging.info(f"Saved checkpoint with {arch.num_parameters} parameters to {path}")
    return path


def load_checkpoint(path: str | Path) -> tuple[Architecture, ParameterVector]:
    raw = Path(path).read_bytes()
    newline = raw.index(b"\n")
    fields = raw[:newline].decode("ascii").split()
    if not fields or fields[0] != CHECKPOINT_MAGIC:
        raise UsageError(f"{path} is not a checkpoint file")
    meta = dict(field.split("=", 1) for field in fields[1:])
    arch = Architecture(
        input_dim=int(meta["input_dim"]),
        hidden_layers=int(meta["hidden_layers"]),
        hidden_width=int(meta["hidden_width"]),
        output_dim=int(meta["output_dim"]),
    )
    values = np.frombuffer(raw[newline + 1:], dtype="<f8")
    if values.size != int(meta["count"]) or values.size != arch.num_parameters:
        raise UsageError(f"{path}: expected {arch.num_parameters} parameters, found {values.size}")
    return arch, torch.from_numpy(values.astype(np.float64))
