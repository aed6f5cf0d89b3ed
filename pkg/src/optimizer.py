"""
Full-batch Adam on the weighted PINN loss

    L = w_ic * MSE(labeled) + w_bc * mean(bc residual^2) + w_pde * mean(pde residual^2)

used to pretrain the Bayesian network and to train the vanilla and ensemble
baselines. The labeled term covers D_ic plus, when included, D_pl.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
import torch
from tqdm import tqdm

from src.autodiff import Tape, reverse_gradient
from src.data_loader import TrainingData
from src.exceptions import DivergenceError, UsageError
from src.network import Architecture, ParameterVector, forward, init_parameters
from src.posterior import Functional, unlabeled_residuals
from src.systems import SystemSpec
from src.utils import write_csv


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")


@dataclass(frozen=True)
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0
    config: AdamConfig = AdamConfig()

    @classmethod
    def zeros(cls, n: int, config: AdamConfig = AdamConfig()) -> "AdamState":
        return cls(torch.zeros(n, dtype=torch.float64), torch.zeros(n, dtype=torch.float64), 0, config)


def adam_step(state: AdamState, theta: ParameterVector, gradient: torch.Tensor) -> tuple[AdamState, ParameterVector]:
    """One bias-corrected Adam update; returns the new state and parameters."""
    if gradient.shape != theta.shape:
        raise UsageError(f"Gradient shape {tuple(gradient.shape)} does not match parameters {tuple(theta.shape)}")
    if not bool(torch.isfinite(gradient).all()):
        raise DivergenceError("Non-finite gradient in Adam update", epoch=state.step + 1)
    cfg = state.config
    step = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * gradient
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * gradient * gradient
    m_hat = m / (1.0 - cfg.beta1**step)
    v_hat = v / (1.0 - cfg.beta2**step)
    theta = theta - cfg.learning_rate * m_hat / (torch.sqrt(v_hat) + cfg.eps)
    return AdamState(m, v, step, cfg), theta


@dataclass(frozen=True)
class LossWeights:
    ic: float = 1.0
    bc: float = 1.0
    pde: float = 1.0

    def __post_init__(self):
        if min(self.ic, self.bc, self.pde) < 0:
            raise ValueError("Loss weights must be nonnegative")

    @classmethod
    def uniform(cls) -> "LossWeights":
        return cls()

    @classmethod
    def ensemble(cls, data: TrainingData) -> "LossWeights":
        """w_bc and w_pde scaled by the active fraction of each set."""
        return cls(
            ic=1.0,
            bc=data.n_bc_active / data.n_bc_total if data.n_bc_total else 0.0,
            pde=data.n_pde_active / data.n_pde_total if data.n_pde_total else 0.0,
        )


def _mean_square(values: torch.Tensor) -> torch.Tensor:
    return values.new_zeros(()) if values.numel() == 0 else torch.mean(values * values)


def pinn_loss_terms(system: SystemSpec, arch: Architecture, theta: ParameterVector,
                    data: TrainingData) -> dict[str, torch.Tensor]:
    labeled_x = torch.cat([data.ic_x, data.pl_x])
    labeled_t = torch.cat([data.ic_t, data.pl_t])
    labeled_u = torch.cat([data.ic_u, data.pl_u])
    data_error = forward(arch, theta, labeled_x, labeled_t) - labeled_u
    bc = unlabeled_residuals(system, arch, theta, None, data.bc_t, Functional.BOUNDARY)
    pde = unlabeled_residuals(system, arch, theta, data.pde_x, data.pde_t, Functional.RESIDUAL)
    return {"ic": _mean_square(data_error), "bc": _mean_square(bc), "pde": _mean_square(pde)}


def pinn_loss(system: SystemSpec, arch: Architecture, theta: ParameterVector,
              data: TrainingData, weights: LossWeights = LossWeights()) -> torch.Tensor:
    terms = pinn_loss_terms(system, arch, theta, data)
    return weights.ic * terms["ic"] + weights.bc * terms["bc"] + weights.pde * terms["pde"]


@dataclass
class LossCurve:
    rows: list[dict] = field(default_factory=list)

    def record(self, epoch: int, total: float, terms: dict[str, torch.Tensor]):
        self.rows.append({"epoch": epoch, "total": total, **{name: float(value) for name, value in terms.items()}})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["epoch", "total", "ic", "bc", "pde"])

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(self.to_frame(), path)


def train_adam(system: SystemSpec, arch: Architecture, theta: ParameterVector, data: TrainingData,
               weights: LossWeights, epochs: int, config: AdamConfig = AdamConfig(),
               curve: LossCurve | None = None, desc: str = "adam", show_progress: bool = False) -> ParameterVector:
    """Full-batch Adam for `epochs` epochs starting from theta."""
    state = AdamState.zeros(theta.numel(), config)
    theta = theta.detach().clone()
    for epoch in tqdm(range(1, epochs + 1), desc=desc, disable=not show_progress, leave=False):
        tape = Tape(theta)
        terms = pinn_loss_terms(system, arch, tape.params, data)
        loss = weights.ic * terms["ic"] + weights.bc * terms["bc"] + weights.pde * terms["pde"]
        if not math.isfinite(float(loss)):
            logging.error(f"{desc}: loss became {float(loss)} at epoch {epoch}")
            raise DivergenceError("PINN loss diverged", epoch=epoch)
        gradient = reverse_gradient(tape, loss)
        if curve is not None:
            curve.record(epoch, float(loss), terms)
        state, theta = adam_step(state, theta, gradient)
    return theta


def pretrain(system: SystemSpec, arch: Architecture, data: TrainingData, epochs: int, seed: int,
             config: AdamConfig = AdamConfig(), curve: LossCurve | None = None,
             show_progress: bool = False) -> ParameterVector:
    """theta_init: Adam with uniform weights from a seeded Glorot initialization."""
    if epochs < 0:
        raise UsageError(f"epochs must be nonnegative, got {epochs}")
    theta = init_parameters(arch, seed)
    if epochs == 0:
        return theta
    theta = train_adam(system, arch, theta, data, LossWeights.uniform(), epochs, config, curve,
                       desc="pretrain", show_progress=show_progress)
    with torch.no_grad():
        terms = pinn_loss_terms(system, arch, theta, data)
    logging.info(
        f"Pretrained {epochs} epochs on {system.label}: ic={float(terms['ic']):.3e}, "
        f"bc={float(terms['bc']):.3e}, pde={float(terms['pde']):.3e}"
    )
    return theta
