"""
Unnormalized log posterior over the network parameters.

    log P(theta | D) = log N(theta; 0, sigma_p^2 I)
                     + sum_ic  log N(u_theta - u; 0, sigma_ic^2)
                     + sum_pl  log N(u_theta - u; 0, sigma_pl^2)
                     + sum_bc  log N(G_bc[u_theta]; 0, sigma_bc^2)
                     + sum_pde log N(f_theta; 0, sigma_pde^2)

Sums run over points (not means) and include the Gaussian normalization
constants. Boundary points with both periodic conditions contribute one term
per residual.
"""

import math
from dataclasses import dataclass
from enum import Enum

import torch

from src.autodiff import Tape, reverse_gradient, value_and_grad
from src.data_loader import TrainingData
from src.network import Architecture, ParameterVector, forward, forward_jet
from src.systems import SystemSpec, boundary_residuals, residual


@dataclass(frozen=True)
class PosteriorSpec:
    sigma_p: float = 5.0
    sigma_ic: float = 1e-3
    sigma_pl: float = 5e-3
    sigma_bc: float = 1e-3
    sigma_pde: float = 1e-2

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")


class Functional(str, Enum):
    RESIDUAL = "residual"
    BOUNDARY = "boundary"


def _gaussian_log_density(errors: torch.Tensor, sigma: float) -> torch.Tensor:
    if errors.numel() == 0:
        return errors.new_zeros(())
    variance = sigma * sigma
    return -0.5 * errors.numel() * math.log(2.0 * math.pi * variance) - torch.sum(errors * errors) / (2.0 * variance)


def log_prior(theta: ParameterVector, sigma_p: float) -> torch.Tensor:
    return _gaussian_log_density(theta, sigma_p)


def log_likelihood_labeled(arch: Architecture, theta: ParameterVector, x, t, u, sigma: float) -> torch.Tensor:
    if torch.as_tensor(x).numel() == 0:
        return theta.new_zeros(())
    return _gaussian_log_density(forward(arch, theta, x, t) - u, sigma)


def unlabeled_residuals(spec: SystemSpec, arch: Architecture, theta: ParameterVector, x, t,
                        functional: Functional | str) -> torch.Tensor:
    """G-residuals: the PDE residual at collocation points or the boundary residuals at times t."""
    if Functional(functional) is Functional.RESIDUAL:
        return residual(spec, forward_jet(arch, theta, x, t))
    return torch.cat([r.reshape(-1) for r in boundary_residuals(spec, arch, theta, t)])


def log_likelihood_unlabeled(spec: SystemSpec, arch: Architecture, theta: ParameterVector, x, t,
                             sigma: float, functional: Functional | str) -> torch.Tensor:
    if torch.as_tensor(t).numel() == 0:
        return theta.new_zeros(())
    return _gaussian_log_density(unlabeled_residuals(spec, arch, theta, x, t, functional), sigma)


def log_posterior_terms(system: SystemSpec, arch: Architecture, theta: ParameterVector,
                        data: TrainingData, spec: PosteriorSpec) -> dict[str, torch.Tensor]:
    return {
        "prior": log_prior(theta, spec.sigma_p),
        "ic": log_likelihood_labeled(arch, theta, data.ic_x, data.ic_t, data.ic_u, spec.sigma_ic),
        "pl": log_likelihood_labeled(arch, theta, data.pl_x, data.pl_t, data.pl_u, spec.sigma_pl),
        "bc": log_likelihood_unlabeled(system, arch, theta, None, data.bc_t, spec.sigma_bc, Functional.BOUNDARY),
        "pde": log_likelihood_unlabeled(system, arch, theta, data.pde_x, data.pde_t, spec.sigma_pde, Functional.RESIDUAL),
    }


def log_posterior(system: SystemSpec, arch: Architecture, theta: ParameterVector,
                  data: TrainingData, spec: PosteriorSpec) -> torch.Tensor:
    """Sum of prior and likelihood terms. No-PL training passes data without pseudo-labels."""
    terms = log_posterior_terms(system, arch, theta, data, spec)
    return terms["prior"] + terms["ic"] + terms["pl"] + terms["bc"] + terms["pde"]


def grad_log_posterior(system: SystemSpec, arch: Architecture, theta: ParameterVector,
                       data: TrainingData, spec: PosteriorSpec) -> torch.Tensor:
    tape = Tape(theta)
    return reverse_gradient(tape, log_posterior(system, arch, tape.params, data, spec))


@dataclass(frozen=True)
class PosteriorTarget:
    """Log-density oracle handed to the sampler: theta -> (log posterior, gradient)."""

    system: SystemSpec
    arch: Architecture
    data: TrainingData
    spec: PosteriorSpec

    def __call__(self, theta: ParameterVector) -> tuple[float, torch.Tensor]:
        return value_and_grad(lambda params: log_posterior(self.system, self.arch, params, self.data, self.spec), theta)

    @property
    def dim(self) -> int:
        return self.arch.num_parameters
