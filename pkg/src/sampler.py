"""
Hamiltonian Monte Carlo with leapfrog integration, identity mass matrix and
dual-averaging step-size adaptation during burn-in.

The sampler only needs a log-density oracle `target(theta) -> (log p, grad log p)`.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import pandas as pd
import torch
from tqdm import tqdm

from src.exceptions import SamplerError, UsageError
from src.utils import SEED_STREAM_CHAINS, derive_seed, write_csv

LogDensity = Callable[[torch.Tensor], tuple[float, torch.Tensor]]


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 100
    n_burnin: int = 100
    n_leapfrog: int = 128
    n_chains: int = 2
    target_accept: float = 0.6
    initial_stepsize: float = 1e-3
    seed: int = 0
    parallel_chains: bool = False

    def __post_init__(self):
        if min(self.n_samples, self.n_burnin, self.n_leapfrog, self.n_chains) < 1:
            raise ValueError(f"Sampler counts must be >= 1: {self}")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError(f"target_accept must lie in (0, 1), got {self.target_accept}")
        if not self.initial_stepsize > 0:
            raise ValueError("initial_stepsize must be positive")


def leapfrog(theta: torch.Tensor, momentum: torch.Tensor, stepsize: float, n_steps: int,
             grad: Callable[[torch.Tensor], torch.Tensor],
             initial_gradient: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """n_steps leapfrog steps for H = -log p(theta) + |r|^2 / 2.

    `grad` returns the gradient of log p. Integration stops early once the state
    turns non-finite; the caller rejects such proposals.
    """
    if n_steps < 1 or not stepsize > 0:
        raise UsageError("leapfrog needs n_steps >= 1 and a positive step size")
    g = grad(theta) if initial_gradient is None else initial_gradient
    r = momentum + 0.5 * stepsize * g
    for step in range(n_steps):
        theta = theta + stepsize * r
        g = grad(theta)
        if not (bool(torch.isfinite(theta).all()) and bool(torch.isfinite(g).all())):
            return theta, r
        r = r + (stepsize if step < n_steps - 1 else 0.5 * stepsize) * g
    return theta, r


class DualAveraging:
    """Step-size controller driving the mean acceptance statistic to a target.

    Uses the primal-dual averaging scheme with the usual constants
    gamma = 0.05, t0 = 10, kappa = 0.75 and shrinkage point mu = log(eps0).
    """

    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, initial_stepsize: float, target_accept: float):
        self.target_accept = target_accept
        self.mu = math.log(initial_stepsize)
        self.stepsize = initial_stepsize
        self._error_avg = 0.0
        self._log_avg_stepsize = 0.0
        self._m = 0

    def update(self, accept_stat: float) -> float:
        self._m += 1
        m = self._m
        weight = 1.0 / (m + self.t0)
        self._error_avg = (1.0 - weight) * self._error_avg + weight * (self.target_accept - accept_stat)
        log_stepsize = self.mu - math.sqrt(m) / self.gamma * self._error_avg
        eta = m ** (-self.kappa)
        self._log_avg_stepsize = eta * log_stepsize + (1.0 - eta) * self._log_avg_stepsize
        self.stepsize = math.exp(log_stepsize)
        return self.stepsize

    @property
    def final_stepsize(self) -> float:
        """Averaged step size used once adaptation stops."""
        return math.exp(self._log_avg_stepsize) if self._m else self.stepsize


def adapt_stepsize(accept_history: Sequence[float], target_accept: float, initial_stepsize: float = 1e-3) -> float:
    """Step size after feeding a burn-in history of acceptance statistics to the controller."""
    controller = DualAveraging(initial_stepsize, target_accept)
    for accept_stat in accept_history:
        controller.update(accept_stat)
    return controller.stepsize


@dataclass
class ChainResult:
    samples: torch.Tensor  # (n_samples, dim), burn-in excluded
    acceptance_rate: float
    final_stepsize: float
    last_sample: torch.Tensor
    burnin_acceptance_rate: float = 0.0
    trace: list[dict] = field(default_factory=list)


class _CachedTarget:
    """Gradient oracle for leapfrog that remembers the last log density and gradient."""

    def __init__(self, target: LogDensity):
        self.target = target
        self.log_prob = float("nan")
        self.gradient: torch.Tensor | None = None

    def __call__(self, theta: torch.Tensor) -> torch.Tensor:
        self.log_prob, self.gradient = self.target(theta)
        return self.gradient


def hmc_chain(target: LogDensity, theta_init: torch.Tensor, config: SamplerConfig, chain_seed: int,
              chain_index: int = 0, show_progress: bool = False) -> ChainResult:
    """Burn-in with adaptation, then n_samples transitions at the frozen averaged step size."""
    generator = torch.Generator().manual_seed(int(chain_seed))
    theta = theta_init.detach().clone().to(torch.float64)
    if not bool(torch.isfinite(theta).all()):
        raise UsageError("Initial parameters must be finite")
    log_prob, gradient = target(theta)
    if not math.isfinite(log_prob):
        raise SamplerError(f"Log posterior is {log_prob} at the initial parameters", chain=chain_index)
    controller = DualAveraging(config.initial_stepsize, config.target_accept)
    stepsize = config.initial_stepsize
    oracle = _CachedTarget(target)

    samples = []
    trace = []
    accepted = {"burnin": 0, "sampling": 0}
    total = config.n_burnin + config.n_samples
    for transition in tqdm(range(total), desc=f"chain {chain_index}", disable=not show_progress, leave=False):
        phase = "burnin" if transition < config.n_burnin else "sampling"
        if transition == config.n_burnin:
            if accepted["burnin"] == 0:
                logging.error(f"Chain {chain_index}: no proposal accepted in {config.n_burnin} burn-in transitions")
                raise SamplerError("Acceptance rate 0 over burn-in; step size pathology", chain=chain_index)
            stepsize = controller.final_stepsize
            logging.info(f"Chain {chain_index}: burn-in done, step size frozen at {stepsize:.3e}")

        momentum = torch.randn(theta.shape, generator=generator, dtype=torch.float64)
        proposal, proposal_momentum = leapfrog(theta, momentum, stepsize, config.n_leapfrog, oracle, gradient)
        current_h = -log_prob + 0.5 * float(momentum @ momentum)
        proposal_h = -oracle.log_prob + 0.5 * float(proposal_momentum @ proposal_momentum)
        delta_h = proposal_h - current_h
        finite = math.isfinite(delta_h) and bool(torch.isfinite(proposal).all()) and bool(torch.isfinite(oracle.gradient).all())
        # divergent trajectories count as rejections
        accept_prob = math.exp(min(0.0, -delta_h)) if finite else 0.0
        uniform = float(torch.rand((), generator=generator, dtype=torch.float64))
        if uniform < accept_prob:
            theta, log_prob, gradient = proposal, oracle.log_prob, oracle.gradient
            accepted[phase] += 1

        if phase == "burnin":
            stepsize = controller.update(accept_prob)
        else:
            samples.append(theta)
        trace.append({
            "chain": chain_index, "transition": transition, "phase": phase,
            "log_posterior": log_prob, "accept_prob": accept_prob, "stepsize": stepsize,
        })

    acceptance_rate = accepted["sampling"] / config.n_samples
    logging.info(f"Chain {chain_index}: acceptance {acceptance_rate:.2f} at step size {stepsize:.3e}")
    return ChainResult(
        samples=torch.stack(samples),
        acceptance_rate=acceptance_rate,
        final_stepsize=stepsize,
        last_sample=theta,
        burnin_acceptance_rate=accepted["burnin"] / config.n_burnin,
        trace=trace,
    )


@dataclass
class PosteriorSamples:
    samples: torch.Tensor  # (n_chains * n_samples, dim), chain-major
    last_sample: torch.Tensor
    chains: list[ChainResult]

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance_rate(self) -> float:
        return sum(chain.acceptance_rate for chain in self.chains) / len(self.chains)

    def trace_frame(self, iteration: int | None = None) -> pd.DataFrame:
        frame = pd.DataFrame([row for chain in self.chains for row in chain.trace])
        if iteration is not None:
            frame.insert(0, "iteration", iteration)
        return frame


def sample_posterior(target: LogDensity, theta_init: torch.Tensor, config: SamplerConfig,
                     iteration: int = 0, show_progress: bool = False) -> PosteriorSamples:
    """Run n_chains independent chains from theta_init and pool their post-burn-in samples.

    Chain c at pseudo-label iteration i draws from its own seed stream, so results do
    not depend on whether chains run serially or on a thread pool.
    """
    seeds = [derive_seed(config.seed, SEED_STREAM_CHAINS, iteration, chain) for chain in range(config.n_chains)]

    def run(chain: int) -> ChainResult:
        try:
            return hmc_chain(target, theta_init, config, seeds[chain], chain, show_progress)
        except SamplerError as error:
            raise error.at_iteration(iteration) from error

    if config.parallel_chains and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=config.n_chains) as pool:
            chains = list(pool.map(run, range(config.n_chains)))
    else:
        chains = [run(chain) for chain in range(config.n_chains)]

    samples = torch.cat([chain.samples for chain in chains])
    return PosteriorSamples(samples=samples, last_sample=chains[-1].last_sample, chains=chains)


def export_trace(traces: Sequence[pd.DataFrame], path: str | Path) -> Path:
    """Concatenate per-iteration sampler traces into one CSV."""
    frame = pd.concat(list(traces), ignore_index=True) if traces else pd.DataFrame(
        columns=["iteration", "chain", "transition", "phase", "log_posterior", "accept_prob", "stepsize"])
    return write_csv(frame, path)
