"""
Pseudo-label training loop.

Each iteration activates the boundary and collocation points near labeled data,
samples the posterior restricted to them, and turns confidently predicted
collocation points into pseudo-labels. The training domain grows outward from
the initial condition until the iteration budget is spent.

The same gating drives the ensemble baseline, with an Adam-trained ensemble in
place of posterior samples.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from src.data_loader import DataBundle, DatasetSizes, PointSet, build_bundle, nearest_labeled_indices
from src.exceptions import UsageError
from src.network import Architecture, ParameterVector, ensemble_predictions, init_parameters, save_checkpoint
from src.optimizer import AdamConfig, LossCurve, LossWeights, pretrain, train_adam
from src.posterior import PosteriorSpec, PosteriorTarget
from src.sampler import SamplerConfig, sample_posterior
from src.systems import SystemKind, SystemSpec
from src.utils import (
    SEED_STREAM_DATA,
    SEED_STREAM_ENSEMBLE,
    SEED_STREAM_INIT,
    PhaseTimer,
    derive_seed,
    write_csv,
)

Evaluator = Callable[[Sequence[ParameterVector]], float]

DEFAULT_PRETRAIN_EPOCHS = 4000
LONG_PRETRAIN_EPOCHS = 40000
DEFAULT_ENSEMBLE_SIZE = 5
DEFAULT_ENSEMBLE_EPOCHS = 5000


class Mode(str, Enum):
    PL = "pl"
    NO_PL = "no-pl"


def default_iterations(system: SystemSpec) -> int:
    """Outer-iteration budget per benchmark system."""
    if system.kind is SystemKind.DIFFUSION:
        return 80 if system.d <= 5 else 100
    if system.kind is SystemKind.CONVECTION:
        return 100 if system.beta <= 30 else 150
    return 60


def default_pretrain_epochs(system: SystemSpec) -> int:
    # high-frequency diffusion initial conditions need a much longer fit
    if system.kind is SystemKind.DIFFUSION and system.d >= 10:
        return LONG_PRETRAIN_EPOCHS
    return DEFAULT_PRETRAIN_EPOCHS


@dataclass(frozen=True)
class PseudoLabelConfig:
    delta: float = 0.05
    delta_pde: float = 0.1
    anchor_tol: float = 1e-3
    consensus_var: float = 2e-4
    mode: Mode = Mode.PL
    iterations: int = 60
    early_stop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("delta", "delta_pde", "anchor_tol", "consensus_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.delta > self.delta_pde:
            raise ValueError(f"delta ({self.delta}) must not exceed delta_pde ({self.delta_pde})")
        if self.iterations < 0:
            raise ValueError(f"iterations must be nonnegative, got {self.iterations}")

    @property
    def include_pl(self) -> bool:
        return self.mode is Mode.PL


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    median: np.ndarray
    variance: np.ndarray  # population variance

    def __len__(self) -> int:
        return self.mean.size

    @classmethod
    def empty(cls) -> "EnsembleStats":
        return cls(np.empty(0), np.empty(0), np.empty(0))

    @classmethod
    def from_predictions(cls, predictions: np.ndarray) -> "EnsembleStats":
        """Statistics over axis 0 of an (n_samples, n_points) prediction matrix."""
        predictions = np.atleast_2d(np.asarray(predictions, dtype=np.float64))
        if predictions.shape[0] == 0:
            raise UsageError("Ensemble statistics need at least one sample")
        return cls(
            mean=predictions.mean(axis=0),
            median=np.median(predictions, axis=0),
            variance=predictions.var(axis=0),
        )


def ensemble_stats(arch: Architecture, samples: Sequence[ParameterVector], x, t) -> EnsembleStats:
    if len(samples) == 0:
        raise UsageError("Ensemble statistics need at least one sample")
    return EnsembleStats.from_predictions(ensemble_predictions(arch, samples, x, t))


def passes_gate(distance: float, anchor_error: float, variance: float, cfg: PseudoLabelConfig) -> bool:
    """All three conditions are strict: the anchor is close, reliable, and the ensemble agrees."""
    return bool(distance < cfg.delta and anchor_error < cfg.anchor_tol and variance < cfg.consensus_var)


@dataclass(frozen=True)
class GateResult:
    accepted: np.ndarray
    values: np.ndarray  # ensemble median at each candidate
    distance: np.ndarray
    anchor_error: np.ndarray
    variance: np.ndarray

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())


def gate(candidates: PointSet, labeled: PointSet, candidate_stats: EnsembleStats, labeled_mean: np.ndarray,
         cfg: PseudoLabelConfig, domain) -> GateResult:
    """Vectorized gate over candidates against a fixed labeled snapshot.

    `labeled_mean` is the ensemble mean at each labeled point; the anchor of a
    candidate is its nearest labeled point in normalized coordinates.
    """
    if len(candidates) == 0:
        empty = np.empty(0)
        return GateResult(np.zeros(0, dtype=bool), empty, empty, empty, empty)
    anchor, distance = nearest_labeled_indices(candidates.coords(), labeled, domain)
    anchor_error = np.abs(labeled.u[anchor] - np.asarray(labeled_mean)[anchor])
    variance = candidate_stats.variance
    accepted = (distance < cfg.delta) & (anchor_error < cfg.anchor_tol) & (variance < cfg.consensus_var)
    return GateResult(accepted, candidate_stats.median, distance, anchor_error, variance)


def pseudo_label_pass(bundle: DataBundle, pde_mask: np.ndarray, cfg: PseudoLabelConfig,
                      predict: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> tuple[DataBundle, GateResult]:
    """Gates every active, not yet labeled collocation point and appends the accepted ones.

    `predict(x, t)` returns the (n_samples, n_points) ensemble prediction matrix.
    """
    labeled = bundle.labeled()
    candidate_index = np.flatnonzero(pde_mask & ~bundle.pseudo_labeled_mask())
    candidates = bundle.pde.take(candidate_index)
    if len(candidates) == 0:
        return bundle, gate(candidates, labeled, EnsembleStats.empty(), np.empty(0), cfg, bundle.domain)
    candidate_stats = EnsembleStats.from_predictions(predict(candidates.x, candidates.t))
    labeled_mean = EnsembleStats.from_predictions(predict(labeled.x, labeled.t)).mean
    result = gate(candidates, labeled, candidate_stats, labeled_mean, cfg, bundle.domain)
    if result.n_accepted:
        bundle = bundle.with_pseudo_labels(candidate_index[result.accepted], result.values[result.accepted])
    return bundle, result


@dataclass
class TrainHistory:
    rows: list[dict] = field(default_factory=list)

    COLUMNS = ("iteration", "n_pl", "n_new", "n_active_pde", "n_active_bc",
               "acceptance_rate", "stepsize", "relative_l2")

    def record(self, **row):
        self.rows.append({column: row.get(column, math.nan) for column in self.COLUMNS})

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_pl(self) -> list[int]:
        return [row["n_pl"] for row in self.rows]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(self.COLUMNS))

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(self.to_frame(), path)


@dataclass
class TrainingState:
    bundle: DataBundle
    theta_init: ParameterVector
    samples: torch.Tensor | None = None
    iteration: int = 0


@dataclass
class TrainResult:
    samples: torch.Tensor  # (n_samples, P)
    bundle: DataBundle
    history: TrainHistory
    timer: PhaseTimer
    traces: list[pd.DataFrame] = field(default_factory=list)
    loss_curve: LossCurve | None = None
    iterations_run: int = 0


def train_iteration(state: TrainingState, system: SystemSpec, arch: Architecture, posterior: PosteriorSpec,
                    sampler: SamplerConfig, cfg: PseudoLabelConfig, history: TrainHistory | None = None,
                    timer: PhaseTimer | None = None, evaluator: Evaluator | None = None,
                    traces: list[pd.DataFrame] | None = None, show_progress: bool = False) -> TrainingState:
    """One expansion step: activate, sample, gate, warm-start."""
    timer = timer or PhaseTimer()
    bundle = state.bundle
    bc_mask, pde_mask = bundle.active_masks(cfg.delta_pde)
    data = bundle.training_data(bc_mask, pde_mask, include_pl=cfg.include_pl)
    target = PosteriorTarget(system, arch, data, posterior)

    with timer.phase("sampling"):
        posterior_samples = sample_posterior(target, state.theta_init, sampler, state.iteration, show_progress)
    if traces is not None:
        traces.append(posterior_samples.trace_frame(state.iteration))

    samples = posterior_samples.samples
    with timer.phase("gating"):
        new_bundle, result = pseudo_label_pass(
            bundle, pde_mask, cfg, lambda x, t: ensemble_predictions(arch, samples, x, t)
        )

    relative_l2 = math.nan
    if evaluator is not None:
        with timer.phase("eval"):
            relative_l2 = evaluator(samples)
    stepsize = float(np.mean([chain.final_stepsize for chain in posterior_samples.chains]))
    logging.info(
        f"Iteration {state.iteration}: active pde={int(pde_mask.sum())}, bc={int(bc_mask.sum())}, "
        f"acceptance={posterior_samples.acceptance_rate:.2f}, new labels={result.n_accepted}, "
        f"total labels={len(new_bundle.pl_index)}"
    )
    if history is not None:
        history.record(
            iteration=state.iteration, n_pl=len(new_bundle.pl_index), n_new=result.n_accepted,
            n_active_pde=int(pde_mask.sum()), n_active_bc=int(bc_mask.sum()),
            acceptance_rate=posterior_samples.acceptance_rate, stepsize=stepsize, relative_l2=relative_l2,
        )
    return TrainingState(
        bundle=new_bundle,
        theta_init=posterior_samples.last_sample,
        samples=samples,
        iteration=state.iteration + 1,
    )


def _fully_labeled(bundle: DataBundle) -> bool:
    return len(bundle.pl_index) == len(bundle.pde)


def train(system: SystemSpec, seed: int, arch: Architecture = Architecture(), sizes: DatasetSizes = DatasetSizes(),
          posterior: PosteriorSpec = PosteriorSpec(), sampler: SamplerConfig = SamplerConfig(),
          pseudo_label: PseudoLabelConfig = PseudoLabelConfig(), adam: AdamConfig = AdamConfig(),
          pretrain_epochs: int = DEFAULT_PRETRAIN_EPOCHS, evaluator: Evaluator | None = None,
          checkpoint_dir: str | Path | None = None, show_progress: bool = False) -> TrainResult:
    """Bayesian pseudo-label training from scratch.

    Builds the data from the master seed, pretrains theta_init with Adam, then runs
    the iteration budget (stopping early once every collocation point is labeled,
    if enabled). With a zero budget the pretrained parameters are the only sample.
    """
    timer = PhaseTimer()
    bundle = build_bundle(system, derive_seed(seed, SEED_STREAM_DATA), sizes)
    curve = LossCurve()
    # pretraining only sees the region activated by the initial condition
    bc_mask, pde_mask = bundle.active_masks(pseudo_label.delta_pde)
    with timer.phase("pretrain"):
        theta = pretrain(system, arch, bundle.training_data(bc_mask, pde_mask), pretrain_epochs,
                         derive_seed(seed, SEED_STREAM_INIT), adam, curve, show_progress)

    sampler = replace(sampler, seed=seed)
    state = TrainingState(bundle=bundle, theta_init=theta)
    history = TrainHistory()
    traces: list[pd.DataFrame] = []
    for _ in tqdm(range(pseudo_label.iterations), desc="pseudo-label", disable=not show_progress):
        state = train_iteration(state, system, arch, posterior, sampler, pseudo_label, history,
                                timer, evaluator, traces, show_progress)
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"iteration_{state.iteration - 1:03d}.bin", arch, state.theta_init)
        if pseudo_label.early_stop and _fully_labeled(state.bundle):
            logging.info(f"Every collocation point is labeled; stopping after {state.iteration} iterations")
            break

    samples = state.samples if state.samples is not None else state.theta_init.unsqueeze(0)
    return TrainResult(samples=samples, bundle=state.bundle, history=history, timer=timer,
                       traces=traces, loss_curve=curve, iterations_run=state.iteration)


def baseline_vanilla(system: SystemSpec, seed: int, epochs: int, arch: Architecture = Architecture(),
                     sizes: DatasetSizes = DatasetSizes(), adam: AdamConfig = AdamConfig(),
                     curve: LossCurve | None = None, show_progress: bool = False) -> ParameterVector:
    """A plain PINN: Adam with uniform weights over the whole domain, no pseudo-labels."""
    bundle = build_bundle(system, derive_seed(seed, SEED_STREAM_DATA), sizes)
    theta = init_parameters(arch, derive_seed(seed, SEED_STREAM_INIT))
    return train_adam(system, arch, theta, bundle.training_data(), LossWeights.uniform(), epochs, adam,
                      curve, desc="vanilla", show_progress=show_progress)


def baseline_ensemble_pl(system: SystemSpec, seed: int, n_members: int = DEFAULT_ENSEMBLE_SIZE,
                         arch: Architecture = Architecture(), sizes: DatasetSizes = DatasetSizes(),
                         pseudo_label: PseudoLabelConfig = PseudoLabelConfig(), adam: AdamConfig = AdamConfig(),
                         epochs_per_iteration: int = DEFAULT_ENSEMBLE_EPOCHS, evaluator: Evaluator | None = None,
                         member_seeds: Sequence[int] | None = None, show_progress: bool = False) -> TrainResult:
    """Ensemble pseudo-labeling: independently initialized networks trained by Adam on the active region.

    Losses use weights scaled by the active fractions of D_bc and D_pde. Members are
    warm-started across iterations. In No-PL mode the pseudo-labels only anchor
    activation and gating and stay out of the data loss.
    """
    if n_members < 2:
        raise UsageError(f"Ensemble needs at least 2 members, got {n_members}")
    if member_seeds is None:
        member_seeds = [derive_seed(seed, SEED_STREAM_ENSEMBLE, member) for member in range(n_members)]
    if len(member_seeds) != n_members:
        raise UsageError("Need one seed per ensemble member")

    timer = PhaseTimer()
    bundle = build_bundle(system, derive_seed(seed, SEED_STREAM_DATA), sizes)
    members = [init_parameters(arch, member_seed) for member_seed in member_seeds]
    history = TrainHistory()
    for iteration in tqdm(range(pseudo_label.iterations), desc="ensemble", disable=not show_progress):
        bc_mask, pde_mask = bundle.active_masks(pseudo_label.delta_pde)
        data = bundle.training_data(bc_mask, pde_mask, include_pl=pseudo_label.include_pl)
        weights = LossWeights.ensemble(data)
        with timer.phase("training"):
            members = [
                train_adam(system, arch, theta, data, weights, epochs_per_iteration, adam,
                           desc=f"member {index}", show_progress=show_progress)
                for index, theta in enumerate(members)
            ]
        stacked = torch.stack(members)
        with timer.phase("gating"):
            bundle, result = pseudo_label_pass(
                bundle, pde_mask, pseudo_label, lambda x, t: ensemble_predictions(arch, stacked, x, t)
            )
        relative_l2 = math.nan
        if evaluator is not None:
            with timer.phase("eval"):
                relative_l2 = evaluator(stacked)
        logging.info(
            f"Ensemble iteration {iteration}: active pde={int(pde_mask.sum())}, "
            f"new labels={result.n_accepted}, total labels={len(bundle.pl_index)}"
        )
        history.record(
            iteration=iteration, n_pl=len(bundle.pl_index), n_new=result.n_accepted,
            n_active_pde=int(pde_mask.sum()), n_active_bc=int(bc_mask.sum()), relative_l2=relative_l2,
        )
        if pseudo_label.early_stop and _fully_labeled(bundle):
            break

    return TrainResult(samples=torch.stack(members), bundle=bundle, history=history, timer=timer,
                       iterations_run=len(history))
