"""
Accuracy metrics and field exports for trained models.

The ensemble mean over posterior samples (or ensemble members) is the
prediction; accuracy is the relative L2 error against the reference solution
at uniformly random points. Field exports put prediction, reference, absolute
error and ensemble variance on a regular lattice for external plotting.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from src.exceptions import DomainError, UsageError
from src.network import Architecture, ParameterVector, ensemble_predictions
from src.systems import Domain, SystemSpec, initial_condition, reference_solution
from src.utils import SEED_STREAM_EVAL, derive_seed, write_csv

DEFAULT_EVAL_POINTS = 10000
DEFAULT_GRID = (256, 100)

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


def random_eval_points(domain: Domain, n: int = DEFAULT_EVAL_POINTS, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise UsageError(f"Need at least one evaluation point, got {n}")
    rng = np.random.default_rng(derive_seed(seed, SEED_STREAM_EVAL))
    x = rng.uniform(domain.x_min, domain.x_max, size=n)
    t = rng.uniform(domain.t_min, domain.t_max, size=n)
    return x, t


def predict_mean(arch: Architecture, samples: Sequence[ParameterVector], x, t) -> np.ndarray:
    """Pointwise mean of the sample predictions."""
    if len(samples) == 0:
        raise UsageError("Prediction needs at least one sample")
    return ensemble_predictions(arch, samples, x, t).mean(axis=0)


def relative_l2(pred, ref) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    ref = np.asarray(ref, dtype=np.float64).reshape(-1)
    if pred.shape != ref.shape:
        raise UsageError(f"Prediction has {pred.size} values, reference has {ref.size}")
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise DomainError("Relative L2 error is undefined for an all-zero reference")
    return float(np.linalg.norm(pred - ref) / norm)


def make_evaluator(system: SystemSpec, arch: Architecture, n_points: int = DEFAULT_EVAL_POINTS,
                   seed: int = 0) -> Callable[[Sequence[ParameterVector]], float]:
    """Relative L2 of the ensemble mean on a fixed random point set."""
    x, t = random_eval_points(system.domain, n_points, seed)
    reference = reference_solution(system, x, t)

    def evaluate(samples: Sequence[ParameterVector]) -> float:
        return relative_l2(predict_mean(arch, samples, x, t), reference)

    return evaluate


@dataclass(frozen=True)
class EvalGrid:
    """Fields on an nx by nt lattice, flattened with t as the slow axis."""

    nx: int
    nt: int
    x: np.ndarray
    t: np.ndarray
    prediction: np.ndarray
    reference: np.ndarray
    abs_error: np.ndarray
    variance: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x": self.x,
            "t": self.t,
            "prediction": self.prediction,
            "reference": self.reference,
            "abs_error": self.abs_error,
            "variance": self.variance,
        })

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(self.to_frame(), path)

    @property
    def relative_l2(self) -> float:
        return relative_l2(self.prediction, self.reference)


def build_eval_grid(system: SystemSpec, predict: Predictor, nx: int = DEFAULT_GRID[0],
                    nt: int = DEFAULT_GRID[1]) -> EvalGrid:
    """Evaluates `predict(x, t) -> (n_samples, n_points)` on the lattice."""
    if nx < 1 or nt < 2:
        raise UsageError(f"Lattice needs nx >= 1 and nt >= 2, got {nx}x{nt}")
    domain = system.domain
    x_axis = domain.x_min + (domain.x_max - domain.x_min) * np.arange(nx) / nx
    t_axis = np.linspace(domain.t_min, domain.t_max, nt)
    tt, xx = np.meshgrid(t_axis, x_axis, indexing="ij")
    x, t = xx.ravel(), tt.ravel()
    predictions = np.atleast_2d(predict(x, t))
    prediction = predictions.mean(axis=0)
    reference = reference_solution(system, x, t)
    return EvalGrid(
        nx=nx, nt=nt, x=x, t=t,
        prediction=prediction,
        reference=reference,
        abs_error=np.abs(prediction - reference),
        variance=predictions.var(axis=0),
    )


def export_fields(arch: Architecture, samples: Sequence[ParameterVector], system: SystemSpec,
                  path: str | Path | None = None, nx: int = DEFAULT_GRID[0], nt: int = DEFAULT_GRID[1]) -> EvalGrid:
    grid = build_eval_grid(system, lambda x, t: ensemble_predictions(arch, samples, x, t), nx, nt)
    if path is not None:
        grid.to_csv(path)
    return grid


def initial_condition_mse(arch: Architecture, samples: Sequence[ParameterVector], system: SystemSpec,
                          n: int = 256) -> float:
    """Mean squared error of the ensemble mean against the initial condition on an even x grid."""
    domain = system.domain
    x = domain.x_min + (domain.x_max - domain.x_min) * np.arange(n) / n
    t = np.full(n, domain.t_min)
    return float(np.mean((predict_mean(arch, samples, x, t) - initial_condition(system, x)) ** 2))


def variance_error_correlation(grid: EvalGrid) -> float:
    """Spearman rank correlation between ensemble variance and absolute error; NaN when undefined."""
    if np.ptp(grid.variance) == 0.0 or np.ptp(grid.abs_error) == 0.0:
        return math.nan
    return float(spearmanr(grid.variance, grid.abs_error)[0])


def low_variance_fraction(grid: EvalGrid, threshold: float) -> float:
    return float(np.mean(grid.variance < threshold))


def write_summary(summary: dict, path: str | Path) -> Path:
    """Writes the run summary as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clean = {key: (None if isinstance(value, float) and not math.isfinite(value) else value)
             for key, value in summary.items()}
    path.write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    logging.info(f"Wrote run summary to {path}")
    return path


def read_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
