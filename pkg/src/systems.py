"""
Benchmark PDE systems on x in [0, 2pi) (periodic), t in [0, 1].

    reaction            u_t = rho u (1 - u),             u(x,0) = exp(-8 (x - pi)^2 / pi^2)
    diffusion           u_t = (1 / d^2) u_xx,            u(x,0) = sin(d x)
    reaction-diffusion  u_t = d u_xx + rho u (1 - u),    u(x,0) = exp(-8 (x - pi)^2 / pi^2)
    convection          u_t = -beta u_x,                 u(x,0) = sin(x)

All systems impose periodic Dirichlet conditions u(0,t) = u(2pi,t); diffusion and
reaction-diffusion additionally impose periodic Neumann conditions on u_x.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from scipy import fft
from scipy.interpolate import RegularGridInterpolator

from src.autodiff import Jet2, as_tensor
from src.exceptions import UsageError
from src.network import Architecture, ParameterVector, forward, forward_jet
from src.utils import write_csv

DEFAULT_RD_GRID = (512, 2000)


class SystemKind(str, Enum):
    REACTION = "reaction"
    DIFFUSION = "diffusion"
    REACTION_DIFFUSION = "reaction-diffusion"
    CONVECTION = "convection"


class BoundaryKind(str, Enum):
    PERIODIC_DIRICHLET = "periodic-dirichlet"
    PERIODIC_NEUMANN = "periodic-neumann"


# Parameters each kind takes; the first one is the kind's primary parameter.
SYSTEM_PARAMETERS = {
    SystemKind.REACTION: ("rho",),
    SystemKind.DIFFUSION: ("d",),
    SystemKind.REACTION_DIFFUSION: ("d", "rho"),
    SystemKind.CONVECTION: ("beta",),
}


@dataclass(frozen=True)
class Domain:
    x_min: float = 0.0
    x_max: float = 2.0 * math.pi
    t_min: float = 0.0
    t_max: float = 1.0


@dataclass(frozen=True)
class SystemSpec:
    kind: SystemKind
    rho: float | None = None
    d: float | None = None
    beta: float | None = None
    domain: Domain = Domain()

    def __post_init__(self):
        object.__setattr__(self, "kind", SystemKind(self.kind))
        needed = SYSTEM_PARAMETERS[self.kind]
        for name in ("rho", "d", "beta"):
            value = getattr(self, name)
            if name in needed and value is None:
                raise ValueError(f"{self.kind.value} system requires parameter '{name}'")
            if name not in needed and value is not None:
                raise ValueError(f"{self.kind.value} system does not take parameter '{name}'")
            if value is not None and not math.isfinite(value):
                raise ValueError(f"Parameter '{name}' must be finite")

    @property
    def bc_kinds(self) -> frozenset[BoundaryKind]:
        if self.kind in (SystemKind.DIFFUSION, SystemKind.REACTION_DIFFUSION):
            return frozenset({BoundaryKind.PERIODIC_DIRICHLET, BoundaryKind.PERIODIC_NEUMANN})
        return frozenset({BoundaryKind.PERIODIC_DIRICHLET})

    @property
    def label(self) -> str:
        params = ", ".join(f"{name}={getattr(self, name):g}" for name in SYSTEM_PARAMETERS[self.kind])
        return f"{self.kind.value} ({params})"


def residual(spec: SystemSpec, derivs: Jet2 | tuple) -> torch.Tensor:
    """Physics residual f = u_t - N[u]; stays differentiable in the parameters."""
    u, u_t, u_x, u_xx = derivs.components() if isinstance(derivs, Jet2) else derivs
    if spec.kind is SystemKind.REACTION:
        return u_t - spec.rho * u * (1.0 - u)
    if spec.kind is SystemKind.DIFFUSION:
        return u_t - u_xx / spec.d**2
    if spec.kind is SystemKind.REACTION_DIFFUSION:
        return u_t - spec.d * u_xx - spec.rho * u * (1.0 - u)
    return u_t + spec.beta * u_x


def _gaussian_bump(x):
    return np.exp(-8.0 * (x - np.pi) ** 2 / np.pi**2)


def initial_condition(spec: SystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if spec.kind in (SystemKind.REACTION, SystemKind.REACTION_DIFFUSION):
        return _gaussian_bump(x)
    if spec.kind is SystemKind.DIFFUSION:
        return np.sin(spec.d * x)
    return np.sin(x)


def boundary_residuals(spec: SystemSpec, arch: Architecture, theta: ParameterVector, t) -> list[torch.Tensor]:
    """Periodic boundary residuals at times t: Dirichlet first, then Neumann if imposed."""
    t = as_tensor(t)
    x_left = torch.full_like(t, spec.domain.x_min)
    x_right = torch.full_like(t, spec.domain.x_max)
    if BoundaryKind.PERIODIC_NEUMANN not in spec.bc_kinds:
        return [forward(arch, theta, x_left, t) - forward(arch, theta, x_right, t)]
    left = forward_jet(arch, theta, x_left, t)
    right = forward_jet(arch, theta, x_right, t)
    return [left.val - right.val, left.dx - right.dx]


def _logistic(u0, rate_time):
    # exact flow of u' = rho u (1 - u) over time rho*t = rate_time; stays in [0, 1]
    return u0 / (u0 + (1.0 - u0) * np.exp(-rate_time))


def reference_solution(spec: SystemSpec, x, t) -> np.ndarray:
    x, t = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    if spec.kind is SystemKind.REACTION:
        u0 = initial_condition(spec, x)
        return np.where(t == 0.0, u0, _logistic(u0, spec.rho * t))
    if spec.kind is SystemKind.DIFFUSION:
        return np.sin(spec.d * x) * np.exp(-t)
    if spec.kind is SystemKind.CONVECTION:
        return np.sin(x - spec.beta * t)
    return _reaction_diffusion_interpolator(spec.rho, spec.d, *DEFAULT_RD_GRID)(x, t)


@dataclass(frozen=True)
class ReferenceGrid:
    x: np.ndarray  # (nx,) on [0, 2pi)
    t: np.ndarray  # (nt + 1,) on [0, 1]
    u: np.ndarray  # (nt + 1, nx)

    def to_frame(self) -> pd.DataFrame:
        tt, xx = np.meshgrid(self.t, self.x, indexing="ij")
        return pd.DataFrame({"x": xx.ravel(), "t": tt.ravel(), "u": self.u.ravel()})


def solve_reaction_diffusion(spec: SystemSpec, nx: int = DEFAULT_RD_GRID[0], nt: int = DEFAULT_RD_GRID[1]) -> ReferenceGrid:
    """Strang splitting: half logistic step, exact spectral diffusion step, half logistic step."""
    if spec.kind is not SystemKind.REACTION_DIFFUSION:
        raise UsageError(f"Splitting solver is for reaction-diffusion systems, got {spec.kind.value}")
    if nx < 256 or nx & (nx - 1):
        raise UsageError(f"Grid size nx must be a power of two >= 256, got {nx}")
    if nt < 1000:
        raise UsageError(f"Number of time steps nt must be >= 1000, got {nt}")
    rho, diffusivity = spec.rho, spec.d
    domain = spec.domain
    length = domain.x_max - domain.x_min
    dt = (domain.t_max - domain.t_min) / nt

    x = domain.x_min + length * np.arange(nx) / nx
    t = np.linspace(domain.t_min, domain.t_max, nt + 1)
    k = 2.0 * np.pi * fft.rfftfreq(nx, d=length / nx)
    diffusion_multiplier = np.exp(-diffusivity * k**2 * dt)

    u = np.empty((nt + 1, nx))
    u[0] = initial_condition(spec, x)
    current = u[0]
    for step in range(nt):
        current = _logistic(current, 0.5 * rho * dt)
        current = fft.irfft(fft.rfft(current) * diffusion_multiplier, n=nx)
        current = _logistic(current, 0.5 * rho * dt)
        u[step + 1] = current
    logging.info(f"Solved reaction-diffusion reference (rho={rho:g}, d={diffusivity:g}) on {nx}x{nt} grid")
    return ReferenceGrid(x=x, t=t, u=u)


@lru_cache(maxsize=8)
def _reaction_diffusion_interpolator(rho: float, d: float, nx: int, nt: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    grid = solve_reaction_diffusion(SystemSpec(SystemKind.REACTION_DIFFUSION, rho=rho, d=d), nx, nt)
    # close the periodic grid so queries up to x = 2pi interpolate
    x = np.append(grid.x, 2.0 * np.pi)
    u = np.concatenate([grid.u, grid.u[:, :1]], axis=1)
    interpolator = RegularGridInterpolator((grid.t, x), u, method="linear")
    return lambda xq, tq: interpolator(np.stack([tq, np.mod(xq, 2.0 * np.pi)], axis=-1))


def reference_grid(spec: SystemSpec, nx: int, nt: int) -> ReferenceGrid:
    """Reference values on a regular lattice (nx points in x, nt + 1 time levels)."""
    if spec.kind is SystemKind.REACTION_DIFFUSION:
        return solve_reaction_diffusion(spec, nx, nt)
    domain = spec.domain
    x = domain.x_min + (domain.x_max - domain.x_min) * np.arange(nx) / nx
    t = np.linspace(domain.t_min, domain.t_max, nt + 1)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    return ReferenceGrid(x=x, t=t, u=reference_solution(spec, xx, tt))


def export_reference_csv(grid: ReferenceGrid, path: str | Path) -> Path:
    return write_csv(grid.to_frame(), path)
