"""
Training data for B-PL-PINN.

A `DataBundle` holds the initial-condition labels (D_ic), the boundary times
(D_bc), the Latin-hypercube collocation points (D_pde) and the pseudo-labels
(D_pl). Pseudo-labels always sit on collocation points, so they are stored as
indices into D_pde plus their values. Bundles are immutable snapshots: adding
pseudo-labels returns a new bundle.

All distances are computed on coordinates min-max scaled to [0, 1] per
dimension.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import torch
from scipy.spatial.distance import cdist

from src.autodiff import as_tensor
from src.exceptions import UsageError
from src.systems import Domain, SystemSpec, initial_condition
from src.utils import write_csv

ROLES = ("ic", "bc", "pde", "pl")


@dataclass(frozen=True)
class LabeledPoint:
    x: float
    t: float
    u: float


@dataclass(frozen=True)
class PointSet:
    """Points (x, t), with solution values u when the set is labeled."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64).reshape(-1)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if x.shape != t.shape:
            raise UsageError("x and t must have the same length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        if self.u is not None:
            u = np.asarray(self.u, dtype=np.float64).reshape(-1)
            if u.shape != x.shape:
                raise UsageError("u must have one value per point")
            object.__setattr__(self, "u", u)

    @classmethod
    def empty(cls, labeled: bool = True) -> "PointSet":
        return cls(np.empty(0), np.empty(0), np.empty(0) if labeled else None)

    def __len__(self) -> int:
        return self.x.size

    @property
    def labeled(self) -> bool:
        return self.u is not None

    def coords(self) -> np.ndarray:
        return np.stack([self.x, self.t], axis=-1)

    def take(self, index) -> "PointSet":
        return PointSet(self.x[index], self.t[index], None if self.u is None else self.u[index])

    def point(self, i: int) -> LabeledPoint:
        if self.u is None:
            raise UsageError("Point set is unlabeled")
        return LabeledPoint(float(self.x[i]), float(self.t[i]), float(self.u[i]))

    def concat(self, other: "PointSet") -> "PointSet":
        if self.labeled != other.labeled:
            raise UsageError("Cannot concatenate labeled and unlabeled sets")
        u = None if self.u is None else np.concatenate([self.u, other.u])
        return PointSet(np.concatenate([self.x, other.x]), np.concatenate([self.t, other.t]), u)


def latin_hypercube(n: int, bounds: Sequence[tuple[float, float]], seed: int) -> np.ndarray:
    """n samples, one per stratum in each dimension; rows are points, shape (n, len(bounds))."""
    if n < 1:
        raise UsageError(f"Latin hypercube needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    bounds = np.asarray(bounds, dtype=np.float64)
    dims = bounds.shape[0]
    strata = np.stack([rng.permutation(n) for _ in range(dims)], axis=1)
    unit = (strata + rng.uniform(size=(n, dims))) / n
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


def normalize(points, domain: Domain) -> np.ndarray:
    """Min-max scales (x, t) pairs (last axis) to [0, 1]^2."""
    points = np.asarray(points, dtype=np.float64)
    lower = np.array([domain.x_min, domain.t_min])
    upper = np.array([domain.x_max, domain.t_max])
    return (points - lower) / (upper - lower)


def nearest_labeled_indices(queries, labeled: PointSet, domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    """Index of and distance to the nearest labeled point for every query.

    Exhaustive scan; ties go to the lowest index.
    """
    if len(labeled) == 0:
        raise UsageError("Nearest-neighbour query against an empty labeled set")
    queries = normalize(np.atleast_2d(queries), domain)
    distances = cdist(queries, normalize(labeled.coords(), domain))
    index = np.argmin(distances, axis=1)
    return index, distances[np.arange(len(queries)), index]


def nearest_labeled(query, labeled: PointSet, domain: Domain) -> tuple[LabeledPoint, float]:
    index, distance = nearest_labeled_indices([query], labeled, domain)
    return labeled.point(int(index[0])), float(distance[0])


def active_mask(points: PointSet, labeled: PointSet, delta_pde: float, domain: Domain) -> np.ndarray:
    if delta_pde <= 0:
        raise UsageError(f"Activation radius must be positive, got {delta_pde}")
    if len(labeled) == 0 or len(points) == 0:
        return np.zeros(len(points), dtype=bool)
    _, distance = nearest_labeled_indices(points.coords(), labeled, domain)
    return distance < delta_pde


def active_subset(points: PointSet, labeled: PointSet, delta_pde: float, domain: Domain) -> PointSet:
    """The points whose nearest labeled neighbour is strictly closer than delta_pde."""
    return points.take(active_mask(points, labeled, delta_pde, domain))


def boundary_active_mask(bc: PointSet, labeled: PointSet, delta_pde: float, domain: Domain) -> np.ndarray:
    """A boundary time is active when either end of its periodic pair is near a label."""
    left = PointSet(np.full(len(bc), domain.x_min), bc.t)
    right = PointSet(np.full(len(bc), domain.x_max), bc.t)
    return active_mask(left, labeled, delta_pde, domain) | active_mask(right, labeled, delta_pde, domain)


@dataclass(frozen=True)
class DatasetSizes:
    n_ic: int = 256
    n_bc: int = 100
    n_pde: int = 1000

    def __post_init__(self):
        if min(self.n_ic, self.n_bc, self.n_pde) < 1:
            raise ValueError(f"Dataset sizes must be positive: {self}")


@dataclass(frozen=True)
class TrainingData:
    """Tensors of the sets entering one iteration's losses (active subsets only)."""

    ic_x: torch.Tensor
    ic_t: torch.Tensor
    ic_u: torch.Tensor
    pl_x: torch.Tensor
    pl_t: torch.Tensor
    pl_u: torch.Tensor
    bc_t: torch.Tensor
    pde_x: torch.Tensor
    pde_t: torch.Tensor
    n_bc_total: int
    n_pde_total: int

    @classmethod
    def from_sets(cls, ic: PointSet, pl: PointSet, bc: PointSet, pde: PointSet,
                  n_bc_total: int | None = None, n_pde_total: int | None = None) -> "TrainingData":
        return cls(
            ic_x=as_tensor(ic.x), ic_t=as_tensor(ic.t), ic_u=as_tensor(ic.u),
            pl_x=as_tensor(pl.x), pl_t=as_tensor(pl.t), pl_u=as_tensor(pl.u),
            bc_t=as_tensor(bc.t),
            pde_x=as_tensor(pde.x), pde_t=as_tensor(pde.t),
            n_bc_total=len(bc) if n_bc_total is None else n_bc_total,
            n_pde_total=len(pde) if n_pde_total is None else n_pde_total,
        )

    @property
    def n_bc_active(self) -> int:
        return self.bc_t.numel()

    @property
    def n_pde_active(self) -> int:
        return self.pde_x.numel()


@dataclass(frozen=True)
class DataBundle:
    domain: Domain
    ic: PointSet
    bc: PointSet
    pde: PointSet
    pl_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    pl_u: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "pl_index", np.asarray(self.pl_index, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "pl_u", np.asarray(self.pl_u, dtype=np.float64).reshape(-1))
        if self.pl_index.size != self.pl_u.size:
            raise UsageError("Each pseudo-label needs exactly one value")
        if np.unique(self.pl_index).size != self.pl_index.size:
            raise UsageError("A collocation point can carry at most one pseudo-label")
        if self.pl_index.size and (self.pl_index.min() < 0 or self.pl_index.max() >= len(self.pde)):
            raise UsageError("Pseudo-label index outside the collocation set")

    @property
    def pl(self) -> PointSet:
        return PointSet(self.pde.x[self.pl_index], self.pde.t[self.pl_index], self.pl_u)

    def labeled(self) -> PointSet:
        """D_l = D_ic followed by D_pl."""
        return self.ic.concat(self.pl)

    def pseudo_labeled_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.pde), dtype=bool)
        mask[self.pl_index] = True
        return mask

    def with_pseudo_labels(self, indices, values) -> "DataBundle":
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if indices.size != values.size:
            raise UsageError("Each pseudo-label needs exactly one value")
        if indices.size and (indices.min() < 0 or indices.max() >= len(self.pde)):
            raise UsageError("Pseudo-label index outside the collocation set")
        if np.any(self.pseudo_labeled_mask()[indices]):
            raise UsageError("Collocation point is already pseudo-labeled")
        order = np.argsort(indices, kind="stable")
        return DataBundle(
            domain=self.domain, ic=self.ic, bc=self.bc, pde=self.pde,
            pl_index=np.concatenate([self.pl_index, indices[order]]),
            pl_u=np.concatenate([self.pl_u, values[order]]),
        )

    def active_masks(self, delta_pde: float) -> tuple[np.ndarray, np.ndarray]:
        """(boundary mask, collocation mask) of points within delta_pde of D_l."""
        labeled = self.labeled()
        return (
            boundary_active_mask(self.bc, labeled, delta_pde, self.domain),
            active_mask(self.pde, labeled, delta_pde, self.domain),
        )

    def training_data(self, bc_mask=None, pde_mask=None, include_pl: bool = True) -> TrainingData:
        """Tensors for the losses; masks default to all points, pl is dropped when excluded."""
        bc = self.bc if bc_mask is None else self.bc.take(bc_mask)
        pde = self.pde if pde_mask is None else self.pde.take(pde_mask)
        pl = self.pl if include_pl else PointSet.empty()
        return TrainingData.from_sets(self.ic, pl, bc, pde, n_bc_total=len(self.bc), n_pde_total=len(self.pde))

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for role, points, index in (
            ("ic", self.ic, None),
            ("bc", self.bc, None),
            ("pde", self.pde, None),
            ("pl", self.pl, self.pl_index),
        ):
            frames.append(pd.DataFrame({
                "role": role,
                "x": points.x,
                "t": points.t,
                "u": points.u if points.labeled else np.nan,
                "pde_index": index if index is not None else -1,
            }))
        return pd.concat(frames, ignore_index=True)

    def to_csv(self, path: str | Path) -> Path:
        return write_csv(self.to_frame(), path)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, domain: Domain = Domain()) -> "DataBundle":
        unknown = set(frame["role"]) - set(ROLES)
        if unknown:
            raise UsageError(f"Unknown roles in bundle file: {sorted(unknown)}")
        rows = {role: frame[frame["role"] == role] for role in ROLES}
        return cls(
            domain=domain,
            ic=PointSet(rows["ic"]["x"], rows["ic"]["t"], rows["ic"]["u"]),
            bc=PointSet(rows["bc"]["x"], rows["bc"]["t"]),
            pde=PointSet(rows["pde"]["x"], rows["pde"]["t"]),
            pl_index=rows["pl"]["pde_index"].to_numpy(dtype=np.int64),
            pl_u=rows["pl"]["u"].to_numpy(dtype=np.float64),
        )

    @classmethod
    def read_csv(cls, path: str | Path, domain: Domain = Domain()) -> "DataBundle":
        return cls.from_frame(pd.read_csv(path), domain)


def build_bundle(spec: SystemSpec, seed: int, sizes: DatasetSizes = DatasetSizes()) -> DataBundle:
    """IC on an even x grid at t=0, evenly spaced boundary times, LHS collocation points."""
    domain = spec.domain
    ic_x = domain.x_min + (domain.x_max - domain.x_min) * np.arange(sizes.n_ic) / sizes.n_ic
    ic = PointSet(ic_x, np.full(sizes.n_ic, domain.t_min), initial_condition(spec, ic_x))
    bc_t = np.linspace(domain.t_min, domain.t_max, sizes.n_bc)
    bc = PointSet(np.full(sizes.n_bc, domain.x_min), bc_t)
    collocation = latin_hypercube(
        sizes.n_pde, [(domain.x_min, domain.x_max), (domain.t_min, domain.t_max)], seed
    )
    pde = PointSet(collocation[:, 0], collocation[:, 1])
    logging.info(f"Built data bundle for {spec.label}: |ic|={len(ic)}, |bc|={len(bc)}, |pde|={len(pde)}")
    return DataBundle(domain=domain, ic=ic, bc=bc, pde=pde)
