"""
Configuration module for B-PL-PINN.

Process-wide settings come from environment variables (a .env file in the
project root is loaded automatically). Per-run settings live in `RunConfig`,
which reads plain KEY=value files whose keys are the lower-case field names
below, e.g.

    system=convection
    beta=30
    method=bayes-pl
    n_samples=50

Unset fields marked "auto" are filled by `RunConfig.resolved()` from the
system and the desk-scale preset. The resolved config is written back to the
output directory and reproduces the run when passed to `--config`.
"""

import logging
import os
import re
import typing
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any

from dotenv import dotenv_values, load_dotenv

from src.data_loader import DatasetSizes
from src.exceptions import ConfigError
from src.network import Architecture
from src.optimizer import AdamConfig
from src.pl_pipeline import (
    DEFAULT_ENSEMBLE_EPOCHS,
    DEFAULT_ENSEMBLE_SIZE,
    Mode,
    PseudoLabelConfig,
    default_iterations,
    default_pretrain_epochs,
)
from src.posterior import PosteriorSpec
from src.sampler import SamplerConfig
from src.systems import SYSTEM_PARAMETERS, SystemKind, SystemSpec

load_dotenv()

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
SHOW_PROGRESS = os.getenv("SHOW_PROGRESS", "1") not in ("0", "false", "False")
TORCH_NUM_THREADS = int(os.getenv("TORCH_NUM_THREADS", "0"))
DEFAULT_OUTPUT_DIR = os.getenv("BPL_OUTPUT_DIR", "runs")

logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(levelname)s - %(message)s')


class Method(str, Enum):
    BAYES_PL = "bayes-pl"
    BAYES_NOPL = "bayes-nopl"
    VANILLA = "vanilla"
    ENSEMBLE_PL = "ensemble-pl"
    ENSEMBLE_NOPL = "ensemble-nopl"

    @property
    def is_bayesian(self) -> bool:
        return self in (Method.BAYES_PL, Method.BAYES_NOPL)

    @property
    def is_ensemble(self) -> bool:
        return self in (Method.ENSEMBLE_PL, Method.ENSEMBLE_NOPL)

    @property
    def mode(self) -> Mode:
        return Mode.NO_PL if self in (Method.BAYES_NOPL, Method.ENSEMBLE_NOPL) else Mode.PL


# Reduced sampler budget for runs on a single workstation; iteration and
# ensemble budgets are halved on top of it.
DESK_SCALE = {"n_samples": 50, "n_burnin": 50, "n_leapfrog": 64, "n_chains": 2}
FULL_SCALE = {"n_samples": 100, "n_burnin": 100, "n_leapfrog": 128, "n_chains": 2}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # system
    system: str = "reaction"
    rho: float | None = None
    d: float | None = None
    beta: float | None = None
    # run
    method: str = Method.BAYES_PL.value
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    desk_scale: bool = False
    save_checkpoints: bool = False
    # budgets (auto when unset)
    iterations: int | None = None
    pretrain_epochs: int | None = None
    vanilla_epochs: int | None = None
    ensemble_epochs: int | None = None
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE
    early_stop: bool = False
    # pseudo-labeling
    delta: float = 0.05
    delta_pde: float = 0.1
    anchor_tol: float = 1e-3
    consensus_var: float = 2e-4
    # posterior
    sigma_p: float = 5.0
    sigma_ic: float = 1e-3
    sigma_pl: float = 5e-3
    sigma_bc: float = 1e-3
    sigma_pde: float = 1e-2
    # sampler (auto when unset)
    n_samples: int | None = None
    n_burnin: int | None = None
    n_leapfrog: int | None = None
    n_chains: int | None = None
    target_accept: float = 0.6
    initial_stepsize: float = 1e-3
    parallel_chains: bool = False
    # adam
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    # data and network
    n_ic: int = 256
    n_bc: int = 100
    n_pde: int = 1000
    hidden_layers: int = 4
    hidden_width: int = 50
    # evaluation
    eval_points: int = 10000
    eval_seed: int = 0
    grid_nx: int = 256
    grid_nt: int = 100

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "RunConfig":
        """Builds a config from string or typed values; raises ConfigError naming the bad key."""
        known = {f.name: f for f in fields(cls)}
        parsed = {}
        for key, raw in values.items():
            name = key.strip().lower()
            if name not in known:
                raise ConfigError(name, "unknown key")
            parsed[name] = _parse_value(name, known[name].type, raw)
        return cls(**parsed)

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict[str, Any] | None = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config", f"file {path} does not exist")
        values = dict(dotenv_values(path))
        values.update(overrides or {})
        return cls.from_mapping(values)

    def with_overrides(self, **overrides) -> "RunConfig":
        return RunConfig.from_mapping({**asdict(self), **overrides})

    def system_spec(self) -> SystemSpec:
        try:
            kind = SystemKind(self.system)
        except ValueError:
            options = ", ".join(k.value for k in SystemKind)
            raise ConfigError("system", f"unknown system '{self.system}' (expected one of {options})") from None
        params = {}
        for name in ("rho", "d", "beta"):
            value = getattr(self, name)
            if name in SYSTEM_PARAMETERS[kind]:
                if value is None:
                    value = _default_parameter(kind, name)
                    if value is None:
                        raise ConfigError(name, f"required for the {kind.value} system")
                params[name] = value
            elif value is not None:
                raise ConfigError(name, f"not a parameter of the {kind.value} system")
        try:
            return SystemSpec(kind, **params)
        except ValueError as e:
            raise ConfigError(SYSTEM_PARAMETERS[kind][0], str(e)) from e

    @property
    def method_kind(self) -> Method:
        try:
            return Method(self.method)
        except ValueError:
            options = ", ".join(m.value for m in Method)
            raise ConfigError("method", f"unknown method '{self.method}' (expected one of {options})") from None

    def resolved(self) -> "RunConfig":
        """Validates and fills every auto field; idempotent."""
        system = self.system_spec()
        scale = 2 if self.desk_scale else 1
        sampler = DESK_SCALE if self.desk_scale else FULL_SCALE
        updates = {name: getattr(system, name) for name in SYSTEM_PARAMETERS[system.kind]}
        for name, value in sampler.items():
            if getattr(self, name) is None:
                updates[name] = value
        if self.iterations is None:
            updates["iterations"] = max(1, default_iterations(system) // scale)
        if self.pretrain_epochs is None:
            updates["pretrain_epochs"] = default_pretrain_epochs(system)
        ensemble_epochs = self.ensemble_epochs or DEFAULT_ENSEMBLE_EPOCHS // scale
        updates["ensemble_epochs"] = ensemble_epochs
        if self.vanilla_epochs is None:
            updates["vanilla_epochs"] = ensemble_epochs * updates.get("iterations", self.iterations)
        config = replace(self, **updates)
        config.validate()
        return config

    def validate(self):
        """Builds every module config once so invalid values surface as ConfigError."""
        checks = [
            ("iterations", lambda: self.iterations is None or self.iterations >= 0),
            ("pretrain_epochs", lambda: self.pretrain_epochs is None or self.pretrain_epochs >= 0),
            ("vanilla_epochs", lambda: self.vanilla_epochs is None or self.vanilla_epochs >= 0),
            ("ensemble_epochs", lambda: self.ensemble_epochs is None or self.ensemble_epochs >= 1),
            ("ensemble_size", lambda: self.ensemble_size >= 2),
            ("eval_points", lambda: self.eval_points >= 1),
            ("grid_nx", lambda: self.grid_nx >= 1),
            ("grid_nt", lambda: self.grid_nt >= 2),
        ]
        for key, check in checks:
            if not check():
                raise ConfigError(key, f"value {getattr(self, key)!r} is out of range")
        builders = {
            "sigma": self.posterior_spec,
            "n_samples": self.sampler_config,
            "delta": self.pseudo_label_config,
            "learning_rate": self.adam_config,
            "n_pde": self.dataset_sizes,
            "hidden_width": self.architecture,
        }
        for key, build in builders.items():
            try:
                build()
            except ConfigError:
                raise
            except ValueError as e:
                raise ConfigError(_guess_key(str(e), key), str(e)) from e

    def posterior_spec(self) -> PosteriorSpec:
        return PosteriorSpec(self.sigma_p, self.sigma_ic, self.sigma_pl, self.sigma_bc, self.sigma_pde)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            n_samples=self.n_samples or FULL_SCALE["n_samples"],
            n_burnin=self.n_burnin or FULL_SCALE["n_burnin"],
            n_leapfrog=self.n_leapfrog or FULL_SCALE["n_leapfrog"],
            n_chains=self.n_chains or FULL_SCALE["n_chains"],
            target_accept=self.target_accept,
            initial_stepsize=self.initial_stepsize,
            seed=self.seed,
            parallel_chains=self.parallel_chains,
        )

    def pseudo_label_config(self) -> PseudoLabelConfig:
        return PseudoLabelConfig(
            delta=self.delta, delta_pde=self.delta_pde, anchor_tol=self.anchor_tol,
            consensus_var=self.consensus_var, mode=self.method_kind.mode,
            iterations=self.iterations or 0, early_stop=self.early_stop,
        )

    def adam_config(self) -> AdamConfig:
        return AdamConfig(learning_rate=self.learning_rate, beta1=self.adam_beta1, beta2=self.adam_beta2)

    def dataset_sizes(self) -> DatasetSizes:
        return DatasetSizes(self.n_ic, self.n_bc, self.n_pde)

    def architecture(self) -> Architecture:
        return Architecture(hidden_layers=self.hidden_layers, hidden_width=self.hidden_width)

    def to_env_text(self) -> str:
        lines = []
        for name, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name}={value}")
        return "\n".join(lines) + "\n"

    def write_env(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_env_text())
        return path


def _default_parameter(kind: SystemKind, name: str) -> float | None:
    # reaction-diffusion is benchmarked over d with the reaction rate held at 5
    if kind is SystemKind.REACTION_DIFFUSION and name == "rho":
        return 5.0
    return None


def _guess_key(message: str, fallback: str) -> str:
    for name in RunConfig.field_names():
        if re.match(rf"{name}\b", message):
            return name
    return fallback


def _base_type(annotation) -> tuple[type, bool]:
    """(underlying type, optional) for annotations like `int` or `float | None`."""
    args = [arg for arg in typing.get_args(annotation) if arg is not type(None)]
    if args:
        return args[0], True
    return annotation, False


def _parse_value(name: str, annotation, raw):
    base, optional = _base_type(annotation)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "auto")):
        if optional:
            return None
        raise ConfigError(name, "a value is required")
    try:
        if base is bool:
            if isinstance(raw, bool):
                return raw
            lowered = str(raw).strip().lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if base is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if base is float:
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(name, f"cannot parse {raw!r} as {base.__name__}") from None
    return str(raw).strip()
