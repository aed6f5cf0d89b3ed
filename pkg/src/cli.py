"""
Command-line experiment runner.

`run` executes one configured method on one system and writes its artifacts
into the output directory:

    summary.txt           JSON summary (relative L2, wall times, diagnostics)
    history.csv           per-iteration training history
    fields.csv            prediction / reference / error / variance lattice
    checkpoint.bin        final parameter vector
    effective_config.env  resolved configuration; reproduces the run via --config
    loss_curve.csv        Adam loss per epoch (pretraining or vanilla training)
    sampler_trace.csv     HMC trace (Bayesian methods)
    diagnostics.txt       only when the run aborted

`run_suite` runs many configurations and collects one row per run.
"""

import argparse
import logging
import re
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import pandas as pd
import torch
from dotenv import dotenv_values

from src.config import DEFAULT_OUTPUT_DIR, SHOW_PROGRESS, TORCH_NUM_THREADS, Method, RunConfig
from src.evaluation import (
    export_fields,
    initial_condition_mse,
    low_variance_fraction,
    make_evaluator,
    variance_error_correlation,
    write_summary,
)
from src.exceptions import BPLError, ConfigError
from src.network import save_checkpoint
from src.optimizer import LossCurve
from src.pl_pipeline import TrainHistory, baseline_ensemble_pl, baseline_vanilla, train
from src.sampler import export_trace
from src.systems import SYSTEM_PARAMETERS, SystemKind
from src.utils import PhaseTimer, write_csv

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


@dataclass
class RunOutcome:
    status: int
    output_dir: Path | None
    summary: dict = field(default_factory=dict)
    error: str = ""


def _execute(config: RunConfig, out: Path, show_progress: bool) -> dict:
    system = config.system_spec()
    method = config.method_kind
    arch = config.architecture()
    evaluator = make_evaluator(system, arch, config.eval_points, config.eval_seed)
    sizes = config.dataset_sizes()
    adam = config.adam_config()
    timer = PhaseTimer()
    history = TrainHistory()
    extra = {}

    if method.is_bayesian:
        result = train(
            system, config.seed, arch, sizes, config.posterior_spec(), config.sampler_config(),
            config.pseudo_label_config(), adam, config.pretrain_epochs, evaluator,
            checkpoint_dir=out / "checkpoints" if config.save_checkpoints else None,
            show_progress=show_progress,
        )
        samples, history, timer = result.samples, result.history, result.timer
        result.loss_curve.to_csv(out / "loss_curve.csv")
        export_trace(result.traces, out / "sampler_trace.csv")
        extra = {"n_pl": len(result.bundle.pl_index), "iterations_run": result.iterations_run}
        if len(history):
            extra["acceptance_rate"] = history.rows[-1]["acceptance_rate"]
        result.bundle.to_csv(out / "data.csv")
    elif method.is_ensemble:
        result = baseline_ensemble_pl(
            system, config.seed, config.ensemble_size, arch, sizes, config.pseudo_label_config(), adam,
            config.ensemble_epochs, evaluator, show_progress=show_progress,
        )
        samples, history, timer = result.samples, result.history, result.timer
        extra = {"n_pl": len(result.bundle.pl_index), "iterations_run": result.iterations_run}
        result.bundle.to_csv(out / "data.csv")
    else:
        curve = LossCurve()
        with timer.phase("training"):
            theta = baseline_vanilla(system, config.seed, config.vanilla_epochs, arch, sizes, adam, curve,
                                     show_progress=show_progress)
        samples = theta.unsqueeze(0)
        curve.to_csv(out / "loss_curve.csv")

    with timer.phase("eval"):
        error = evaluator(samples)
        grid = export_fields(arch, samples, system, out / "fields.csv", config.grid_nx, config.grid_nt)
        ic_mse = initial_condition_mse(arch, samples, system, config.n_ic)
    if not method.is_bayesian and not method.is_ensemble:
        history.record(iteration=0, n_pl=0, n_new=0, relative_l2=error)
    history.to_csv(out / "history.csv")
    save_checkpoint(out / "checkpoint.bin", arch, samples[-1])

    summary = {
        "method": method.value,
        "system": system.kind.value,
        **{name: getattr(system, name) for name in SYSTEM_PARAMETERS[system.kind]},
        "seed": config.seed,
        "relative_l2": error,
        "ic_mse": ic_mse,
        "n_samples": int(samples.shape[0]),
        "variance_error_spearman": variance_error_correlation(grid),
        "low_variance_fraction": low_variance_fraction(grid, config.consensus_var),
        "phase_seconds": timer.as_dict(),
        **extra,
    }
    logging.info(f"{method.value} on {system.label}: relative L2 = {error:.3e}")
    return summary


def _write_diagnostics(out: Path, error: Exception) -> None:
    try:
        (out / "diagnostics.txt").write_text(
            f"error: {type(error).__name__}\nmessage: {error}\n\n{traceback.format_exc()}"
        )
    except OSError as e:
        logging.warning(f"Could not write diagnostics to {out}: {e}")


def run(config: RunConfig, show_progress: bool | None = None) -> RunOutcome:
    """Runs one experiment; never raises for configuration or training failures."""
    show_progress = SHOW_PROGRESS if show_progress is None else show_progress
    try:
        config = config.resolved()
    except ConfigError as e:
        logging.error(str(e))
        return RunOutcome(EXIT_CONFIG, None, error=str(e))

    out = Path(config.output_dir)
    if TORCH_NUM_THREADS > 0:
        torch.set_num_threads(TORCH_NUM_THREADS)

    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        config.write_env(out / "effective_config.env")
        summary = _execute(config, out, show_progress)
        summary["wall_time"] = round(time.perf_counter() - start, 3)
        write_summary(summary, out / "summary.txt")
    except BPLError as e:
        logging.error(f"Run failed: {e}")
        _write_diagnostics(out, e)
        return RunOutcome(EXIT_FAILURE, out, error=str(e))
    except Exception as e:
        logging.exception(f"Run crashed: {e}")
        _write_diagnostics(out, e)
        return RunOutcome(EXIT_FAILURE, out, error=f"{type(e).__name__}: {e}")
    return RunOutcome(EXIT_OK, out, summary)


def _slug(config: RunConfig) -> str:
    params = "_".join(
        f"{name}{getattr(config, name):g}" for name in ("rho", "d", "beta") if getattr(config, name) is not None
    )
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", f"{config.system}_{params}_{config.method}")


def _suite_row(config: RunConfig) -> dict:
    try:
        outcome = run(config, show_progress=False)
    except Exception as e:
        logging.exception(f"Suite entry {_slug(config)} crashed: {e}")
        outcome = RunOutcome(EXIT_FAILURE, None, error=f"{type(e).__name__}: {e}")
    kind = SystemKind(config.system) if config.system in {k.value for k in SystemKind} else None
    parameter = SYSTEM_PARAMETERS[kind][0] if kind else ""
    return {
        "system": config.system,
        "parameter": parameter,
        "value": getattr(config, parameter) if parameter else None,
        "method": config.method,
        "status": outcome.status,
        "relative_l2": outcome.summary.get("relative_l2"),
        "wall_time": outcome.summary.get("wall_time"),
        "error": outcome.error,
    }


def run_suite(configs: Sequence[RunConfig], out: str | Path, jobs: int = 1) -> pd.DataFrame:
    """One row per config; failing runs are recorded and the suite carries on.

    Each run writes into its own subdirectory of `out`; results.csv collects the rows.
    """
    out = Path(out)
    configs = [replace(config, output_dir=str(out / _slug(config))) for config in configs]
    logging.info(f"Running suite of {len(configs)} configurations with {jobs} job(s)")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_suite_row, configs))
    else:
        rows = [_suite_row(config) for config in configs]
    frame = pd.DataFrame(rows, columns=["system", "parameter", "value", "method", "status",
                                        "relative_l2", "wall_time", "error"])
    write_csv(frame, out / "results.csv")
    return frame


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Bayesian pseudo-label PINN experiments")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="train and evaluate one method on one system")
    run_parser.add_argument("--config", type=str, help="KEY=value configuration file")
    run_parser.add_argument("--system", type=str)
    run_parser.add_argument("--param", type=float, help="primary parameter of the system (rho, d or beta)")
    run_parser.add_argument("--rho", type=float)
    run_parser.add_argument("--d", type=float)
    run_parser.add_argument("--beta", type=float)
    run_parser.add_argument("--method", type=str, help=", ".join(m.value for m in Method))
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--iterations", type=int)
    run_parser.add_argument("--out", type=str, help=f"output directory (default {DEFAULT_OUTPUT_DIR}/<run>)")
    run_parser.add_argument("--desk-scale", action="store_true", default=None)
    run_parser.add_argument("--early-stop", action="store_true", default=None)
    run_parser.add_argument("--save-checkpoints", action="store_true", default=None)
    run_parser.add_argument("--parallel-chains", action="store_true", default=None)
    run_parser.add_argument("--no-progress", action="store_true")

    suite_parser = subparsers.add_parser("suite", help="run a benchmark suite preset")
    suite_parser.add_argument("--preset", default="benchmark")
    suite_parser.add_argument("--methods", nargs="+", default=None)
    suite_parser.add_argument("--seed", type=int, default=0)
    suite_parser.add_argument("--desk-scale", action="store_true")
    suite_parser.add_argument("--jobs", type=int, default=1)
    suite_parser.add_argument("--out", default=f"{DEFAULT_OUTPUT_DIR}/suite")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Config file first, command-line flags on top."""
    overrides = {}
    for flag in ("system", "rho", "d", "beta", "method", "seed", "iterations",
                 "desk_scale", "early_stop", "save_checkpoints", "parallel_chains"):
        value = getattr(args, flag)
        if value is not None:
            overrides[flag] = value
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.param is not None:
        system = overrides.get("system")
        if system is None and args.config:
            system = RunConfig.from_file(args.config).system
        try:
            primary = SYSTEM_PARAMETERS[SystemKind(system or RunConfig.system)][0]
        except ValueError:
            raise ConfigError("system", f"unknown system '{system}'") from None
        overrides[primary] = args.param
    if args.config:
        config = RunConfig.from_file(args.config, overrides)
    else:
        config = RunConfig.from_mapping(overrides)
    if args.out is None and not (args.config and "output_dir" in dotenv_values(args.config)):
        config = replace(config, output_dir=str(Path(config.output_dir) / _slug(config)))
    return config


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        try:
            config = config_from_args(args)
        except ConfigError as e:
            logging.error(str(e))
            print(f"error: {e}")
            return EXIT_CONFIG
        outcome = run(config, show_progress=False if args.no_progress else None)
        if outcome.status == EXIT_CONFIG:
            print(f"error: {outcome.error}")
        elif outcome.status == EXIT_OK:
            print(f"relative L2 = {outcome.summary['relative_l2']:.4e} ({outcome.output_dir})")
        return outcome.status

    from evaluation.benchmark_suite import get_suite

    try:
        configs = get_suite(args.preset, args.methods, seed=args.seed, desk_scale=args.desk_scale)
    except (ValueError, ConfigError) as e:
        print(f"error: {e}")
        return EXIT_CONFIG
    frame = run_suite(configs, args.out, args.jobs)
    print(frame.to_string(index=False))
    return EXIT_OK if (frame["status"] == EXIT_OK).all() else EXIT_FAILURE
