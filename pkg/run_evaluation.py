"""
End-to-end benchmark evaluation.

This script performs the following steps:
1.  Builds the benchmark suite (systems x parameterizations x methods).
2.  Runs every configuration through `src.cli.run_suite`, each in its own output directory.
3.  Collects the relative L2 errors into results.csv.
4.  Prints a method x system report table, with failed runs marked.

To run this script:
1. Install the dependencies: `pip install -r requirements.txt`
2. Optionally set LOG_LEVEL / SHOW_PROGRESS / TORCH_NUM_THREADS in a `.env` file.
3. Run it from the root of the project: `python run_evaluation.py --desk-scale`
"""

import argparse
import logging

import pandas as pd

from evaluation.benchmark_suite import PRESETS, get_suite
from src.cli import run_suite
from src.config import DEFAULT_OUTPUT_DIR


def report_table(results: pd.DataFrame) -> pd.DataFrame:
    """Pivot of relative L2 by method (rows) and system parameterization (columns)."""
    frame = results.copy()
    frame["case"] = frame["system"] + " " + frame["parameter"] + "=" + frame["value"].map(lambda v: f"{v:g}")
    frame["cell"] = frame.apply(
        lambda row: f"{row['relative_l2']:.2e}" if row["status"] == 0 else "failed", axis=1
    )
    return frame.pivot(index="method", columns="case", values="cell")


def main():
    """Main function to run the benchmark evaluation."""
    parser = argparse.ArgumentParser(description="Run the B-PL-PINN benchmark suite")
    parser.add_argument("--preset", default="benchmark", choices=sorted(PRESETS))
    parser.add_argument("--methods", nargs="+", default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--desk-scale", action="store_true")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default=f"{DEFAULT_OUTPUT_DIR}/benchmark")
    args = parser.parse_args()

    # --- 1. Build the suite ---
    configs = get_suite(args.preset, args.methods, seed=args.seed, desk_scale=args.desk_scale)
    logging.info(f"Loaded suite '{args.preset}' with {len(configs)} runs")

    # --- 2. Run it ---
    results = run_suite(configs, args.out, args.jobs)

    # --- 3. Print Report ---
    print("\n\n--- B-PL-PINN Benchmark Report ---")
    print("\nRelative L2 error of the ensemble-mean prediction (lower is better).\n")
    print(report_table(results).to_string())
    failed = results[results["status"] != 0]
    if len(failed):
        print("\n--- Failed Runs ---")
        print(failed[["system", "value", "method", "error"]].to_string(index=False))
    print(f"\nPer-run artifacts are in {args.out}/")
    print("-----------------------------")


if __name__ == "__main__":
    main()
