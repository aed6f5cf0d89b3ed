"""
Small helpers shared by the training drivers: seed derivation, phase timers and
CSV writing.
"""

import logging
import time
from collections import defaultdict
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

# Seed streams. A subordinate seed is SeedSequence(master, spawn_key=(stream, *extra)).
SEED_STREAM_DATA = 0
SEED_STREAM_INIT = 1
SEED_STREAM_CHAINS = 2
SEED_STREAM_EVAL = 3
SEED_STREAM_ENSEMBLE = 4
SEED_STREAM_GRID = 5


def derive_seed(master: int, *key: int) -> int:
    """Derives a 31-bit seed from the master seed and a spawn key."""
    sequence = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint32)[0] >> 1)


class PhaseTimer:
    """Accumulates wall time per named phase."""

    def __init__(self):
        self.totals: dict[str, float] = defaultdict(float)

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] += time.perf_counter() - start

    def as_dict(self) -> dict[str, float]:
        return {name: round(seconds, 3) for name, seconds in self.totals.items()}


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logging.info(f"Wrote {len(frame)} rows to {path}")
    return path
