from __future__ import annotations

import time
from logging import getLogger
from pathlib import Path
from typing import Iterable, Tuple

import numpy as np
from platformdirs import user_data_dir

logger = getLogger(f"conda.{__name__}")


def default_data_dir() -> Path:
    """Where retained payloads and reports go unless told otherwise."""
    return Path(user_data_dir("conda-flake"))


def relative_frobenius(actual: np.ndarray, expected: np.ndarray) -> float:
    """``||actual - expected||_F / ||expected||_F``; absolute when ``expected`` is zero."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if actual.shape != expected.shape:
        return float("inf")
    difference = float(np.linalg.norm(actual - expected))
    scale = float(np.linalg.norm(expected))
    return difference / scale if scale > 0 else difference


def mean_std(values: Iterable[float]) -> Tuple[float, float]:
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        return 0.0, 0.0
    return float(values.mean()), float(values.std())


class Stopwatch:
    """Monotonic wall-clock timer for one stage."""

    def __init__(self, stage: str = ""):
        self.stage = stage
        self.elapsed = 0.0

    def __enter__(self) -> "Stopwatch":
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.elapsed = time.perf_counter() - self._start
        if self.stage:
            logger.debug("%s took %.6fs", self.stage, self.elapsed)
