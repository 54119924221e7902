"""Deterministic Monte Carlo driver.

Each sample gets its own generator from ``(seed, label, index)``.
Per-sample values are stored by index and reduced in index order, so the
result does not depend on the number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .rng import stream

_CHUNK = 256


def default_workers() -> int:
    """Worker count from ``ENTREP_THREADS``; 1 when unset."""
    raw = os.environ.get("ENTREP_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidInputError(f"ENTREP_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class MCEstimate:
    estimate: float
    stderr: float
    samples: int
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"estimate": self.estimate, "stderr": self.stderr, "samples": self.samples, "seed": self.seed}
        out.update(self.extra)
        return out


def run_samples(fn: Callable, samples: int, seed: int, label: str, workers: int | None = None) -> np.ndarray:
    """Evaluate ``fn(rng, index)`` for every sample index, returning values in index order.

    `fn` may return a scalar or a fixed-length tuple of floats.
    """
    if samples < 1:
        raise InvalidInputError("samples must be at least 1")
    workers = default_workers() if workers is None else max(1, int(workers))

    def chunk(start):
        stop = min(samples, start + _CHUNK)
        return [fn(stream(seed, label, i), i) for i in range(start, stop)]

    starts = range(0, samples, _CHUNK)
    if workers == 1 or samples <= _CHUNK:
        parts = [chunk(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(chunk, starts))
    return np.asarray([v for p in parts for v in p], dtype=float)


def mean_stderr(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    mean = float(np.mean(values, axis=0)) if values.ndim == 1 else np.mean(values, axis=0)
    if n < 2:
        return mean, 0.0 if values.ndim == 1 else np.zeros(values.shape[1:])
    se = np.std(values, axis=0, ddof=1) / np.sqrt(n)
    return mean, (float(se) if values.ndim == 1 else se)
