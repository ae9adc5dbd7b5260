"""Exact reductions and seeded random streams.

Yields are carried as int64 numerators over a per-policy denominator, so
sums can be computed exactly. Partial sums are taken over a fixed grid of
row partitions and combined as Python ints, which makes every total
independent of worker count and partition size.
"""
from __future__ import annotations

import statistics
from fractions import Fraction
from typing import Sequence

import numpy as np

PARTITION_ROWS = 1 << 16
_SAFE = 1 << 62


def as_fraction(value) -> Fraction:
    """Exact rational for a decimal literal (``1.05`` means 105/100, not the binary float)."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    return Fraction(repr(float(value)))


def exact_sum(values: np.ndarray, partition_rows: int = PARTITION_ROWS) -> int:
    """Exact integer sum of an int64 array, reduced partition by partition."""
    values = np.asarray(values)
    if values.size == 0:
        return 0
    peak = int(np.abs(values).max())
    if peak * min(partition_rows, values.size) < _SAFE:
        starts = np.arange(0, values.size, partition_rows)
        return sum(int(s) for s in np.add.reduceat(values, starts))
    return sum(int(v) for v in values.tolist())


def grouped_exact_sums(values: np.ndarray, codes: np.ndarray, n_groups: int,
                       order: np.ndarray | None = None) -> list[int]:
    """Exact per-group integer sums; ``codes`` in ``[0, n_groups)``.

    ``order`` may be a precomputed stable argsort of ``codes``.
    """
    values = np.asarray(values)
    if order is None:
        order = np.argsort(codes, kind="stable")
    sorted_codes = codes[order]
    sorted_vals = values[order]
    bounds = np.searchsorted(sorted_codes, np.arange(n_groups + 1))
    out = []
    for g in range(n_groups):
        lo, hi = int(bounds[g]), int(bounds[g + 1])
        out.append(exact_sum(sorted_vals[lo:hi]) if hi > lo else 0)
    return out


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``(seed, *keys)``.

    Streams for distinct key tuples are independent, and a stream never
    depends on how many other streams were drawn first, so parallel and
    serial schedules produce identical draws.
    """
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


def sample_sd(values: Sequence[float]) -> float:
    """Sample standard deviation (ddof=1), exactly 0 for constant input."""
    vals = [float(v) for v in values]
    if len(vals) < 2:
        return float("nan")
    return statistics.stdev(vals)


def day_resample_weights(seed: int, draws: int, n_days: int) -> np.ndarray:
    """``(draws, n_days)`` multiplicities from resampling days with replacement.

    Draw ``b`` uses its own stream ``stream_rng(seed, b)``.
    """
    out = np.empty((draws, n_days), dtype=np.int64)
    for b in range(draws):
        picks = stream_rng(seed, b).integers(0, n_days, size=n_days)
        out[b] = np.bincount(picks, minlength=n_days)
    return out


def argmax_first(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Argmax that ignores NaN and returns the earliest index on ties."""
    filled = np.where(np.isnan(values), -np.inf, values)
    return np.argmax(filled, axis=axis)
