"""Fixed-bid replay: per-row counterfactual yield, lifts, retention, daily and segment lifts.

A logged fill is kept under a candidate floor when the logged bid clears
it, and then pays ``max(payment, candidate_floor)``. Everything else yields
zero. Yields are exact rationals ``num/den``; totals are exact integer sums,
so results do not depend on worker count or row partitioning.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .auction_log import AuctionRow, Panel, SegmentGrid, SegmentKey
from .errors import ConfigError, UndefinedLiftError
from .numeric import PARTITION_ROWS, exact_sum, grouped_exact_sums
from .policy_catalog import Catalog, Policy, QuantileSet, candidate_floors

NAN = float("nan")
DAILY_BASELINES = ("day-local", "global")


def replay_row(row: AuctionRow, candidate) -> Fraction:
    """Replay yield of one row under ``candidate`` floor."""
    if row.filled and row.bid >= candidate:
        return max(Fraction(row.payment), Fraction(candidate))
    return Fraction(0)


@dataclass(frozen=True, eq=False)
class PolicyYields:
    """Per-row replay yields ``num / den`` and the retention mask."""

    policy_id: str
    num: np.ndarray
    den: int
    retained: np.ndarray
    floor_num: np.ndarray

    def as_float(self) -> np.ndarray:
        return self.num / self.den


def _yield_chunk(policy, quantiles, floor, bid, payment, filled):
    fnum, den = candidate_floors(policy, floor, bid, quantiles)
    retained = filled & (bid * den >= fnum)
    num = np.where(retained, np.maximum(payment * den, fnum), 0)
    return num, den, retained, fnum


def policy_yields(panel: Panel, policy: Policy, quantiles: QuantileSet | None,
                  partition_rows: int = PARTITION_ROWS) -> PolicyYields:
    parts = []
    den = 1
    for lo in range(0, panel.n, partition_rows):
        sl = slice(lo, lo + partition_rows)
        num, den, ret, fnum = _yield_chunk(policy, quantiles, panel.floor[sl], panel.bid[sl],
                                           panel.payment[sl], panel.filled[sl])
        parts.append((num, ret, fnum))
    return PolicyYields(policy.id, np.concatenate([p[0] for p in parts]), den,
                        np.concatenate([p[1] for p in parts]),
                        np.concatenate([p[2] for p in parts]))


@dataclass(frozen=True)
class SegmentLift:
    lift: float
    daily_lifts: dict[str, float]
    n: int
    mean_yield: float
    base_mean_yield: float


@dataclass(frozen=True)
class ReplaySummary:
    policy_id: str
    mean_yield: float
    lift: float
    retained_share: float
    daily_lifts: dict[str, float]
    n: int
    retained: int
    fills: int
    is_baseline: bool = False
    day_yield: tuple[float, ...] = ()
    day_base_yield: tuple[float, ...] = ()
    day_rows: tuple[int, ...] = ()
    day_retained: tuple[int, ...] = ()
    day_fills: tuple[int, ...] = ()
    segment_lifts: dict[SegmentKey, SegmentLift] | None = None

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "segment_lifts"}
        d["daily_lifts"] = dict(self.daily_lifts)
        d["segment_lifts"] = None
        if self.segment_lifts is not None:
            d["segment_lifts"] = {str(k): asdict(v) for k, v in self.segment_lifts.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReplaySummary":
        d = dict(d)
        for key in ("day_yield", "day_base_yield", "day_rows", "day_retained", "day_fills"):
            d[key] = tuple(d.get(key, ()))
        if d.get("segment_lifts") is not None:
            d["segment_lifts"] = {SegmentKey.parse(k): SegmentLift(**v)
                                  for k, v in d["segment_lifts"].items()}
        return cls(**d)


class _Baseline:
    """Logged-baseline totals shared by every policy replayed on one panel."""

    def __init__(self, panel: Panel, partition_rows: int):
        self.panel = panel
        base = policy_yields(panel, Policy("__base__", "baseline"), None, partition_rows)
        self.num = base.num
        self.day_totals = grouped_exact_sums(base.num, panel.day_codes, len(panel.days),
                                             panel.day_order)
        self.total = sum(self.day_totals)
        self.fills = int(panel.filled.sum())
        self.day_fills = np.bincount(panel.day_codes[panel.filled], minlength=len(panel.days))
        self._layouts: dict[SegmentKey, _DayLayout] = {}
        self._segments: dict[SegmentKey, tuple[int, dict[int, int]]] = {}
        if self.total <= 0:
            raise UndefinedLiftError("baseline mean yield is zero; replay lift is undefined")

    def layout(self, key: SegmentKey, idx: np.ndarray) -> "_DayLayout":
        if key not in self._layouts:
            self._layouts[key] = _DayLayout(idx, self.panel.day_codes[idx])
        return self._layouts[key]

    def segment(self, key: SegmentKey, idx: np.ndarray) -> tuple[int, dict[int, int]]:
        if key not in self._segments:
            self._segments[key] = self.layout(key, idx).sums(self.num)
        return self._segments[key]


class _DayLayout:
    """Row subset grouped by day, sorted once and reused for every policy."""

    def __init__(self, idx: np.ndarray, codes: np.ndarray):
        self.present = np.unique(codes)
        order = np.argsort(codes, kind="stable")
        self.rows = idx[order]
        self.bounds = np.searchsorted(codes[order], self.present)
        self.bounds = np.append(self.bounds, idx.size)

    def sums(self, values: np.ndarray) -> tuple[int, dict[int, int]]:
        vals = values[self.rows]
        out = {int(d): exact_sum(vals[self.bounds[g]:self.bounds[g + 1]])
               for g, d in enumerate(self.present)}
        return sum(out.values()), out


def _lift(num_total: int, den: int, base_total: int) -> float:
    if base_total == 0:
        return NAN
    return float(Fraction(num_total, den * base_total) - 1)


def _summarize(panel: Panel, policy: Policy, ys: PolicyYields, base: _Baseline,
               segments: SegmentGrid | None, daily_baseline: str) -> ReplaySummary:
    if daily_baseline not in DAILY_BASELINES:
        raise ConfigError(f"daily_baseline must be one of {DAILY_BASELINES}")
    n_days = len(panel.days)
    day_tot = grouped_exact_sums(ys.num, panel.day_codes, n_days, panel.day_order)
    total = sum(day_tot)
    rows_d = panel.rows_per_day
    daily = {}
    for d, label in enumerate(panel.days):
        if daily_baseline == "day-local":
            daily[label] = _lift(day_tot[d], ys.den, base.day_totals[d])
        else:
            daily[label] = float(Fraction(day_tot[d] * panel.n,
                                          ys.den * int(rows_d[d]) * base.total) - 1)
    day_retained = np.bincount(panel.day_codes[ys.retained], minlength=n_days)
    retained = int(ys.retained.sum())
    seg_out = None
    if segments is not None:
        seg_out = {}
        for key, idx in segments.covered.items():
            seg_total, seg_days = base.layout(key, idx).sums(ys.num)
            b_total, b_days = base.segment(key, idx)
            seg_out[key] = SegmentLift(
                lift=_lift(seg_total, ys.den, b_total),
                daily_lifts={panel.days[d]: _lift(seg_days[d], ys.den, b_days[d]) for d in seg_days},
                n=int(idx.size),
                mean_yield=float(Fraction(seg_total, ys.den * int(idx.size))),
                base_mean_yield=float(Fraction(b_total, int(idx.size))),
            )
    return ReplaySummary(
        policy_id=policy.id,
        mean_yield=float(Fraction(total, ys.den * panel.n)),
        lift=0.0 if policy.is_baseline else _lift(total, ys.den, base.total),
        retained_share=retained / base.fills,
        daily_lifts=daily,
        n=panel.n,
        retained=retained,
        fills=base.fills,
        is_baseline=policy.is_baseline,
        day_yield=tuple(float(Fraction(t, ys.den)) for t in day_tot),
        day_base_yield=tuple(float(t) for t in base.day_totals),
        day_rows=tuple(int(r) for r in rows_d),
        day_retained=tuple(int(r) for r in day_retained),
        day_fills=tuple(int(r) for r in base.day_fills),
        segment_lifts=seg_out,
    )


def replay_policy(panel: Panel, policy: Policy, quantiles: QuantileSet | None,
                  segments: SegmentGrid | None = None, daily_baseline: str = "day-local",
                  partition_rows: int = PARTITION_ROWS) -> ReplaySummary:
    """Replay one policy on ``panel``.

    Raises
    ------
    UndefinedLiftError
        If the logged baseline yields nothing on the panel.
    """
    base = _Baseline(panel, partition_rows)
    ys = policy_yields(panel, policy, quantiles, partition_rows)
    return _summarize(panel, policy, ys, base, segments, daily_baseline)


def replay_catalog(panel: Panel, catalog: Catalog, segments: SegmentGrid | None = None,
                   workers: int = 1, daily_baseline: str = "day-local",
                   partition_rows: int = PARTITION_ROWS) -> list[ReplaySummary]:
    """Replay every catalog policy, baseline first.

    Policies are spread over ``workers`` threads; every reduction is exact,
    so output is identical for any worker count.
    """
    base = _Baseline(panel, partition_rows)
    if segments is not None:
        for key, idx in segments.covered.items():
            base.segment(key, idx)

    def run(policy: Policy) -> ReplaySummary:
        ys = policy_yields(panel, policy, catalog.quantiles, partition_rows)
        return _summarize(panel, policy, ys, base, segments, daily_baseline)

    if workers <= 1:
        return [run(p) for p in catalog.policies]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, catalog.policies))


def baseline_mean_yield(panel: Panel) -> Fraction:
    base = policy_yields(panel, Policy("__base__", "baseline"), None)
    return Fraction(exact_sum(base.num), panel.n)


def write_replay_table(summaries: Sequence[ReplaySummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "lift", "mean_yield", "retained_share", "day", "daily_lift"])
        for s in summaries:
            for day, dl in s.daily_lifts.items():
                w.writerow([s.policy_id, repr(s.lift), repr(s.mean_yield),
                            repr(s.retained_share), day, repr(dl)])


def write_segment_table(summaries: Sequence[ReplaySummary], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "segment", "n", "lift", "day", "daily_lift"])
        for s in summaries:
            for key, seg in (s.segment_lifts or {}).items():
                for day, dl in seg.daily_lifts.items():
                    w.writerow([s.policy_id, str(key), seg.n, repr(seg.lift), day, repr(dl)])
