"""Per-segment lower bounds and the uniform non-harm certificate."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .auction_log import Panel, SegmentGrid, SegmentKey
from .decision import bonferroni_z, normal_quantile
from .errors import ConfigError
from .numeric import sample_sd
from .policy_catalog import Policy, QuantileSet
from .replay import ReplaySummary, SegmentLift, replay_policy


@dataclass(frozen=True)
class SegmentBound:
    key: SegmentKey
    n: int
    lift: float
    se: float
    lcb: float
    lcb_unadjusted: float
    active_days: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["key"] = str(self.key)
        return d


@dataclass(frozen=True)
class SegmentBoundSet:
    policy_id: str
    alpha: float
    z_crit: float
    bounds: tuple[SegmentBound, ...]
    uncovered: dict[SegmentKey, str]

    @property
    def K(self) -> int:
        return len(self.bounds)

    @property
    def lcbs(self) -> list[float]:
        return [b.lcb for b in self.bounds]


def bounds_from_segment_lifts(policy_id: str, lifts: Mapping[SegmentKey, SegmentLift],
                              alpha: float = 0.05, uncovered: Mapping[SegmentKey, str] | None = None,
                              family_size: int | None = None) -> SegmentBoundSet:
    """Bonferroni lower bounds from segment-local daily lifts.

    Segments with fewer than two days of defined daily lift move to
    ``uncovered`` with a reason; ``z`` is ``z_{1-alpha/(2K)}`` over the
    remaining ``K`` segments unless ``family_size`` overrides ``K``.
    """
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    uncovered = dict(uncovered or {})
    usable = []
    for key in sorted(lifts):
        seg = lifts[key]
        daily = np.array([v for v in seg.daily_lifts.values() if not math.isnan(v)])
        if math.isnan(seg.lift):
            uncovered[key] = "baseline yield is zero in segment"
        elif daily.size < 2:
            uncovered[key] = f"{daily.size} active day(s); need at least 2"
        else:
            usable.append((key, seg, daily))
    K = family_size or len(usable)
    z = bonferroni_z(alpha, K) if K else math.nan
    z1 = normal_quantile(1 - alpha / 2)
    out = []
    for key, seg, daily in usable:
        se = sample_sd(daily) / math.sqrt(daily.size)
        out.append(SegmentBound(key, seg.n, seg.lift, se, seg.lift - z * se, seg.lift - z1 * se,
                                int(daily.size)))
    return SegmentBoundSet(policy_id, alpha, z, tuple(out), uncovered)


def segment_bounds(panel: Panel, policy: Policy, quantiles: QuantileSet | None,
                   segments: SegmentGrid, alpha: float = 0.05,
                   family_size: int | None = None) -> SegmentBoundSet:
    """Replay ``policy`` segment by segment and bound every segment lift."""
    summary = replay_policy(panel, policy, quantiles, segments=segments)
    return bounds_from_summary(summary, segments, alpha, family_size)


def bounds_from_summary(summary: ReplaySummary, segments: SegmentGrid, alpha: float = 0.05,
                        family_size: int | None = None) -> SegmentBoundSet:
    small = {k: f"{idx.size} rows; below min_rows={segments.min_rows}"
             for k, idx in segments.uncovered.items()}
    return bounds_from_segment_lifts(summary.policy_id, summary.segment_lifts or {}, alpha,
                                     small, family_size)


@dataclass(frozen=True)
class SegmentCertificate:
    policy_id: str
    alpha: float
    K: int
    segments: tuple[SegmentBound, ...]
    eta: float
    L_s: float
    cover_radius: float
    certified: bool
    uniform_margin: float
    uncovered: dict[SegmentKey, str]
    n_nonnegative: int
    reason: str

    def to_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "alpha": self.alpha,
            "K": self.K,
            "eta": self.eta,
            "L_s": self.L_s,
            "cover_radius": self.cover_radius,
            "certified": self.certified,
            "uniform_margin": self.uniform_margin,
            "n_nonnegative": self.n_nonnegative,
            "reason": self.reason,
            "segments": [s.to_dict() for s in self.segments],
            "uncovered": {str(k): v for k, v in sorted(self.uncovered.items())},
        }


def nonharm_certificate(lcbs: Sequence[float] | SegmentBoundSet, L_s: float = 0.0,
                        cover_radius: float = 0.0, policy_id: str = "",
                        alpha: float = math.nan) -> SegmentCertificate:
    """Certify that no segment is harmed: ``min lcb > L_s * cover_radius``.

    Accepts raw lower bounds or a :class:`SegmentBoundSet`. An empty covered
    set is never certified. Segments with a lower bound of exactly zero
    count as nonnegative but do not certify.
    """
    if L_s < 0 or cover_radius < 0:
        raise ConfigError("L_s and cover_radius must be >= 0")
    segments: tuple[SegmentBound, ...] = ()
    uncovered: dict = {}
    if isinstance(lcbs, SegmentBoundSet):
        segments, uncovered = lcbs.bounds, lcbs.uncovered
        policy_id, alpha = lcbs.policy_id, lcbs.alpha
        lcbs = lcbs.lcbs
    lcbs = [float(x) for x in lcbs]
    slack = L_s * cover_radius
    if not lcbs:
        return SegmentCertificate(policy_id, alpha, 0, segments, math.nan, L_s, cover_radius,
                                  False, math.nan, uncovered, 0, "insufficient coverage")
    eta = min(lcbs)
    certified = eta > slack
    if certified:
        reason = "certified"
    elif eta == slack:
        reason = "boundary, not certified"
    else:
        reason = "lower bound below Lipschitz margin"
    return SegmentCertificate(policy_id, alpha, len(lcbs), segments, eta, L_s, cover_radius,
                              certified, eta - slack, uncovered,
                              sum(1 for x in lcbs if x >= 0), reason)


def coverage_sensitivity(lcbs: Sequence[float], L_s: float,
                         radius_grid: Sequence[float]) -> dict[float, int]:
    """Segments still clearing ``L_s * radius`` at each cover radius."""
    grid = [float(r) for r in radius_grid]
    if any(r < 0 for r in grid) or grid != sorted(grid):
        raise ConfigError("radius grid must be nonnegative and ascending")
    arr = np.asarray(lcbs, dtype=float)
    return {r: int(np.count_nonzero(arr > L_s * r)) for r in grid}


def required_segment_sample(A: float, K: int, alpha: float, eta: float, L_s: float = 0.0,
                            cover_radius: float = 0.0) -> float:
    """Rows needed in the smallest segment: ``A^2 ln(K/alpha) / (eta + L_s*radius)^2``.

    The constant factor is taken as 1. A zero denominator returns ``inf``.
    """
    if A <= 0 or K < 1 or not 0 < alpha < 1:
        raise ConfigError("need A > 0, K >= 1 and 0 < alpha < 1")
    gap = eta + L_s * cover_radius
    if gap < 0:
        raise ConfigError("eta + L_s * cover_radius must be nonnegative")
    if gap == 0:
        return math.inf
    return A * A * math.log(K / alpha) / (gap * gap)


def write_segments(certs: Sequence[SegmentCertificate], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "segment", "status", "n", "lift", "se", "lcb",
                    "lcb_unadjusted", "active_days"])
        for c in certs:
            for s in c.segments:
                w.writerow([c.policy_id, str(s.key), "covered", s.n, repr(s.lift), repr(s.se),
                            repr(s.lcb), repr(s.lcb_unadjusted), s.active_days])
            for key, reason in sorted(c.uncovered.items()):
                w.writerow([c.policy_id, str(key), f"uncovered: {reason}", "", "", "", "", "", ""])
