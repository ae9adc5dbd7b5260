"""Frozen out-of-time transfer, rank stability, day bootstrap, response-gap sensitivity."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .auction_log import Panel
from .decision import bonferroni_z
from .errors import ConfigError, ContractError, InsufficientReplicatesError
from .numeric import argmax_first, day_resample_weights, stream_rng
from .policy_catalog import Catalog, QuantileSet
from .replay import ReplaySummary, policy_yields, replay_catalog

RANKINGS = ("full-replay", "lcb")
UNITS = ("day", "row")


# ------------------------------------------------------------ rank stability

def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either input is constant.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ConfigError("spearman needs at least 2 values")
    ra = pd.Series(a).rank(method="average").to_numpy()
    rb = pd.Series(b).rank(method="average").to_numpy()
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        return math.nan
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def top_k(lifts: Mapping[str, float], k: int) -> list[str]:
    """Top ``k`` ids by value; ties keep mapping (catalog) order."""
    ids = list(lifts)
    order = sorted(range(len(ids)), key=lambda i: (-lifts[ids[i]], i))
    return [ids[i] for i in order[:k]]


def topk_overlap(lifts_a: Mapping[str, float], lifts_b: Mapping[str, float], k: int) -> int:
    if not 1 <= k <= min(len(lifts_a), len(lifts_b)):
        raise ConfigError(f"k={k} outside 1..catalog size")
    return len(set(top_k(lifts_a, k)) & set(top_k(lifts_b, k)))


# ------------------------------------------------------------------ transfer

@dataclass(frozen=True)
class TransferReport:
    dev_lifts: dict[str, float]
    holdout_lifts: dict[str, float]
    spearman: float
    k: int
    overlap: int
    holdout_leader: str
    holdout_retained: dict[str, float]
    catalog_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "dev_lifts": self.dev_lifts,
            "holdout_lifts": self.holdout_lifts,
            "spearman": self.spearman,
            "topk": {"k": self.k, "overlap": self.overlap},
            "holdout_leader": self.holdout_leader,
            "holdout_retained": self.holdout_retained,
            "catalog_fingerprint": self.catalog_fingerprint,
        }


def frozen_transfer(catalog: Catalog, holdout: Panel, dev_summaries: Sequence[ReplaySummary],
                    k: int = 5, workers: int = 1) -> TransferReport:
    """Replay the unchanged catalog on a later panel and compare rankings.

    Raises
    ------
    ContractError
        If the catalog carries quantile anchors that are not frozen, or if
        the catalog changed during the replay.
    """
    if catalog.quantiles is not None and not catalog.quantiles.frozen:
        raise ContractError("transfer requires frozen quantile anchors; refusing to refit")
    before = catalog.fingerprint()
    hold = replay_catalog(holdout, catalog, workers=workers)
    if catalog.fingerprint() != before:
        raise ContractError("catalog changed during transfer replay")
    dev = {s.policy_id: s.lift for s in dev_summaries if not s.is_baseline}
    hold_lifts = {s.policy_id: s.lift for s in hold if not s.is_baseline and s.policy_id in dev}
    dev = {pid: dev[pid] for pid in hold_lifts}
    k = min(k, len(dev))
    return TransferReport(
        dev_lifts=dev,
        holdout_lifts=hold_lifts,
        spearman=spearman(list(dev.values()), list(hold_lifts.values())) if len(dev) > 1 else math.nan,
        k=k,
        overlap=topk_overlap(dev, hold_lifts, k),
        holdout_leader=top_k(hold_lifts, 1)[0],
        holdout_retained={s.policy_id: s.retained_share for s in hold if s.policy_id in dev},
        catalog_fingerprint=before,
    )


# ----------------------------------------------------------------- bootstrap

@dataclass(frozen=True)
class BootstrapResult:
    frequencies: dict[str, float]
    winners: tuple[str, ...]
    draws: int
    seed: int
    ranking: str
    unit: str

    def to_dict(self) -> dict:
        return {"frequencies": self.frequencies, "draws": self.draws, "seed": self.seed,
                "ranking": self.ranking, "unit": self.unit}


def _draw_stats(day_y, day_base, weights, ranking, z, lam, day_ret=None, day_fills=None):
    """Per-draw ranking statistic, shape ``(draws, policies)``.

    ``day_y`` is ``(policies, days)``; ``weights`` is ``(draws, days)``.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        lift = (weights @ day_y.T) / (weights @ day_base)[:, None] - 1.0
        if ranking == "full-replay":
            return lift
        daily = day_y / day_base - 1.0                  # (P, D), NaN on empty days
        valid = ~np.isnan(daily)
        w_eff = weights[:, None, :] * valid[None, :, :]  # (B, P, D)
        d_clean = np.where(valid, daily, 0.0)
        cnt = w_eff.sum(axis=2)
        mean = (w_eff * d_clean).sum(axis=2) / cnt
        var = (w_eff * (d_clean[None] - mean[..., None]) ** 2).sum(axis=2) / (cnt - 1)
        se = np.sqrt(var / cnt)
        stat = lift - z * se
        if lam and day_ret is not None:
            share = (weights @ day_ret.T) / (weights @ day_fills)[:, None]
            stat = stat - lam * (1.0 - share)
        return stat


def _frequencies(ids: Sequence[str], stats: np.ndarray) -> tuple[dict[str, float], tuple[str, ...]]:
    win = argmax_first(stats, axis=1)
    counts = np.bincount(win, minlength=len(ids))
    draws = stats.shape[0]
    return ({pid: counts[i] / draws for i, pid in enumerate(ids)},
            tuple(ids[i] for i in win))


def bootstrap_winner_frequencies(ids: Sequence[str], day_yield: np.ndarray,
                                 day_base: np.ndarray, draws: int, seed: int) -> dict[str, float]:
    """Winner frequencies of the pooled lift when days are resampled.

    ``day_yield`` holds per-policy daily yield totals, shape ``(policies, days)``.
    """
    day_yield = np.atleast_2d(np.asarray(day_yield, dtype=float))
    weights = day_resample_weights(seed, draws, day_yield.shape[1]).astype(float)
    stats = _draw_stats(day_yield, np.asarray(day_base, dtype=float), weights, "full-replay", 0, 0)
    return _frequencies(list(ids), stats)[0]


def day_bootstrap(summaries: Sequence[ReplaySummary], draws: int = 1000, seed: int = 0,
                  ranking: str = "full-replay", alpha: float = 0.05,
                  lam: float = 1.0) -> BootstrapResult:
    """Resample days with replacement and count how often each policy wins.

    ``ranking="full-replay"`` ranks by pooled lift; ``"lcb"`` ranks by the
    support-adjusted simultaneous lower bound recomputed on each draw. Draw
    ``b`` uses the stream ``stream_rng(seed, b)``.
    """
    if ranking not in RANKINGS:
        raise ConfigError(f"ranking must be one of {RANKINGS}")
    if draws < 1:
        raise ConfigError("draws must be >= 1")
    cands = [s for s in summaries if not s.is_baseline]
    if not cands:
        raise ConfigError("no candidate policies to bootstrap")
    n_days = len(cands[0].day_yield)
    if n_days < 2:
        raise InsufficientReplicatesError("day bootstrap needs at least 2 days")
    day_y = np.array([s.day_yield for s in cands], dtype=float)
    day_base = np.asarray(cands[0].day_base_yield, dtype=float)
    day_ret = np.array([s.day_retained for s in cands], dtype=float)
    day_fills = np.asarray(cands[0].day_fills, dtype=float)
    weights = day_resample_weights(seed, draws, n_days).astype(float)
    z = bonferroni_z(alpha, len(summaries))
    stats = _draw_stats(day_y, day_base, weights, ranking, z, lam, day_ret, day_fills)
    freq, winners = _frequencies([s.policy_id for s in cands], stats)
    return BootstrapResult(freq, winners, draws, seed, ranking, "day")


def row_bootstrap(panel: Panel, catalog: Catalog, quantiles: QuantileSet | None,
                  draws: int = 200, seed: int = 0, ranking: str = "full-replay",
                  alpha: float = 0.05, lam: float = 1.0) -> BootstrapResult:
    """Row-level alternative to :func:`day_bootstrap` (rows resampled within the panel).

    Cost grows with ``draws * rows``; intended for modest panels.
    """
    if ranking not in RANKINGS:
        raise ConfigError(f"ranking must be one of {RANKINGS}")
    n_days = len(panel.days)
    codes = panel.day_codes
    ys = [policy_yields(panel, p, quantiles) for p in catalog.policies]
    y = [v.as_float() for v in ys]
    z = bonferroni_z(alpha, len(catalog))
    ids = [p.id for p in catalog.candidates]
    stats = np.empty((draws, len(ids)))
    ones = np.ones((1, n_days))
    for b in range(draws):
        w = np.bincount(stream_rng(seed, b).integers(0, panel.n, panel.n), minlength=panel.n)
        day_tot = np.array([np.bincount(codes, weights=w * yi, minlength=n_days) for yi in y])
        ret = np.array([np.bincount(codes, weights=w * v.retained, minlength=n_days)
                        for v in ys[1:]])
        fills = np.bincount(codes, weights=w * panel.filled, minlength=n_days)
        stats[b] = _draw_stats(day_tot[1:], day_tot[0], ones, ranking, z, lam, ret, fills)[0]
    freq, winners = _frequencies(ids, stats)
    return BootstrapResult(freq, winners, draws, seed, ranking, "row")


def write_bootstrap_draws(result: BootstrapResult, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["draw", "winner"])
        for i, pid in enumerate(result.winners):
            w.writerow([i, pid])


# -------------------------------------------------------------- response gap

@dataclass(frozen=True)
class ResponseGapAssessment:
    margin: float
    threshold: float
    interpretation: str

    def preserved(self, pairwise_gap: float) -> bool:
        """True iff a normalized pairwise response gap keeps the ranking."""
        return abs(pairwise_gap) < self.threshold

    def to_dict(self) -> dict:
        return {"margin": self.margin, "threshold": self.threshold,
                "interpretation": self.interpretation}


def response_gap_threshold(leader_lift: float, runner_up_lift: float) -> ResponseGapAssessment:
    """Largest pairwise response gap that cannot flip the leader, split symmetrically.

    This is a planning diagnostic: the replay margin says nothing about the
    size of the live response gap itself.
    """
    if leader_lift < runner_up_lift:
        raise ConfigError("leader lift must be >= runner-up lift")
    margin = leader_lift - runner_up_lift
    threshold = margin / 2
    return ResponseGapAssessment(
        margin, threshold,
        f"planning diagnostic: ranking preserved iff |pairwise response gap| / mu0 < {threshold:.6g}")

