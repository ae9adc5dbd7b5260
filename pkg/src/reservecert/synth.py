"""Seeded synthetic auction logs and a brute-force ground-truth lift oracle.

Generation is split into fixed-size partitions, each drawn from its own
counter-based stream ``(seed, stream, partition)``, so output does not
depend on how partitions are scheduled. Stream 0 is the development panel,
1 the oracle population, 2 a holdout, 3 a quantile reference sample.

The oracle does not share code with the replay engine: it works in a fixed
micro-unit scale (1e6 per money unit) with its own per-family rules.
"""
from __future__ import annotations

import datetime as dt
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .auction_log import Panel, SegmentKey
from .errors import ConfigError, UndefinedLiftError
from .numeric import stream_rng

PARTITION = 1 << 16
START_DATE = dt.date(2013, 6, 6)
STREAMS = {"panel": 0, "oracle": 1, "holdout": 2, "reference": 3}
MICRO = 10 ** 6


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameters of the synthetic log.

    Floors are 0 with probability ``zero_floor_prob`` and otherwise
    ``max(1, round(lognormal))``. The bid sits ``round(lognormal) - gap_offset``
    above the floor (negative gaps give bids under the floor, which never
    fill). Fill probability is logistic in the gap; payment is the floor plus
    ``payment_fraction`` of the gap.
    """

    seed: int = 0
    n_rows: int = 100_000
    n_days: int = 28
    n_advertisers: int = 6
    n_exchanges: int = 3
    n_regions: int = 8
    n_categories: int = 4
    zero_floor_prob: float = 0.35
    floor_log_loc: float = 4.0
    floor_log_scale: float = 0.6
    gap_log_loc: float = 4.3
    gap_log_scale: float = 0.9
    gap_offset: int = 15
    fill_slope: float = 0.08
    fill_center: float = 10.0
    payment_fraction: float = 0.1
    advertiser_floor_shift: float = 0.0

    def __post_init__(self):
        if self.n_rows < 1:
            raise ConfigError("n_rows must be >= 1")
        if self.n_days < 2:
            raise ConfigError("n_days must be >= 2")
        if min(self.n_advertisers, self.n_exchanges, self.n_regions, self.n_categories) < 1:
            raise ConfigError("segment cardinalities must be >= 1")
        for name in ("zero_floor_prob", "payment_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.floor_log_scale <= 0 or self.gap_log_scale <= 0:
            raise ConfigError("log-scales must be positive")
        if self.fill_slope < 0:
            raise ConfigError("fill_slope must be >= 0")

    def replace(self, **changes) -> "GeneratorConfig":
        return GeneratorConfig(**{**asdict(self), **changes})

    @classmethod
    def from_mapping(cls, d: Mapping) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth parameters: {sorted(unknown)}")
        return cls(**dict(d))

    def to_dict(self) -> dict:
        return asdict(self)


def day_labels(n_days: int, offset: int = 0) -> list[str]:
    return [(START_DATE + dt.timedelta(days=offset + d)).isoformat() for d in range(n_days)]


def fill_probability(gap: np.ndarray, slope: float, center: float) -> np.ndarray:
    gap = np.asarray(gap, dtype=float)
    if math.isinf(slope):
        p = (gap >= center).astype(float)
    else:
        p = 0.5 * (1.0 + np.tanh(0.5 * slope * (gap - center)))
    return np.where(gap >= 0, p, 0.0)


def _partition(config: GeneratorConfig, stream: int, k: int, n_total: int) -> dict[str, np.ndarray]:
    lo = k * PARTITION
    m = min(PARTITION, n_total - lo)
    rng = stream_rng(config.seed, stream, k)
    adv = rng.integers(0, config.n_advertisers, m)
    exch = rng.integers(0, config.n_exchanges, m)
    region = rng.integers(0, config.n_regions, m)
    cat = rng.integers(0, config.n_categories, m)
    zero = rng.random(m) < config.zero_floor_prob
    loc = config.floor_log_loc + config.advertiser_floor_shift * adv
    pos = np.maximum(1, np.rint(np.exp(loc + config.floor_log_scale * rng.standard_normal(m))))
    floor = np.where(zero, 0, pos).astype(np.int64)
    over = np.rint(np.exp(config.gap_log_loc + config.gap_log_scale * rng.standard_normal(m)))
    bid = np.maximum(0, floor + over.astype(np.int64) - config.gap_offset)
    gap = bid - floor
    filled = rng.random(m) < fill_probability(gap, config.fill_slope, config.fill_center)
    payment = np.where(filled, floor + np.floor(config.payment_fraction * gap).astype(np.int64), 0)
    return {"day": (lo + np.arange(m)) % config.n_days, "advertiser": adv, "exchange": exch,
            "region": region, "category": cat, "floor": floor, "bid": bid,
            "payment": payment.astype(np.int64), "filled": filled}


def _labels(prefix: str, codes: np.ndarray, width: int = 2) -> np.ndarray:
    names = np.array([f"{prefix}{i + 1:0{width}d}" for i in range(int(codes.max()) + 1)])
    return names[codes]


def generate_log(config: GeneratorConfig, stream: int | str = "panel", n_rows: int | None = None,
                 day_offset: int = 0, workers: int = 1) -> Panel:
    """Draw a panel from ``config``. Same config and stream give the same panel.

    ``day_offset`` shifts the calendar, e.g. to place a holdout after the
    development period.
    """
    stream = STREAMS[stream] if isinstance(stream, str) else int(stream)
    n = config.n_rows if n_rows is None else int(n_rows)
    n_parts = -(-n // PARTITION)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda k: _partition(config, stream, k, n), range(n_parts)))
    else:
        parts = [_partition(config, stream, k, n) for k in range(n_parts)]
    cols = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    days = np.array(day_labels(config.n_days, day_offset))
    return Panel.from_columns(
        day=days[cols["day"]],
        advertiser=_labels("adv", cols["advertiser"]),
        exchange=_labels("ex", cols["exchange"]),
        region=_labels("r", cols["region"]),
        category=_labels("cat", cols["category"]),
        floor=cols["floor"], bid=cols["bid"], payment=cols["payment"], filled=cols["filled"],
        source=f"synth:seed={config.seed}:stream={stream}",
    )


def generate_holdout(config: GeneratorConfig, n_rows: int | None = None) -> Panel:
    return generate_log(config, "holdout", n_rows, day_offset=config.n_days)


# ------------------------------------------------------------------- oracle

def _micro(value) -> int:
    x = Fraction(str(value)) * MICRO
    if x.denominator != 1:
        raise ConfigError(f"value {value} is not representable in micro-units")
    return int(x)


def oracle_yield(policy, floor: np.ndarray, bid: np.ndarray, payment: np.ndarray,
                 filled: np.ndarray, quantiles) -> np.ndarray:
    """Per-row counterfactual yield in micro-units, written from the rule definitions."""
    f = floor.astype(np.int64) * MICRO
    b = bid.astype(np.int64) * MICRO
    p = payment.astype(np.int64) * MICRO
    fam = policy.family
    if fam == "baseline":
        new = f
    elif fam == "uniform-percent":
        new = floor.astype(np.int64) * _micro(policy.multiplier)
    elif fam == "absolute-increment":
        new = f + _micro(policy.increment)
    else:
        gated = np.ones(floor.shape, dtype=bool)
        if policy.gap_threshold is not None:
            gated = (b - f) >= _micro(policy.gap_threshold)
        if fam == "margin-gated-increment":
            new = np.where(gated, f + _micro(policy.increment), f)
        else:
            anchor = _micro(getattr(quantiles, policy.quantile))
            raised = np.where(f < anchor, anchor, f)
            if fam == "positive-floor-quantile":
                raised = np.where(floor > 0, raised, f)
            new = np.where(gated, raised, f)
    keep = filled & (b >= new)
    return np.where(keep, np.where(p > new, p, new), 0)


def oracle_panel_lift(panel: Panel, policy, quantiles) -> float:
    """Brute-force lift on an existing panel (exact micro-unit integer sums)."""
    y = oracle_yield(policy, panel.floor, panel.bid, panel.payment, panel.filled, quantiles)
    y0 = np.where(panel.filled, panel.payment.astype(np.int64) * MICRO, 0)
    tot0 = sum(int(v) for v in y0.tolist())
    if tot0 <= 0:
        raise UndefinedLiftError("baseline yield is zero")
    return float(Fraction(sum(int(v) for v in y.tolist()), tot0) - 1)


@dataclass(frozen=True)
class OracleLift:
    policy_id: str
    lift: float
    se: float
    n: int


def _segment_mask(cols: Mapping[str, np.ndarray], segment: SegmentKey | None) -> np.ndarray | None:
    if segment is None:
        return None
    prefixes = {"advertiser": "adv", "exchange": "ex", "region": "r", "category": "cat"}
    if segment.dimension not in prefixes:
        raise ConfigError(f"oracle segments support {sorted(prefixes)}")
    code = int(segment.value[len(prefixes[segment.dimension]):]) - 1
    return cols[segment.dimension] == code


def true_lifts(config: GeneratorConfig, policies: Sequence, quantiles, n_oracle: int = 10 ** 7,
               segment: SegmentKey | None = None) -> dict[str, OracleLift]:
    """Population lifts from a fresh ``n_oracle``-row draw (oracle stream).

    Standard errors use the delta method for a ratio of means. Moments are
    accumulated partition by partition, so memory stays bounded.
    """
    n_parts = -(-n_oracle // PARTITION)
    k_pol = len(policies)
    s1 = np.zeros(k_pol + 1)
    s_sq = np.zeros(k_pol + 1)
    s_x0 = np.zeros(k_pol + 1)
    exact = [0] * (k_pol + 1)
    n_used = 0
    for k in range(n_parts):
        cols = _partition(config, STREAMS["oracle"], k, n_oracle)
        mask = _segment_mask(cols, segment)
        if mask is not None:
            cols = {key: v[mask] for key, v in cols.items()}
        if cols["floor"].size == 0:
            continue
        y0 = np.where(cols["filled"], cols["payment"] * MICRO, 0)
        ys = [y0] + [oracle_yield(p, cols["floor"], cols["bid"], cols["payment"], cols["filled"],
                                  quantiles) for p in policies]
        for j, y in enumerate(ys):
            exact[j] += int(y.sum())
            yf = y.astype(float) / MICRO
            s1[j] += yf.sum()
            s_sq[j] += (yf * yf).sum()
            s_x0[j] += (yf * (y0.astype(float) / MICRO)).sum()
        n_used += cols["floor"].size
    if exact[0] <= 0:
        raise UndefinedLiftError("oracle baseline mean yield is not positive")
    out = {}
    m0 = s1[0] / n_used
    v0 = s_sq[0] / n_used - m0 * m0
    for j, policy in enumerate(policies, start=1):
        lift = float(Fraction(exact[j], exact[0]) - 1)
        m = s1[j] / n_used
        r = m / m0
        v = s_sq[j] / n_used - m * m
        cov = s_x0[j] / n_used - m * m0
        var = max(v - 2 * r * cov + r * r * v0, 0.0) / (n_used * m0 * m0)
        out[policy.id] = OracleLift(policy.id, lift, math.sqrt(var), n_used)
    return out


def true_lift_oracle(config: GeneratorConfig, policy, quantiles,
                     n_oracle: int = 10 ** 7) -> tuple[float, float]:
    """``(lift, standard error)`` of one policy on the oracle population."""
    if policy.family == "baseline":
        return 0.0, 0.0
    res = true_lifts(config, [policy], quantiles, n_oracle)[policy.id]
    return res.lift, res.se
