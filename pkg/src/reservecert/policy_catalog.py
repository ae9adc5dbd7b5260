"""Finite reserve-policy catalog, frozen quantile anchors, and candidate floors.

Candidate floors are exact rationals. The vectorized path returns integer
numerators over one denominator per policy so retention ``bid >= floor`` is
decided without floating-point rounding.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .auction_log import AuctionRow, Panel
from .errors import CatalogError, FitError
from .numeric import as_fraction

QUANTILE_LEVELS = {"q25": Fraction(1, 4), "q50": Fraction(1, 2), "q75": Fraction(3, 4)}


@dataclass(frozen=True)
class QuantileSet:
    q25: Fraction
    q50: Fraction
    q75: Fraction
    source_panel_id: str = ""
    frozen: bool = True
    method: str = "linear"

    def __post_init__(self):
        for name in QUANTILE_LEVELS:
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        if not (0 <= self.q25 <= self.q50 <= self.q75):
            raise FitError("quantiles must satisfy 0 <= q25 <= q50 <= q75")

    def value(self, name: str) -> Fraction:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"q25": str(self.q25), "q50": str(self.q50), "q75": str(self.q75),
                "q25_float": float(self.q25), "q50_float": float(self.q50),
                "q75_float": float(self.q75), "source_panel_id": self.source_panel_id,
                "frozen": self.frozen, "method": self.method}

    @classmethod
    def from_dict(cls, d: Mapping) -> "QuantileSet":
        return cls(Fraction(d["q25"]), Fraction(d["q50"]), Fraction(d["q75"]),
                   d.get("source_panel_id", ""), bool(d.get("frozen", True)),
                   d.get("method", "linear"))


def _interpolated(sorted_vals: np.ndarray, level: Fraction) -> Fraction:
    pos = level * (len(sorted_vals) - 1)
    lo = math.floor(pos)
    frac = pos - lo
    base = Fraction(int(sorted_vals[lo]))
    if frac == 0:
        return base
    return base + frac * (int(sorted_vals[lo + 1]) - int(sorted_vals[lo]))


def fit_quantiles(panel: Panel) -> QuantileSet:
    """Quantiles of the positive logged floors, linear interpolation at index ``q*(k-1)``.

    Computed exactly; the result is frozen.
    """
    positive = np.sort(panel.floor[panel.floor > 0])
    if positive.size == 0:
        raise FitError("no positive logged floors to fit quantiles from")
    vals = {name: _interpolated(positive, lvl) for name, lvl in QUANTILE_LEVELS.items()}
    return QuantileSet(**vals, source_panel_id=panel.panel_id, frozen=True)


# ----------------------------------------------------------------- policies

FAMILIES: dict[str, tuple[str, ...]] = {
    "baseline": (),
    "uniform-percent": ("multiplier",),
    "absolute-increment": ("increment",),
    "positive-floor-quantile": ("quantile",),
    "all-floor-quantile": ("quantile",),
    "margin-gated-increment": ("increment", "gap_threshold"),
    "hybrid-quantile-margin": ("quantile", "gap_threshold"),
}
QUANTILE_FAMILIES = {"positive-floor-quantile", "all-floor-quantile", "hybrid-quantile-margin"}


@dataclass(frozen=True)
class Policy:
    """A reserve rule. Every family only ever raises the logged floor."""

    id: str
    family: str
    name: str = ""
    multiplier: Fraction | None = None
    increment: Fraction | None = None
    quantile: str | None = None
    gap_threshold: Fraction | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise CatalogError(f"{self.id}: unknown family '{self.family}'")
        needed = FAMILIES[self.family]
        for key in ("multiplier", "increment", "quantile", "gap_threshold"):
            val = getattr(self, key)
            if key in needed and val is None:
                raise CatalogError(f"{self.id}: family '{self.family}' needs '{key}'")
            if key not in needed and val is not None:
                raise CatalogError(f"{self.id}: '{key}' does not apply to family '{self.family}'")
        for key in ("multiplier", "increment", "gap_threshold"):
            val = getattr(self, key)
            if val is not None:
                object.__setattr__(self, key, as_fraction(val))
        if self.multiplier is not None and self.multiplier < 1:
            raise CatalogError(f"{self.id}: multiplier {self.multiplier} would lower floors")
        if self.increment is not None and self.increment < 0:
            raise CatalogError(f"{self.id}: negative increment")
        if self.gap_threshold is not None and self.gap_threshold < 0:
            raise CatalogError(f"{self.id}: negative gap threshold")
        if self.quantile is not None and self.quantile not in QUANTILE_LEVELS:
            raise CatalogError(f"{self.id}: quantile must be one of {sorted(QUANTILE_LEVELS)}")
        if not self.name:
            object.__setattr__(self, "name", self.id)

    @property
    def is_baseline(self) -> bool:
        return self.family == "baseline"

    @property
    def needs_quantiles(self) -> bool:
        return self.family in QUANTILE_FAMILIES

    def to_dict(self) -> dict:
        out = {"id": self.id, "name": self.name, "family": self.family}
        for key in ("multiplier", "increment", "quantile", "gap_threshold"):
            val = getattr(self, key)
            if val is not None:
                out[key] = str(val)
        return out


def candidate_floor(policy: Policy, row: AuctionRow, quantiles: QuantileSet | None) -> Fraction:
    """Counterfactual floor for one row, as an exact rational."""
    f0 = Fraction(row.floor)
    fam = policy.family
    if fam == "baseline":
        return f0
    if fam == "uniform-percent":
        return f0 * policy.multiplier
    if fam == "absolute-increment":
        return f0 + policy.increment
    q = quantiles.value(policy.quantile) if policy.needs_quantiles else None
    if fam == "positive-floor-quantile":
        return max(f0, q) if f0 > 0 else f0
    if fam == "all-floor-quantile":
        return max(f0, q)
    gated = row.bid - row.floor >= policy.gap_threshold
    if fam == "margin-gated-increment":
        return f0 + policy.increment if gated else f0
    return max(f0, q) if gated else f0


_INT_LIMIT = 1 << 62


def candidate_floors(policy: Policy, floor: np.ndarray, bid: np.ndarray,
                     quantiles: QuantileSet | None) -> tuple[np.ndarray, int]:
    """Vectorized candidate floors as ``(numerators, denominator)``."""
    fam = policy.family
    if fam == "baseline":
        return np.asarray(floor, dtype=np.int64), 1
    if policy.needs_quantiles and quantiles is None:
        raise CatalogError(f"{policy.id}: quantile anchors are required")
    parts = [x for x in (policy.multiplier, policy.increment) if x is not None]
    if policy.needs_quantiles:
        parts.append(quantiles.value(policy.quantile))
    den = math.lcm(*(p.denominator for p in parts)) if parts else 1

    def scaled(x: Fraction) -> int:
        return x.numerator * (den // x.denominator)

    peak = max(int(np.max(floor, initial=0)), int(np.max(bid, initial=0)), 1)
    factors = [abs(scaled(p)) for p in parts]
    if peak * max(factors + [den]) + sum(factors) >= _INT_LIMIT:
        raise CatalogError(f"{policy.id}: parameters too fine for exact int64 arithmetic")
    base = np.asarray(floor, dtype=np.int64) * den

    if fam == "uniform-percent":
        return np.asarray(floor, dtype=np.int64) * scaled(policy.multiplier), den
    if fam == "absolute-increment":
        return base + scaled(policy.increment), den
    if policy.needs_quantiles:
        q = scaled(quantiles.value(policy.quantile))
    if fam == "positive-floor-quantile":
        return np.where(floor > 0, np.maximum(base, q), base), den
    if fam == "all-floor-quantile":
        return np.maximum(base, q), den
    g = policy.gap_threshold
    gated = (np.asarray(bid, dtype=np.int64) - floor) * g.denominator >= g.numerator
    if fam == "margin-gated-increment":
        return base + np.where(gated, scaled(policy.increment), 0), den
    return np.where(gated, np.maximum(base, q), base), den


# ------------------------------------------------------------------ catalog

@dataclass(frozen=True)
class Catalog:
    policies: tuple[Policy, ...]
    quantiles: QuantileSet | None = None

    def __post_init__(self):
        ids = [p.id for p in self.policies]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CatalogError(f"duplicate policy ids: {dup}")
        baselines = [p for p in self.policies if p.is_baseline]
        if len(baselines) != 1:
            raise CatalogError("catalog needs exactly one baseline policy")
        if not self.policies[0].is_baseline:
            raise CatalogError("baseline policy must come first")
        if len(self.policies) < 2:
            raise CatalogError("catalog has no candidate policies besides the baseline")
        if self.needs_quantiles and self.quantiles is None:
            raise CatalogError("quantile-family policies need fitted quantile anchors")

    @property
    def M(self) -> int:
        return len(self.policies) - 1

    @property
    def baseline(self) -> Policy:
        return self.policies[0]

    @property
    def candidates(self) -> tuple[Policy, ...]:
        return self.policies[1:]

    @property
    def needs_quantiles(self) -> bool:
        return any(p.needs_quantiles for p in self.policies)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.policies]

    def __len__(self) -> int:
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def get(self, policy_id: str) -> Policy:
        for p in self.policies:
            if p.id == policy_id:
                return p
        raise KeyError(policy_id)

    def index(self, policy_id: str) -> int:
        return self.ids.index(policy_id)

    def subset(self, ids: Sequence[str]) -> "Catalog":
        keep = set(ids) | {self.baseline.id}
        return replace(self, policies=tuple(p for p in self.policies if p.id in keep))

    def fingerprint(self) -> str:
        payload = repr([p.to_dict() for p in self.policies])
        payload += repr(self.quantiles.to_dict() if self.quantiles else None)
        return hashlib.sha256(payload.encode()).hexdigest()


BASELINE = Policy("P0", "baseline", "Logged Status Quo")

PAPER19: tuple[dict, ...] = (
    {"id": "P0", "name": "Logged Status Quo", "family": "baseline"},
    {"id": "P1", "name": "Uniform +5%", "family": "uniform-percent", "multiplier": "1.05"},
    {"id": "P2", "name": "Uniform +10%", "family": "uniform-percent", "multiplier": "1.10"},
    {"id": "P3", "name": "Uniform +15%", "family": "uniform-percent", "multiplier": "1.15"},
    {"id": "P4", "name": "Uniform +20%", "family": "uniform-percent", "multiplier": "1.20"},
    {"id": "P5", "name": "Uniform +30%", "family": "uniform-percent", "multiplier": "1.30"},
    {"id": "P6", "name": "Add 5 To All Floors", "family": "absolute-increment", "increment": "5"},
    {"id": "P7", "name": "Add 10 To All Floors", "family": "absolute-increment", "increment": "10"},
    {"id": "P8", "name": "Add 20 To All Floors", "family": "absolute-increment", "increment": "20"},
    {"id": "P9", "name": "Positive Floors To Q25", "family": "positive-floor-quantile", "quantile": "q25"},
    {"id": "P10", "name": "Positive Floors To Q50", "family": "positive-floor-quantile", "quantile": "q50"},
    {"id": "P11", "name": "Positive Floors To Q75", "family": "positive-floor-quantile", "quantile": "q75"},
    {"id": "P12", "name": "All Low Floors To Q25", "family": "all-floor-quantile", "quantile": "q25"},
    {"id": "P13", "name": "All Low Floors To Q50", "family": "all-floor-quantile", "quantile": "q50"},
    {"id": "P14", "name": "Gap 25 Add 5", "family": "margin-gated-increment",
     "increment": "5", "gap_threshold": "25"},
    {"id": "P15", "name": "Gap 50 Add 10", "family": "margin-gated-increment",
     "increment": "10", "gap_threshold": "50"},
    {"id": "P16", "name": "Gap 100 Add 20", "family": "margin-gated-increment",
     "increment": "20", "gap_threshold": "100"},
    {"id": "P17", "name": "Q50 Margin-Gated Floor", "family": "hybrid-quantile-margin",
     "quantile": "q50", "gap_threshold": "50"},
    {"id": "P18", "name": "Q75 Margin-Gated Floor", "family": "hybrid-quantile-margin",
     "quantile": "q75", "gap_threshold": "100"},
)

PRESETS = {"paper19": PAPER19}


def policy_from_dict(d: Mapping) -> Policy:
    d = dict(d)
    known = {"id", "name", "family", "multiplier", "increment", "quantile", "gap_threshold"}
    extra = set(d) - known
    if extra:
        raise CatalogError(f"unknown policy keys: {sorted(extra)}")
    if "id" not in d or "family" not in d:
        raise CatalogError("each policy needs 'id' and 'family'")
    try:
        return Policy(**d)
    except (ValueError, ZeroDivisionError) as exc:
        raise CatalogError(f"{d.get('id')}: bad parameter ({exc})") from exc


def load_catalog_config(path: str | Path) -> list[dict]:
    """Read an INI-style catalog file, one section per policy.

    The section name is the policy id unless an ``id`` key overrides it.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if not parser.read(path):
        raise CatalogError(f"cannot read catalog file {path}")
    out = []
    for section in parser.sections():
        entry = dict(parser[section])
        entry.setdefault("id", section)
        out.append(entry)
    return out


def build_catalog(config, quantiles: QuantileSet | None = None) -> Catalog:
    """Build a catalog from a preset name, a catalog file path, or policy mappings.

    A missing baseline is prepended; a baseline listed elsewhere is moved first.
    """
    if isinstance(config, Mapping):
        if "preset" in config:
            config = config["preset"]
        elif "path" in config:
            config = Path(config["path"])
        elif "policies" in config:
            config = config["policies"]
        else:
            raise CatalogError("catalog config needs 'preset', 'path' or 'policies'")
    if isinstance(config, str) and config in PRESETS:
        entries: Iterable = PRESETS[config]
    elif isinstance(config, (str, Path)):
        entries = load_catalog_config(config)
    else:
        entries = config
    policies = [p if isinstance(p, Policy) else policy_from_dict(p) for p in entries]
    baselines = [p for p in policies if p.is_baseline]
    if not baselines:
        policies.insert(0, BASELINE)
    elif len(baselines) == 1 and not policies[0].is_baseline:
        policies.remove(baselines[0])
        policies.insert(0, baselines[0])
    return Catalog(tuple(policies), quantiles)


def write_catalog_config(catalog: Catalog, path: str | Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for p in catalog.policies:
        d = p.to_dict()
        parser[d.pop("id")] = d
    with open(path, "w") as fh:
        parser.write(fh)
