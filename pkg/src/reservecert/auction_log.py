"""Logged auction panel: data model, ingestion, and segment partitioning."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyPanelError, RowError, SchemaError

logger = logging.getLogger(__name__)

KEY_FIELDS = ("advertiser", "exchange", "region", "category")
MONEY_FIELDS = ("floor", "bid", "payment")
LOG_FIELDS = ("day", *KEY_FIELDS, *MONEY_FIELDS, "filled")
DIMENSIONS = (*KEY_FIELDS, "bid_gap_bucket")


@dataclass(frozen=True)
class AuctionRow:
    """One logged opportunity. Money is in integer minor units."""

    day: str
    advertiser: str
    exchange: str
    region: str
    category: str
    floor: int
    bid: int
    payment: int
    filled: bool


def bid_gap(row: AuctionRow) -> int:
    return row.bid - row.floor


def row_violation(floor, bid, payment, filled) -> str | None:
    """Reason the row breaks an AuctionRow invariant, or None."""
    if floor < 0 or bid < 0 or payment < 0:
        return "negative money value"
    if filled and bid < floor:
        return "filled row with bid below floor"
    if filled and payment > bid:
        return "filled row with payment above bid"
    if not filled and payment != 0:
        return "unfilled row with nonzero payment"
    return None


def _violation_mask(floor, bid, payment, filled) -> np.ndarray:
    return (
        (floor < 0) | (bid < 0) | (payment < 0)
        | (filled & (bid < floor))
        | (filled & (payment > bid))
        | (~filled & (payment != 0))
    )


@dataclass(frozen=True, eq=False)
class Categorical:
    codes: np.ndarray
    labels: tuple[str, ...]

    @classmethod
    def from_values(cls, values: Sequence[str]) -> "Categorical":
        labels, codes = np.unique(np.asarray(values, dtype=str), return_inverse=True)
        return cls(_frozen(codes.astype(np.int32)), tuple(str(x) for x in labels))

    def values(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=str)[self.codes] if self.labels else np.array([], dtype=str)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable, day-partitioned collection of logged opportunities.

    Stored column-wise. Row order is ingestion order; ``days`` is sorted.
    """

    day: Categorical
    keys: Mapping[str, Categorical]
    floor: np.ndarray
    bid: np.ndarray
    payment: np.ndarray
    filled: np.ndarray
    dropped_rows: int = 0
    source: str = field(default="", compare=False)

    @classmethod
    def from_columns(cls, *, day, floor, bid, payment, filled, advertiser=None,
                     exchange=None, region=None, category=None,
                     dropped_rows: int = 0, source: str = "") -> "Panel":
        floor = np.asarray(floor, dtype=np.int64)
        bid = np.asarray(bid, dtype=np.int64)
        payment = np.asarray(payment, dtype=np.int64)
        filled = np.asarray(filled, dtype=bool)
        n = floor.size
        if n == 0:
            raise EmptyPanelError("panel has no valid rows")
        if not (bid.size == payment.size == filled.size == len(day) == n):
            raise SchemaError("column lengths differ")
        bad = _violation_mask(floor, bid, payment, filled)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise RowError(i + 1, row_violation(floor[i], bid[i], payment[i], filled[i]))
        raw = {"advertiser": advertiser, "exchange": exchange, "region": region, "category": category}
        keys = {k: Categorical.from_values([""] * n if v is None else v) for k, v in raw.items()}
        return cls(Categorical.from_values(day), keys, _frozen(floor), _frozen(bid),
                   _frozen(payment), _frozen(filled), dropped_rows, source)

    @classmethod
    def from_rows(cls, rows: Iterable[AuctionRow]) -> "Panel":
        rows = list(rows)
        cols = {f: [getattr(r, f) for r in rows] for f in LOG_FIELDS}
        return cls.from_columns(**cols)

    @property
    def n(self) -> int:
        return int(self.floor.size)

    @property
    def days(self) -> tuple[str, ...]:
        return self.day.labels

    @property
    def day_codes(self) -> np.ndarray:
        return self.day.codes

    @cached_property
    def day_order(self) -> np.ndarray:
        return np.argsort(self.day.codes, kind="stable")

    @cached_property
    def gap(self) -> np.ndarray:
        return self.bid - self.floor

    @cached_property
    def rows_per_day(self) -> np.ndarray:
        return np.bincount(self.day.codes, minlength=len(self.days))

    def row(self, i: int) -> AuctionRow:
        return AuctionRow(
            day=self.days[self.day.codes[i]],
            **{k: self.keys[k].labels[self.keys[k].codes[i]] for k in KEY_FIELDS},
            floor=int(self.floor[i]), bid=int(self.bid[i]), payment=int(self.payment[i]),
            filled=bool(self.filled[i]),
        )

    def __iter__(self) -> Iterator[AuctionRow]:
        return (self.row(i) for i in range(self.n))

    def __len__(self) -> int:
        return self.n

    def take(self, index: np.ndarray) -> "Panel":
        """Sub-panel of the given rows, in the given order."""
        index = np.asarray(index)
        cols = {k: self.keys[k].values()[index] for k in KEY_FIELDS}
        return Panel.from_columns(day=self.day.values()[index], floor=self.floor[index],
                                  bid=self.bid[index], payment=self.payment[index],
                                  filled=self.filled[index], source=self.source, **cols)

    def digest(self) -> str:
        """SHA-256 over the canonical column content."""
        h = hashlib.sha256()
        for cat in (self.day, *(self.keys[k] for k in KEY_FIELDS)):
            h.update("\x1f".join(cat.labels).encode())
            h.update(cat.codes.astype("<i4").tobytes())
        for arr in (self.floor, self.bid, self.payment):
            h.update(arr.astype("<i8").tobytes())
        h.update(self.filled.astype("u1").tobytes())
        return h.hexdigest()

    @cached_property
    def panel_id(self) -> str:
        return self.digest()[:16]


# ---------------------------------------------------------------- ingestion

@dataclass(frozen=True)
class Schema:
    """Maps logical log fields to file columns.

    ``day_prefix`` truncates the day column (e.g. 8 turns a
    ``yyyymmddhhmmss...`` timestamp into a day label). ``money_scale``
    multiplies parsed money values; the result must be integral.
    """

    columns: Mapping[str, str | None]
    delimiter: str = ","
    money_scale: int = 1
    day_prefix: int | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping | None) -> "Schema":
        mapping = dict(mapping or {})
        preset = mapping.pop("preset", "standard")
        if preset not in SCHEMA_PRESETS:
            raise ConfigError(f"unknown schema preset '{preset}'")
        base = SCHEMA_PRESETS[preset]
        columns = {**base.columns, **mapping.pop("columns", {})}
        delimiter = mapping.pop("delimiter", base.delimiter)
        if delimiter in ("tab", "\\t"):
            delimiter = "\t"
        out = cls(columns, delimiter, int(mapping.pop("money_scale", base.money_scale)),
                  mapping.pop("day_prefix", base.day_prefix))
        if mapping:
            raise ConfigError(f"unknown schema keys: {sorted(mapping)}")
        return out


SCHEMA_PRESETS = {
    "standard": Schema({f: f for f in LOG_FIELDS}),
    # iPinYou impression logs after joining a 0/1 fill flag. BiddingPrice is
    # the logged bid and PayingPrice the clearing payment; Timestamp is cut
    # to its yyyymmdd prefix.
    "ipinyou": Schema(
        {
            "day": "Timestamp",
            "advertiser": "AdvertiserID",
            "exchange": "AdExchange",
            "region": "Region",
            "category": "AdSlotFormat",
            "floor": "AdSlotFloorPrice",
            "bid": "BiddingPrice",
            "payment": "PayingPrice",
            "filled": "Filled",
        },
        delimiter="\t",
        day_prefix=8,
    ),
}


def parse_log(path: str | Path, schema: Schema | Mapping | None = None,
              strict: bool = True) -> Panel:
    """Read a delimited log into a validated :class:`Panel`.

    In strict mode the first bad row raises :class:`RowError` with its file
    line number. In lenient mode bad rows are dropped and counted in
    ``Panel.dropped_rows``.
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    header = pd.read_csv(path, sep=schema.delimiter, nrows=0).columns
    usecols = {}
    for fld in LOG_FIELDS:
        col = schema.columns.get(fld)
        if col is None and fld == "category":
            continue
        if col is None or col not in header:
            raise SchemaError(f"missing column for field '{fld}': {col!r}")
        usecols[fld] = col
    frame = pd.read_csv(path, sep=schema.delimiter, dtype=str, usecols=list(set(usecols.values())),
                        keep_default_na=False, na_filter=False)
    checks: list[tuple[np.ndarray, str]] = []
    money = {}
    for fld in MONEY_FIELDS:
        raw = frame[usecols[fld]].str.strip()
        vals = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float) * schema.money_scale
        ok = np.isfinite(vals)
        rounded = np.rint(np.where(ok, vals, 0.0))
        ok &= np.abs(vals - rounded) <= 1e-6 * np.maximum(1.0, np.abs(rounded))
        checks.append((~ok, f"unparseable money value in '{fld}'"))
        money[fld] = rounded.astype(np.int64)
    filled_raw = frame[usecols["filled"]].str.strip().to_numpy()
    checks.append((~np.isin(filled_raw, ["0", "1"]), "filled must be 0 or 1"))
    filled = filled_raw == "1"
    day = frame[usecols["day"]].str.strip()
    if schema.day_prefix:
        day = day.str.slice(0, int(schema.day_prefix))
    day = day.to_numpy()
    checks.append((day == "", "empty day label"))
    f, b, p = money["floor"], money["bid"], money["payment"]
    checks += [
        ((f < 0) | (b < 0) | (p < 0), "negative money value"),
        (filled & (b < f), "filled row with bid below floor"),
        (filled & (p > b), "filled row with payment above bid"),
        (~filled & (p != 0), "unfilled row with nonzero payment"),
    ]
    bad = np.logical_or.reduce([m for m, _ in checks])
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        if strict:
            reason = next(r for m, r in checks if m[first])
            raise RowError(first + 2, reason)
        logger.warning("dropped %d invalid rows from %s", int(bad.sum()), path)
    keep = ~bad
    if not keep.any():
        raise EmptyPanelError(f"no valid rows in {path}")
    keys = {}
    for fld in KEY_FIELDS:
        if fld in usecols:
            keys[fld] = frame[usecols[fld]].str.strip().to_numpy()[keep]
        else:
            keys[fld] = np.full(int(keep.sum()), "", dtype=object)
    return Panel.from_columns(
        day=day[keep], floor=money["floor"][keep], bid=money["bid"][keep],
        payment=money["payment"][keep], filled=filled[keep],
        dropped_rows=int(bad.sum()), source=str(path), **keys,
    )


def write_log(panel: Panel, path: str | Path, delimiter: str = ",") -> None:
    """Write ``panel`` in the standard input format (header row, integer money, 0/1 fill)."""
    frame = pd.DataFrame({
        "day": panel.day.values(),
        **{k: panel.keys[k].values() for k in KEY_FIELDS},
        "floor": panel.floor, "bid": panel.bid, "payment": panel.payment,
        "filled": panel.filled.astype(np.int8),
    })
    frame.to_csv(path, sep=delimiter, index=False, lineterminator="\n")


def save_panel(panel: Panel, path: str | Path) -> None:
    """Columnar cache used between CLI stages."""
    arrays = {"day_codes": panel.day.codes, "day_labels": np.asarray(panel.days, dtype=str),
              "floor": panel.floor, "bid": panel.bid, "payment": panel.payment,
              "filled": panel.filled, "dropped_rows": np.array(panel.dropped_rows)}
    for k in KEY_FIELDS:
        arrays[f"{k}_codes"] = panel.keys[k].codes
        arrays[f"{k}_labels"] = np.asarray(panel.keys[k].labels, dtype=str)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_panel(path: str | Path) -> Panel:
    with np.load(path, allow_pickle=False) as z:
        def cat(name):
            return Categorical(_frozen(z[f"{name}_codes"].astype(np.int32)),
                               tuple(str(x) for x in z[f"{name}_labels"]))
        return Panel(cat("day"), {k: cat(k) for k in KEY_FIELDS},
                     _frozen(z["floor"]), _frozen(z["bid"]), _frozen(z["payment"]),
                     _frozen(z["filled"]), int(z["dropped_rows"]), str(path))


# ----------------------------------------------------------------- segments

@dataclass(frozen=True, order=True)
class SegmentKey:
    dimension: str
    value: str

    def __str__(self) -> str:
        return f"{self.dimension}={self.value}"

    @classmethod
    def parse(cls, text: str) -> "SegmentKey":
        dim, _, value = text.partition("=")
        return cls(dim, value)


@dataclass(frozen=True, eq=False)
class SegmentGrid:
    """Covered segments (at least ``min_rows`` rows) and the uncovered remainder."""

    covered: dict[SegmentKey, np.ndarray]
    uncovered: dict[SegmentKey, np.ndarray]
    min_rows: int

    def __len__(self) -> int:
        return len(self.covered)


def _fmt_edge(x: float) -> str:
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def gap_bucket_labels(edges: Sequence[float]) -> list[str]:
    labels = [f"(-inf,{_fmt_edge(edges[0])})"]
    bounds = [*edges, np.inf]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        labels.append(f"[{_fmt_edge(lo)},{_fmt_edge(hi)})")
    return labels


def partition_segments(panel: Panel, dimensions: Sequence[str], min_rows: int = 1,
                       gap_bucket_edges: Sequence[float] | None = None) -> SegmentGrid:
    """Split rows into one segment per (dimension, value).

    Bid-gap buckets are ``[e_k, e_{k+1})`` with a final ``[e_last, inf)``;
    gaps below the first edge land in a ``(-inf, e_0)`` bucket so every row
    belongs to exactly one bucket.
    """
    dims = [d.replace("-", "_") for d in dimensions]
    if not dims:
        raise ConfigError("at least one segment dimension is required")
    if min_rows < 1:
        raise ConfigError("min_rows must be >= 1")
    covered: dict[SegmentKey, np.ndarray] = {}
    uncovered: dict[SegmentKey, np.ndarray] = {}
    for dim in dims:
        if dim in KEY_FIELDS:
            cat = panel.keys[dim]
            codes, labels = cat.codes, list(cat.labels)
        elif dim == "bid_gap_bucket":
            edges = [float(e) for e in (gap_bucket_edges or [])]
            if not edges or any(b <= a for a, b in zip(edges[:-1], edges[1:])):
                raise ConfigError("gap bucket edges must be non-empty and strictly increasing")
            codes = np.searchsorted(np.asarray(edges), panel.gap, side="right")
            labels = gap_bucket_labels(edges)
        else:
            raise ConfigError(f"unknown segment dimension '{dim}'")
        order = np.argsort(codes, kind="stable")
        bounds = np.searchsorted(codes[order], np.arange(len(labels) + 1))
        for g, label in enumerate(labels):
            idx = np.sort(order[bounds[g]:bounds[g + 1]])
            if idx.size == 0:
                continue
            target = covered if idx.size >= min_rows else uncovered
            target[SegmentKey(dim, label)] = idx
    return SegmentGrid(covered, uncovered, min_rows)
