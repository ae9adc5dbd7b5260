"""Local-support diagnostics: boundary windows, q-local radii, localized lifts,
pairwise boundary mass, and the sample-size / error-bound calculators.

Row-wise boundary distance is ``|bid - candidate_floor|``, kept exact as an
integer numerator over the policy denominator.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .auction_log import Panel
from .decision import PolicyBounds
from .errors import ConfigError, DegeneratePolicyError, UndefinedLiftError
from .numeric import (argmax_first, as_fraction, day_resample_weights, exact_sum,
                      grouped_exact_sums)
from .policy_catalog import Catalog, Policy, QuantileSet, candidate_floors
from .replay import policy_yields

DEFAULT_Q_GRID = (0.01, 0.025, 0.05, 0.10, 0.20)
DEFAULT_KAPPA = 5.0
CENTERS = ("lcb", "lift")


@dataclass(frozen=True, eq=False)
class _Distances:
    dist: np.ndarray      # |bid*den - fnum|, int64
    den: int
    changed: np.ndarray   # candidate floor differs from logged floor


def _distances(panel: Panel, policy: Policy, quantiles: QuantileSet | None) -> _Distances:
    fnum, den = candidate_floors(policy, panel.floor, panel.bid, quantiles)
    dist = np.abs(panel.bid * den - fnum)
    return _Distances(dist, den, fnum != panel.floor * den)


def _window_counts(dist: np.ndarray, den: int, h_grid: Sequence) -> list[int]:
    srt = np.sort(dist)
    # integer distances: d/den <= h  <=>  d <= floor(h*den)
    limits = [math.floor(as_fraction(h) * den) for h in h_grid]
    return [int(np.searchsorted(srt, lim, side="right")) for lim in limits]


# ------------------------------------------------------------ boundary sweep

@dataclass(frozen=True)
class BoundaryDiagnostics:
    policy_id: str
    window_h: float
    n_boundary: int
    penalty: float
    penalized_lcb: float


def boundary_sweep(panel: Panel, catalog: Catalog, quantiles: QuantileSet | None,
                   h_grid: Sequence, kappa: float = DEFAULT_KAPPA,
                   bounds: Sequence[PolicyBounds] = (), center: str = "lcb") -> list[BoundaryDiagnostics]:
    """Count rows within ``h`` of each policy's threshold and apply ``kappa/sqrt(n)``.

    ``center`` picks the quantity the penalty is subtracted from: the
    simultaneous lower bound (default) or the point lift. Policies without
    a matching entry in ``bounds`` get NaN penalized values.
    """
    if kappa < 0:
        raise ConfigError("kappa must be >= 0")
    if center not in CENTERS:
        raise ConfigError(f"center must be one of {CENTERS}")
    hs = [as_fraction(h) for h in h_grid]
    if not hs or hs[0] <= 0 or any(b <= a for a, b in zip(hs[:-1], hs[1:])):
        raise ConfigError("h grid must be positive and strictly ascending")
    by_id = {b.policy_id: b for b in bounds}
    out = []
    for policy in catalog.candidates:
        d = _distances(panel, policy, quantiles)
        b = by_id.get(policy.id)
        ref = math.nan if b is None else (b.lcb if center == "lcb" else b.lift_hat)
        for h, n_b in zip(h_grid, _window_counts(d.dist, d.den, hs)):
            penalty = kappa / math.sqrt(n_b) if n_b > 0 else math.inf
            out.append(BoundaryDiagnostics(policy.id, float(h), n_b, penalty, ref - penalty))
    return out


# ------------------------------------------------------------- localization

@dataclass(frozen=True)
class LocalizedEstimate:
    policy_id: str
    q: float
    radius: float
    boundary_mass: float
    localized_lift: float = math.nan
    n_contrast: int = 0
    n_within: int = 0


def _check_q(q) -> Fraction:
    qf = as_fraction(q)
    if not 0 < qf <= 1:
        raise ConfigError(f"q must lie in (0, 1], got {q}")
    return qf


def _radius(d: _Distances, q, policy_id: str) -> tuple[int, int]:
    """Radius numerator (over ``d.den``) and the number of changed rows."""
    changed = np.sort(d.dist[d.changed])
    if changed.size == 0:
        raise DegeneratePolicyError(
            f"{policy_id}: no floor-changing rows; policy matches the baseline on this panel")
    k = math.ceil(_check_q(q) * changed.size)
    return int(changed[k - 1]), int(changed.size)


def q_local_radius(panel: Panel, policy: Policy, quantiles: QuantileSet | None,
                   q) -> LocalizedEstimate:
    """Smallest distance band holding a fraction ``q`` of the floor-changing rows.

    Raises
    ------
    DegeneratePolicyError
        If the policy changes no floor on this panel.
    """
    d = _distances(panel, policy, quantiles)
    r, n_change = _radius(d, q, policy.id)
    within = int(np.count_nonzero(d.dist <= r))
    return LocalizedEstimate(policy.id, float(q), r / d.den, within / panel.n,
                             n_contrast=n_change, n_within=within)


def _contrast(panel: Panel, policy: Policy, quantiles, base_num: np.ndarray):
    """Per-row contrast numerators ``Y_pi*den - Y_0*den`` and distances."""
    ys = policy_yields(panel, policy, quantiles)
    d = _distances(panel, policy, quantiles)
    return ys.num - base_num * ys.den, d


def _base_num(panel: Panel) -> np.ndarray:
    return policy_yields(panel, Policy("__base__", "baseline"), None).num


def localized_lift(panel: Panel, policy: Policy, quantiles: QuantileSet | None, q,
                   base_num: np.ndarray | None = None) -> LocalizedEstimate:
    """Contrast summed over rows within the q-local radius, divided by ``n * mu0``.

    At ``q = 1`` every floor-changing row is inside the radius and rows
    outside it contribute nothing, so the result is the full replay lift.
    """
    base_num = _base_num(panel) if base_num is None else base_num
    base_total = exact_sum(base_num)
    if base_total <= 0:
        raise UndefinedLiftError("baseline mean yield is zero; localized lift is undefined")
    z, d = _contrast(panel, policy, quantiles, base_num)
    r, n_change = _radius(d, q, policy.id)
    inside = d.dist <= r
    lift = Fraction(exact_sum(z[inside]), d.den * base_total)
    n_in = int(inside.sum())
    return LocalizedEstimate(policy.id, float(q), r / d.den, n_in / panel.n, float(lift),
                             n_change, n_in)


@dataclass(frozen=True)
class LocalizedLevel:
    q: float
    estimates: tuple[LocalizedEstimate, ...]
    ranking: tuple[str, ...]
    winner_frequency: dict[str, float]


@dataclass(frozen=True)
class LocalizedSelection:
    levels: tuple[LocalizedLevel, ...]
    degenerate: tuple[str, ...] = ()
    draws: int = 0
    seed: int = 0

    def estimates(self) -> list[LocalizedEstimate]:
        return [e for lvl in self.levels for e in lvl.estimates]


def _rank(ids: Sequence[str], values: Sequence[float]) -> tuple[str, ...]:
    order = sorted(range(len(ids)), key=lambda i: (-values[i], i))
    return tuple(ids[i] for i in order)


def localized_selection(panel: Panel, catalog: Catalog, quantiles: QuantileSet | None,
                        q_grid: Sequence = DEFAULT_Q_GRID, bootstrap_draws: int = 1000,
                        seed: int = 0) -> LocalizedSelection:
    """Rank policies by localized lift at each ``q`` and bootstrap the winner over days.

    The radius of each policy is fixed at its full-sample value; each draw
    resamples days with replacement and recomputes the localized lifts.
    Policies that change no floor on the panel are reported as degenerate
    and left out of the ranking.
    """
    if bootstrap_draws < 1:
        raise ConfigError("bootstrap draws must be >= 1")
    for q in q_grid:
        _check_q(q)
    n_days = len(panel.days)
    base_num = _base_num(panel)
    base_total = exact_sum(base_num)
    if base_total <= 0:
        raise UndefinedLiftError("baseline mean yield is zero; localized lift is undefined")
    base_day = np.array(grouped_exact_sums(base_num, panel.day_codes, n_days, panel.day_order),
                        dtype=float)
    weights = day_resample_weights(seed, bootstrap_draws, n_days).astype(float)
    base_draw = weights @ base_day

    contrasts, degenerate = [], []
    for policy in catalog.candidates:
        z, d = _contrast(panel, policy, quantiles, base_num)
        if not d.changed.any():
            degenerate.append(policy.id)
            continue
        contrasts.append((policy, z, d))

    levels = []
    for q in q_grid:
        ests, day_sums = [], []
        for policy, z, d in contrasts:
            r, n_change = _radius(d, q, policy.id)
            inside = d.dist <= r
            zin = np.where(inside, z, 0)
            n_in = int(inside.sum())
            ests.append(LocalizedEstimate(
                policy.id, float(q), r / d.den, n_in / panel.n,
                float(Fraction(exact_sum(zin), d.den * base_total)), n_change, n_in))
            per_day = grouped_exact_sums(zin, panel.day_codes, n_days, panel.day_order)
            day_sums.append(np.array([s / d.den for s in per_day], dtype=float))
        ids = [e.policy_id for e in ests]
        freq = {}
        if ests:
            with np.errstate(invalid="ignore", divide="ignore"):
                boot = (weights @ np.array(day_sums).T) / base_draw[:, None]
            wins = np.bincount(argmax_first(boot, axis=1), minlength=len(ids))
            freq = {pid: wins[i] / bootstrap_draws for i, pid in enumerate(ids)}
        levels.append(LocalizedLevel(float(q), tuple(ests),
                                     _rank(ids, [e.localized_lift for e in ests]), freq))
    return LocalizedSelection(tuple(levels), tuple(degenerate), bootstrap_draws, seed)


# ----------------------------------------------------------- pairwise mass

@dataclass(frozen=True)
class PairwiseMass:
    policy_a: str
    policy_b: str
    mass: float
    n_region: int
    n_filled: int
    degenerate: bool = False


def pairwise_boundary_mass(panel: Panel, policy_a: Policy, policy_b: Policy,
                           quantiles: QuantileSet | None) -> PairwiseMass:
    """Share of filled rows whose bid lies between the two candidate floors (closed).

    Rows where the two floors coincide cannot separate the policies and are
    not counted. When the floors coincide on every row the mass is 0 and
    the result is flagged degenerate.
    """
    na, da = candidate_floors(policy_a, panel.floor, panel.bid, quantiles)
    nb, db = candidate_floors(policy_b, panel.floor, panel.bid, quantiles)
    den = math.lcm(da, db)
    peak = max(int(np.max(na, initial=0)) * (den // da), int(np.max(nb, initial=0)) * (den // db),
               int(np.max(panel.bid, initial=0)) * den)
    dtype = np.int64 if peak < (1 << 62) else object
    a = na.astype(dtype) * (den // da)
    b = nb.astype(dtype) * (den // db)
    bid = panel.bid.astype(dtype) * den
    differ = a != b
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    region = panel.filled & differ & (bid >= lo) & (bid <= hi)
    n_filled = int(panel.filled.sum())
    n_region = int(np.count_nonzero(region))
    mass = n_region / n_filled if n_filled else 0.0
    return PairwiseMass(policy_a.id, policy_b.id, mass, n_region, n_filled,
                        degenerate=not bool(differ.any()))


# -------------------------------------------------------------- calculators

@dataclass(frozen=True)
class BoundCalculatorInputs:
    """User-supplied constants for the bound calculators.

    ``C``, ``L_pi`` and ``c0`` are unspecified constants in the underlying
    bounds; the defaults of 1 are conventions, not calibrated values.
    """

    B: float = 1.0
    mu0: float = 1.0
    n: int = 1
    catalog_size: int = 1
    delta: float = 0.05
    C: float = 1.0
    L_pi: float = 1.0
    c0: float = 1.0
    A: float = 1.0
    L_s: float = 0.0
    cover_radius: float = 0.0


def required_boundary_sample(B: float, epsilon: float, delta: float, c0: float = 1.0) -> float:
    """Effective boundary sample ``n*m`` needed to resolve a lift gap ``epsilon``.

    Returns ``(B^2 / (c0 * epsilon^2)) * ln(1 / (2 delta))``, or ``inf`` when
    ``epsilon`` is 0.
    """
    if not 0 < delta < 0.5:
        raise ConfigError("delta must lie in (0, 1/2)")
    if B <= 0 or c0 <= 0 or epsilon < 0:
        raise ConfigError("B and c0 must be positive and epsilon nonnegative")
    if epsilon == 0:
        return math.inf
    return B * B / (c0 * epsilon * epsilon) * math.log(1.0 / (2.0 * delta))


def localization_error_bound(inputs: BoundCalculatorInputs, m: float, radius: float,
                             q: float | None = None) -> float:
    """Three-term localization error: boundary-variance, tail, and radius bias terms."""
    if not 0 < m <= 1:
        raise ConfigError("boundary mass must lie in (0, 1]")
    if inputs.n <= 0 or inputs.mu0 <= 0 or inputs.catalog_size < 1 or not 0 < inputs.delta < 1:
        raise ConfigError("n, mu0 and catalog size must be positive and delta in (0, 1)")
    log_term = math.log(2 * inputs.catalog_size / inputs.delta)
    scale = inputs.C * inputs.B / inputs.mu0
    return (scale * math.sqrt(m * log_term / inputs.n)
            + scale * log_term / inputs.n
            + inputs.L_pi * radius / inputs.mu0)


def ranking_certified(localized_margin: float, eps_a: float, eps_b: float,
                      response_eta: float, mu0: float) -> bool:
    """True iff the localized margin strictly exceeds both errors plus ``eta / mu0``."""
    if eps_a < 0 or eps_b < 0 or response_eta < 0:
        raise ConfigError("errors and response gap must be nonnegative")
    if mu0 <= 0:
        raise ConfigError("mu0 must be positive")
    return localized_margin > eps_a + eps_b + response_eta / mu0


def regret_bound(inputs: BoundCalculatorInputs, per_policy: Sequence[tuple[float, float]]) -> float:
    """Twice the worst localization error over ``(mass, radius)`` pairs."""
    if not per_policy:
        raise ConfigError("regret bound needs at least one policy")
    return 2.0 * max(localization_error_bound(inputs, m, r) for m, r in per_policy)


# ---------------------------------------------------------------- writers

def write_boundary_sweep(rows: Sequence[BoundaryDiagnostics], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "h", "n_boundary", "penalty", "penalized_lcb"])
        for r in rows:
            w.writerow([r.policy_id, repr(r.window_h), r.n_boundary, repr(r.penalty),
                        repr(r.penalized_lcb)])


def write_localized(selection: LocalizedSelection, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "q", "radius", "mass", "localized_lift", "winner_frequency"])
        for lvl in selection.levels:
            for e in lvl.estimates:
                w.writerow([e.policy_id, repr(e.q), repr(e.radius), repr(e.boundary_mass),
                            repr(e.localized_lift), repr(float(lvl.winner_frequency[e.policy_id]))])


def write_pairwise(rows: Sequence[PairwiseMass], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_a", "policy_b", "mass", "n_region", "n_filled", "degenerate"])
        for r in rows:
            w.writerow([r.policy_a, r.policy_b, repr(r.mass), r.n_region, r.n_filled,
                        int(r.degenerate)])
