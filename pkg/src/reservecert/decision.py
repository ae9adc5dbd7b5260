"""Simultaneous bounds and the certified / dominated / unresolved decision object."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InsufficientReplicatesError
from .numeric import sample_sd
from .replay import ReplaySummary

# Wichura (1988), algorithm AS 241 (PPND16); relative accuracy about 1e-16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef: Sequence[float], x: float) -> float:
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"normal_quantile needs 0 < p < 1, got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = math.sqrt(-math.log(p if q < 0 else 1.0 - p))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


def bonferroni_z(alpha: float, family_size: int) -> float:
    """Two-sided Bonferroni critical value ``z_{1 - alpha/(2k)}``."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if family_size < 1:
        raise ConfigError("family size must be >= 1")
    return normal_quantile(1.0 - alpha / (2 * family_size))


@dataclass(frozen=True)
class PolicyBounds:
    policy_id: str
    lift_hat: float
    se_daily: float
    lcb: float
    ucb: float
    lcb_support: float
    alpha: float
    z_crit: float
    retained_share: float = 1.0
    lam: float = 1.0
    n_days: int = 0
    is_baseline: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def simultaneous_bounds(summaries: Sequence[ReplaySummary], alpha: float = 0.05,
                        lam: float = 1.0, family_size: int | None = None) -> list[PolicyBounds]:
    """Bonferroni-normal bounds on each lift from its daily replay lifts.

    ``se = sd(daily lifts) / sqrt(D)`` and the critical value is taken over
    the whole catalog (baseline included) unless ``family_size`` overrides
    it. The support-adjusted bound subtracts ``lam * (1 - retained_share)``.
    """
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    z = bonferroni_z(alpha, family_size or len(summaries))
    out = []
    for s in summaries:
        daily = np.array([v for v in s.daily_lifts.values() if not math.isnan(v)], dtype=float)
        if daily.size < 2:
            raise InsufficientReplicatesError(
                f"{s.policy_id}: need at least 2 days with defined daily lift, got {daily.size}")
        se = sample_sd(daily) / math.sqrt(daily.size)
        lcb, ucb = s.lift - z * se, s.lift + z * se
        out.append(PolicyBounds(s.policy_id, s.lift, se, lcb, ucb,
                                lcb - lam * (1.0 - s.retained_share), alpha, z,
                                s.retained_share, lam, int(daily.size), s.is_baseline))
    return out


@dataclass(frozen=True)
class DecisionObject:
    leader_id: str
    tolerance: float
    shortlist: tuple[str, ...]
    certified: tuple[str, ...]
    dominated: tuple[str, ...]
    unresolved: tuple[str, ...]
    bounds: tuple[PolicyBounds, ...]
    gate_report: dict[str, dict] = field(default_factory=dict)

    @property
    def gate_passing(self) -> tuple[str, ...]:
        return tuple(b.policy_id for b in self.bounds if not b.is_baseline)

    def bound(self, policy_id: str) -> PolicyBounds:
        return next(b for b in self.bounds if b.policy_id == policy_id)

    def label(self, policy_id: str) -> str:
        if policy_id in self.certified:
            return "certified"
        if policy_id in self.dominated:
            return "dominated"
        if policy_id in self.unresolved:
            return "unresolved"
        return "baseline"

    def to_dict(self) -> dict:
        first = self.bounds[0] if self.bounds else None
        return {
            "alpha": first.alpha if first else None,
            "lambda": first.lam if first else None,
            "leader": self.leader_id,
            "tolerance": self.tolerance,
            "shortlist": list(self.shortlist),
            "certified": list(self.certified),
            "dominated": list(self.dominated),
            "unresolved": list(self.unresolved),
            "bounds": [b.to_dict() for b in self.bounds],
            "gate_report": self.gate_report,
        }


def decide(bounds: Sequence[PolicyBounds], tolerance: float = 0.0,
           segment_pass: Mapping[str, bool] | None = None) -> DecisionObject:
    """Partition the non-baseline policies into certified, dominated, and unresolved.

    The leader maximizes the support-adjusted lower bound (ties go to the
    earliest policy). A policy is dominated when its upper bound falls below
    ``lcb_support(leader) - tolerance``. The leader alone is certified, and
    only if its support-adjusted bound is positive and it passes the
    segment gate.
    """
    if tolerance < 0:
        raise ConfigError("tolerance must be >= 0")
    segment_pass = dict(segment_pass or {})
    cands = [b for b in bounds if not b.is_baseline]
    if not cands:
        raise ConfigError("no non-baseline policies to decide between")
    leader = cands[0]
    for b in cands[1:]:
        if b.lcb_support > leader.lcb_support:
            leader = b
    threshold = leader.lcb_support - tolerance
    dominated = tuple(b.policy_id for b in cands if b.ucb < threshold)
    shortlist = tuple(b.policy_id for b in cands if b.policy_id not in dominated)
    seg_ok = bool(segment_pass.get(leader.policy_id, False))
    certified = (leader.policy_id,) if leader.lcb_support > 0 and seg_ok else ()
    unresolved = tuple(p for p in shortlist if p not in certified)
    max_other_ucb = max((b.ucb for b in cands if b is not leader), default=-math.inf)
    gate_report = {}
    for b in cands:
        gate_report[b.policy_id] = {
            "positive_lcb_support": b.lcb_support > 0,
            "segment_pass": segment_pass.get(b.policy_id),
            "separated": b is leader and leader.lcb_support > max_other_ucb,
            "dominated": b.policy_id in dominated,
        }
    return DecisionObject(leader.policy_id, float(tolerance), shortlist, certified, dominated,
                          unresolved, tuple(bounds), gate_report)


def tolerance_sweep(bounds: Sequence[PolicyBounds], tolerances: Sequence[float],
                    segment_pass: Mapping[str, bool] | None = None) -> dict[float, int]:
    """Shortlist size at each tolerance, each recomputed by :func:`decide`."""
    if any(t < 0 for t in tolerances) or list(tolerances) != sorted(tolerances):
        raise ConfigError("tolerances must be nonnegative and sorted")
    return {float(t): len(decide(bounds, t, segment_pass).shortlist) for t in tolerances}


def point_estimate_winner(bounds: Sequence[PolicyBounds]) -> str:
    """Replay-only rule: largest point estimate (earliest on ties)."""
    cands = [b for b in bounds if not b.is_baseline]
    return max(enumerate(cands), key=lambda t: (t[1].lift_hat, -t[0]))[1].policy_id


def lower_bound_winner(bounds: Sequence[PolicyBounds]) -> str:
    """Largest plain simultaneous lower bound, no support penalty."""
    cands = [b for b in bounds if not b.is_baseline]
    return max(enumerate(cands), key=lambda t: (t[1].lcb, -t[0]))[1].policy_id


def catalog_size_scaling(bounds: Sequence[PolicyBounds], sizes: Sequence[int], alpha: float,
                         lam: float, policy_id: str) -> list[dict]:
    """Critical value and support-adjusted lower bound of one policy as the catalog grows."""
    b = next(x for x in bounds if x.policy_id == policy_id)
    rows = []
    for k in sizes:
        z = bonferroni_z(alpha, k)
        lcb = b.lift_hat - z * b.se_daily
        rows.append({"catalog_size": int(k), "z_crit": z, "lcb": lcb,
                     "lcb_support": lcb - lam * (1.0 - b.retained_share)})
    return rows
