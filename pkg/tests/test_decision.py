import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from reservecert.decision import (PolicyBounds, bonferroni_z, catalog_size_scaling, decide,
                                  lower_bound_winner, normal_quantile, point_estimate_winner,
                                  simultaneous_bounds, tolerance_sweep)
from reservecert.errors import ConfigError, InsufficientReplicatesError
from reservecert.replay import ReplaySummary

BASE = PolicyBounds("P0", 0.0, 0.0, 0.0, 0.0, 0.0, 0.05, 2.0, is_baseline=True)


def pb(pid, lcb_support, ucb, lcb=None, lift=None):
    lcb = lcb_support if lcb is None else lcb
    lift = (lcb + ucb) / 2 if lift is None else lift
    return PolicyBounds(pid, lift, 0.1, lcb, ucb, lcb_support, 0.05, 2.0)


def summary(pid, daily, lift=None, retained=1.0, baseline=False):
    daily = {f"d{i}": v for i, v in enumerate(daily)}
    lift = float(np.mean(list(daily.values()))) if lift is None else lift
    return ReplaySummary(pid, 1.0, lift, retained, daily, 10, 10, 10, is_baseline=baseline)


@pytest.mark.parametrize("p", [1e-300, 1e-12, 0.001, 0.02425, 0.2, 0.5, 0.7, 0.975, 1 - 1e-10])
def test_normal_quantile_against_scipy(p):
    assert normal_quantile(p) == pytest.approx(norm.ppf(p), rel=1e-12, abs=1e-12)


def test_normal_quantile_domain():
    assert normal_quantile(0.5) == 0.0
    for p in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            normal_quantile(p)


@settings(max_examples=200)
@given(st.floats(1e-10, 0.5))
def test_normal_quantile_symmetric(p):
    assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p), abs=1e-6)


def test_constant_daily_lifts_zero_se():
    b = simultaneous_bounds([summary("P0", [0.0] * 7, baseline=True),
                             summary("A", [0.10] * 7)], lam=0.0)[1]
    assert b.se_daily == 0.0
    assert b.lcb == b.ucb == pytest.approx(0.10)


def test_full_retention_no_penalty():
    b = simultaneous_bounds([summary("P0", [0.0] * 3, baseline=True),
                             summary("A", [0.40, 0.50, 0.45], retained=1.0)], lam=1.0)[1]
    assert b.lcb_support == b.lcb


def test_penalty_subtracts_lost_share():
    b = simultaneous_bounds([summary("P0", [0.0] * 3, baseline=True),
                             summary("A", [0.30, 0.30, 0.30], retained=0.9)], lam=1.0)[1]
    assert b.lcb == pytest.approx(0.30)
    assert b.lcb_support == pytest.approx(0.20)


def test_single_day_rejected():
    with pytest.raises(InsufficientReplicatesError):
        simultaneous_bounds([summary("P0", [0.0], baseline=True), summary("A", [0.1])])


def test_se_is_sd_over_root_days():
    daily = [0.1, 0.3, 0.2, 0.5]
    b = simultaneous_bounds([summary("P0", [0.0] * 4, baseline=True), summary("A", daily)])[1]
    assert b.se_daily == pytest.approx(np.std(daily, ddof=1) / 2)
    assert b.z_crit == pytest.approx(norm.ppf(1 - 0.05 / 4))


def test_worked_example_two_policies():
    a, b = pb("a", 0.9, 1.1), pb("b", 0.0, 2.4)
    d = decide([BASE, a, b], 0.0, {"a": True, "b": True})
    assert d.leader_id == "a"
    assert d.certified == ("a",)
    assert d.unresolved == ("b",)
    assert d.dominated == ()
    assert point_estimate_winner([BASE, a, b]) == "b"


def test_three_policy_example():
    bounds = [BASE, pb("1", 0.40, 0.55), pb("2", 0.28, 0.50), pb("3", 0.10, 0.35)]
    d = decide(bounds, 0.0, {"1": True})
    assert d.leader_id == "1" and d.dominated == ("3",) and d.unresolved == ("2",)
    d = decide(bounds, 0.06, {"1": True})
    assert d.dominated == () and "3" in d.shortlist


def test_nonpositive_single_policy():
    d = decide([BASE, pb("A", -0.1, 0.2)], 0.0, {"A": True})
    assert d.leader_id == "A" and d.unresolved == ("A",)
    assert d.certified == () and d.dominated == ()


def test_segment_gate_blocks_certification():
    d = decide([BASE, pb("A", 0.3, 0.5)], 0.0, {"A": False})
    assert d.certified == () and d.unresolved == ("A",)
    assert d.gate_report["A"]["segment_pass"] is False


def test_ties_go_to_catalog_order():
    d = decide([BASE, pb("x", 0.2, 0.3), pb("y", 0.2, 0.3)], 0.0, {})
    assert d.leader_id == "x"


def test_errors():
    with pytest.raises(ConfigError):
        decide([BASE], 0.0)
    with pytest.raises(ConfigError):
        decide([BASE, pb("A", 0.1, 0.2)], -0.1)


def test_tolerance_sweep_large_rho_keeps_all():
    bounds = [BASE, pb("1", 0.40, 0.55), pb("2", 0.28, 0.50), pb("3", 0.10, 0.35)]
    sweep = tolerance_sweep(bounds, [0.0, 0.04, 0.06, 1.0])
    assert sweep == {0.0: 2, 0.04: 2, 0.06: 3, 1.0: 3}
    with pytest.raises(ConfigError):
        tolerance_sweep(bounds, [0.1, 0.0])


def test_catalog_size_scaling_tightens_with_fewer_policies():
    b = pb("A", 0.3, 0.5, lcb=0.3, lift=0.4)
    rows = catalog_size_scaling([BASE, b], [3, 19], 0.05, 1.0, "A")
    assert rows[0]["z_crit"] == pytest.approx(2.394, abs=1e-3)
    assert rows[1]["z_crit"] == pytest.approx(3.008, abs=1e-3)
    assert rows[0]["lcb"] > rows[1]["lcb"]


bound_lists = st.lists(
    st.tuples(st.floats(-1, 1), st.floats(0, 0.5), st.floats(0, 0.3), st.booleans()),
    min_size=1, max_size=12)


def build(items, lam=1.0):
    out = [BASE]
    for i, (lift, half, lost, _) in enumerate(items):
        lcb = lift - half
        out.append(PolicyBounds(f"p{i}", lift, half / 2, lcb, lift + half, lcb - lam * lost,
                                0.05, 2.0))
    return out


@settings(max_examples=300)
@given(bound_lists, st.floats(0, 0.5))
def test_partition_invariants(items, rho):
    bounds = build(items)
    seg = {f"p{i}": ok for i, (*_, ok) in enumerate(items)}
    d = decide(bounds, rho, seg)
    parts = [set(d.certified), set(d.dominated), set(d.unresolved)]
    assert sum(len(p) for p in parts) == len(set().union(*parts)) == len(items)
    assert set().union(*parts) == set(d.gate_passing)
    lead = d.bound(d.leader_id)
    assert d.leader_id in d.shortlist
    for pid in d.dominated:
        assert d.bound(pid).ucb < lead.lcb_support - rho
    assert set(d.shortlist) == set(d.gate_passing) - set(d.dominated)
    assert all(b.lcb_support <= b.lcb <= b.lift_hat <= b.ucb for b in bounds)


@settings(max_examples=200)
@given(bound_lists, st.floats(0, 0.3), st.floats(0, 0.3))
def test_monotone_in_rho(items, r1, r2):
    lo, hi = sorted((r1, r2))
    bounds = build(items)
    assert set(decide(bounds, hi).dominated) <= set(decide(bounds, lo).dominated)
    sweep = tolerance_sweep(bounds, [lo, hi])
    assert sweep[lo] <= sweep[hi]


@settings(max_examples=200)
@given(bound_lists, st.floats(0, 2), st.floats(0, 2))
def test_certified_never_grows_with_lambda(items, l1, l2):
    lo, hi = sorted((l1, l2))
    seg = {f"p{i}": True for i in range(len(items))}
    assert len(decide(build(items, hi), 0.0, seg).certified) <= \
        len(decide(build(items, lo), 0.0, seg).certified)


@settings(max_examples=200)
@given(bound_lists, st.floats(0, 0.3), st.sampled_from([0.5, 2.0, 8.0]))
def test_argmax_invariance_under_rescaling(items, rho, c):
    bounds = build(items)
    scaled = [PolicyBounds(b.policy_id, b.lift_hat * c, b.se_daily * c, b.lcb * c, b.ucb * c,
                           b.lcb_support * c, b.alpha, b.z_crit, is_baseline=b.is_baseline)
              for b in bounds]
    d1, d2 = decide(bounds, rho), decide(scaled, rho * c)
    assume_no_ties = len({b.lcb_support for b in bounds[1:]}) == len(bounds) - 1
    if assume_no_ties:
        assert d1.leader_id == d2.leader_id
        assert set(d1.dominated) == set(d2.dominated) or any(
            math.isclose(b.ucb, d1.bound(d1.leader_id).lcb_support - rho, abs_tol=1e-9)
            for b in bounds)


def test_bonferroni_z_validates():
    with pytest.raises(ConfigError):
        bonferroni_z(0.0, 3)
    with pytest.raises(ConfigError):
        bonferroni_z(0.05, 0)
    assert lower_bound_winner([BASE, pb("a", 0.1, 0.2), pb("b", 0.15, 0.2)]) == "b"


def test_shortlist_stable_over_tolerance_grid():
    # leader well separated, one wide competitor, the rest far below
    bounds = [BASE, pb("P18", 0.4071, 0.52), pb("P11", 0.12, 0.45)]
    bounds += [pb(f"P{i}", 0.0, 0.25 - 0.01 * i) for i in range(1, 11)]
    for rho in (0.0, 0.05, 0.10):
        d = decide(bounds, rho, {"P18": True})
        assert set(d.shortlist) == {"P18", "P11"}
        assert d.certified == ("P18",)
    assert list(tolerance_sweep(bounds, [0.0, 0.05, 0.10]).values()) == [2, 2, 2]
