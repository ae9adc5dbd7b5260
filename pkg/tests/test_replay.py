import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reservecert.auction_log import AuctionRow, partition_segments
from reservecert.errors import UndefinedLiftError
from reservecert.policy_catalog import (BASELINE, Policy, QuantileSet, build_catalog,
                                        fit_quantiles)
from reservecert.replay import (ReplaySummary, policy_yields, replay_catalog, replay_policy,
                                replay_row)
from reservecert.synth import GeneratorConfig, generate_log, oracle_panel_lift

from helpers import make_panel

ADD2 = Policy("A2", "absolute-increment", increment="2")


def row(floor, bid, payment, filled):
    return AuctionRow("d", "a", "x", "r", "c", floor, bid, payment, filled)


def test_replay_row_examples():
    assert replay_row(row(2, 10, 4, True), 4) == 4
    assert replay_row(row(5, 5, 5, True), 7) == 0
    assert replay_row(row(1, 8, 0, False), 1) == 0
    assert replay_row(row(1, 8, 0, False), 3) == 0


def test_three_row_example(three_row_panel):
    s = replay_policy(three_row_panel, ADD2, None)
    assert s.lift == float(Fraction(-5, 9))
    assert s.mean_yield == float(Fraction(4, 3))
    assert s.retained_share == 0.5
    assert s.daily_lifts["d1"] == float(Fraction(-5, 9))
    assert math.isnan(s.daily_lifts["d2"])


def test_baseline_summary_exact(three_row_panel):
    s = replay_policy(three_row_panel, BASELINE, None)
    assert s.lift == 0.0 and s.retained_share == 1.0 and s.is_baseline


def test_identity_off_boundary():
    panel = make_panel([1, 2, 3], [50, 60, 70], [40, 50, 60], [True] * 3)
    s = replay_policy(panel, ADD2, None)
    assert s.lift == 0.0 and s.retained_share == 1.0


def test_zero_baseline_is_undefined():
    panel = make_panel([1, 2], [5, 6], [0, 0], [False, False])
    with pytest.raises(UndefinedLiftError):
        replay_policy(panel, ADD2, None)


def test_paper19_on_one_row():
    panel = make_panel([0], [1], [1], [True], day=["d"])
    cat = build_catalog("paper19", QuantileSet(10, 20, 30))
    lifts = {s.policy_id: s.lift for s in replay_catalog(panel, cat)}
    dropped = {"P6", "P7", "P8", "P12", "P13"}
    for pid, lift in lifts.items():
        assert lift == (-1.0 if pid in dropped else 0.0), pid


def test_summary_round_trip(three_row_panel):
    grid = partition_segments(three_row_panel, ["advertiser"])
    s = replay_policy(three_row_panel, ADD2, None, segments=grid)
    again = ReplaySummary.from_dict(s.to_dict())
    assert again.lift == s.lift
    assert set(again.segment_lifts) == set(s.segment_lifts)


@pytest.fixture(scope="module")
def synth_panel():
    panel = generate_log(GeneratorConfig(seed=11, n_rows=30_000))
    return panel, build_catalog("paper19", fit_quantiles(panel))


def test_workers_and_partitions_do_not_change_results(synth_panel):
    panel, cat = synth_panel
    ref = replay_catalog(panel, cat)
    for workers, part in [(4, 1 << 16), (16, 1000), (1, 777)]:
        other = replay_catalog(panel, cat, workers=workers, partition_rows=part)
        assert [s.to_dict() for s in other] == [s.to_dict() for s in ref]


def test_lift_matches_mean_yields(synth_panel):
    panel, cat = synth_panel
    sums = replay_catalog(panel, cat)
    mu0 = sums[0].mean_yield
    for s in sums:
        assert s.lift == pytest.approx((s.mean_yield - mu0) / mu0, rel=1e-12, abs=1e-15)
        assert 0 <= s.retained_share <= 1
        assert set(s.daily_lifts) == set(panel.days)
        assert s.lift == pytest.approx(oracle_panel_lift(panel, cat.get(s.policy_id),
                                                         cat.quantiles), rel=1e-12, abs=1e-15)


def test_additivity_against_fsum(synth_panel):
    panel, cat = synth_panel
    for policy in cat:
        ys = policy_yields(panel, policy, cat.quantiles)
        s = replay_policy(panel, policy, cat.quantiles)
        assert s.mean_yield * panel.n == pytest.approx(math.fsum(ys.as_float()), rel=1e-12)


def test_segment_means_aggregate(synth_panel):
    panel, cat = synth_panel
    grid = partition_segments(panel, ["advertiser"])
    s = replay_policy(panel, cat.get("P18"), cat.quantiles, segments=grid)
    weighted = sum(seg.n * seg.mean_yield for seg in s.segment_lifts.values()) / panel.n
    assert weighted == pytest.approx(s.mean_yield, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 30), st.integers(0, 30))
def test_monotone_retention_and_yield_floor(seed, a, b):
    panel = generate_log(GeneratorConfig(seed=seed, n_rows=500, n_days=3))
    lo, hi = sorted((a, b))
    y_lo = policy_yields(panel, Policy("lo", "absolute-increment", increment=str(lo)), None)
    y_hi = policy_yields(panel, Policy("hi", "absolute-increment", increment=str(hi)), None)
    assert y_hi.retained.sum() <= y_lo.retained.sum()
    vals = y_hi.as_float()
    assert ((vals == 0) | (vals >= panel.payment)).all()
