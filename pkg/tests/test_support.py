import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reservecert.decision import PolicyBounds
from reservecert.errors import ConfigError, DegeneratePolicyError
from reservecert.policy_catalog import (BASELINE, Catalog, Policy, build_catalog,
                                        fit_quantiles)
from reservecert.replay import replay_policy
from reservecert.support import (BoundCalculatorInputs, boundary_sweep, localization_error_bound,
                                 localized_lift, localized_selection, pairwise_boundary_mass,
                                 q_local_radius, ranking_certified, regret_bound,
                                 required_boundary_sample)
from reservecert.synth import GeneratorConfig, generate_log

from helpers import make_panel

ADD2 = Policy("A2", "absolute-increment", increment="2")


def add(k, pid=None):
    return Policy(pid or f"add{k}", "absolute-increment", increment=str(k))


def test_window_count_example():
    # floors 0 with "add 0.5"-style distances: bid - floor' = 0.5, 3, 8, 40, 120
    panel = make_panel([0] * 5, [1, 4, 9, 41, 121], [0] * 5, [False] * 5)
    cat = Catalog((BASELINE, Policy("A", "absolute-increment", increment="0.5")))
    rows = boundary_sweep(panel, cat, None, [10])
    assert [r.n_boundary for r in rows] == [3]


def test_window_covering_everything_and_penalty_law():
    panel = make_panel([0] * 16, list(range(1, 17)), [0] * 16, [False] * 16)
    cat = Catalog((BASELINE, add(1, "A")))
    b = PolicyBounds("A", 0.1, 0.01, 0.05, 0.15, 0.05, 0.05, 2.0)
    rows = boundary_sweep(panel, cat, None, [3, 15, 1000], kappa=2.0, bounds=[b])
    assert [r.n_boundary for r in rows] == [4, 16, 16]
    assert rows[0].penalty == pytest.approx(2 * rows[1].penalty)
    assert rows[1].penalized_lcb == pytest.approx(0.05 - 2.0 / 4)


def test_empty_window_gives_minus_infinity():
    panel = make_panel([0, 0], [100, 200], [0, 0], [False, False])
    cat = Catalog((BASELINE, add(1, "A")))
    b = PolicyBounds("A", 0.1, 0.01, 0.05, 0.15, 0.05, 0.05, 2.0)
    row, = boundary_sweep(panel, cat, None, [1], bounds=[b])
    assert row.n_boundary == 0 and row.penalized_lcb == -math.inf


def test_fractional_window_is_exact():
    panel = make_panel([0, 0, 0], [7, 8, 9], [0, 0, 0], [False] * 3)
    cat = Catalog((BASELINE, Policy("A", "absolute-increment", increment="0.5")))
    rows = boundary_sweep(panel, cat, None, [7.5, 8])
    assert [r.n_boundary for r in rows] == [2, 2]


def test_sweep_rejects_bad_grid():
    panel = make_panel([0], [1], [0], [False])
    cat = Catalog((BASELINE, add(1, "A")))
    with pytest.raises(ConfigError):
        boundary_sweep(panel, cat, None, [5, 2])


def radius_panel():
    # candidate floor = floor + 1 on every row; distances |bid - (floor+1)| = 1, 2, 5, 9
    return make_panel([0, 0, 0, 0], [2, 3, 6, 10], [0, 0, 0, 0], [False] * 4)


@pytest.mark.parametrize("q,radius", [(0.25, 1), (0.5, 2), (1.0, 9)])
def test_q_local_radius_order_statistics(q, radius):
    est = q_local_radius(radius_panel(), add(1), None, q)
    assert est.radius == radius
    assert est.n_contrast == 4


def test_radius_counts_all_rows_for_mass():
    # gated rule: rows 4 and 5 keep their floor; row 4 lies inside the radius, row 5 far out
    panel = make_panel([0, 0, 0, 50, 100], [2, 3, 6, 51, 20], [0] * 5, [False] * 5)
    gated = Policy("G", "margin-gated-increment", increment="1", gap_threshold="2")
    est = q_local_radius(panel, gated, None, 1.0)
    assert est.n_contrast == 3 and est.radius == 5
    assert est.boundary_mass == 0.8


def test_localized_lift_three_row_example(three_row_panel):
    est = localized_lift(three_row_panel, ADD2, None, 1.0)
    assert est.localized_lift == float(Fraction(-5, 9))


def test_baseline_is_degenerate(three_row_panel):
    with pytest.raises(DegeneratePolicyError):
        localized_lift(three_row_panel, BASELINE, None, 1.0)
    with pytest.raises(ConfigError):
        q_local_radius(three_row_panel, ADD2, None, 0.0)


@pytest.fixture(scope="module")
def synth():
    panel = generate_log(GeneratorConfig(seed=5, n_rows=20_000, n_days=10))
    return panel, build_catalog("paper19", fit_quantiles(panel))


def test_localized_selection_runs(synth):
    panel, cat = synth
    sel = localized_selection(panel, cat, cat.quantiles, [0.05, 0.2, 1.0], 50, seed=3)
    assert [lvl.q for lvl in sel.levels] == [0.05, 0.2, 1.0]
    for lvl in sel.levels:
        assert sum(lvl.winner_frequency.values()) == pytest.approx(1.0)
    full = {e.policy_id: e.localized_lift for e in sel.levels[-1].estimates}
    for pid, lift in full.items():
        assert lift == pytest.approx(replay_policy(panel, cat.get(pid), cat.quantiles).lift,
                                     rel=1e-12, abs=1e-15)
    again = localized_selection(panel, cat, cat.quantiles, [0.05, 0.2, 1.0], 50, seed=3)
    assert again == sel


def test_dominant_policy_wins_every_draw():
    gen = generate_log(GeneratorConfig(seed=8, n_rows=4000, n_days=6, payment_fraction=0.0))
    # raising to Q50 on every row beats a tiny increment row by row on this panel
    cat = Catalog((BASELINE, add(1, "tiny"), Policy("big", "all-floor-quantile", quantile="q50")),
                  fit_quantiles(gen))
    sel = localized_selection(gen, cat, cat.quantiles, [1.0], 200, seed=1)
    lvl = sel.levels[0]
    best = lvl.ranking[0]
    assert lvl.winner_frequency[best] >= 0.99


def test_pairwise_example():
    panel = make_panel([0] * 4, [3, 6, 9, 20], [0, 0, 0, 0], [True] * 4)
    a, b = add(5, "a"), add(9, "b")
    m = pairwise_boundary_mass(panel, a, b, None)
    assert m.mass == 0.5 and not m.degenerate
    assert pairwise_boundary_mass(panel, b, a, None).mass == 0.5


def test_pairwise_identical_rules_degenerate():
    panel = make_panel([0] * 4, [3, 6, 9, 20], [0, 0, 0, 0], [True] * 4)
    m = pairwise_boundary_mass(panel, add(5, "a"), add(5, "b"), None)
    assert m.mass == 0 and m.degenerate


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 18), st.integers(0, 18))
def test_pairwise_symmetric(seed, i, j):
    panel = generate_log(GeneratorConfig(seed=seed, n_rows=400, n_days=2))
    cat = build_catalog("paper19", fit_quantiles(panel))
    a, b = cat.policies[i], cat.policies[j]
    assert pairwise_boundary_mass(panel, a, b, cat.quantiles).mass == \
        pairwise_boundary_mass(panel, b, a, cat.quantiles).mass
    assert pairwise_boundary_mass(panel, a, a, cat.quantiles).mass == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 18))
def test_monotone_maps(seed, k):
    panel = generate_log(GeneratorConfig(seed=seed, n_rows=1000, n_days=2))
    cat = build_catalog("paper19", fit_quantiles(panel))
    policy = cat.policies[k]
    rows = boundary_sweep(panel, cat.subset([policy.id]), cat.quantiles, [1, 2, 5, 10, 50, 200])
    counts = [r.n_boundary for r in rows]
    assert counts == sorted(counts)
    try:
        radii = [q_local_radius(panel, policy, cat.quantiles, q).radius
                 for q in (0.01, 0.1, 0.5, 0.9, 1.0)]
    except DegeneratePolicyError:
        return
    assert radii == sorted(radii)


# ------------------------------------------------------------ calculators

def test_required_boundary_sample():
    assert required_boundary_sample(1, 0.1, 0.05) == pytest.approx(math.log(10) / 0.01, rel=1e-12)
    assert required_boundary_sample(1, 0.1, 0.05) == pytest.approx(230.26, abs=0.005)
    assert required_boundary_sample(1, 0.0, 0.05) == math.inf
    assert required_boundary_sample(1, 0.05, 0.05) == pytest.approx(
        4 * required_boundary_sample(1, 0.1, 0.05), rel=1e-12)
    with pytest.raises(ConfigError):
        required_boundary_sample(1, 0.1, 0.6)


def test_localization_error_bound_example():
    inputs = BoundCalculatorInputs(B=1, mu0=1, n=10 ** 6, catalog_size=19, delta=0.05, C=1,
                                   L_pi=0.01)
    log_term = math.log(2 * 19 / 0.05)
    terms = (math.sqrt(0.1 * log_term / 1e6), log_term / 1e6, 0.01)
    assert terms[0] == pytest.approx(8.144e-4, abs=1e-7)
    assert terms[1] == pytest.approx(6.633e-6, abs=1e-9)
    value = localization_error_bound(inputs, 0.1, 1.0)
    assert value == pytest.approx(sum(terms), rel=1e-12)
    assert value == pytest.approx(0.01082, abs=1e-5)
    doubled = localization_error_bound(BoundCalculatorInputs(
        B=1, mu0=1, n=10 ** 6, catalog_size=19, delta=0.05, L_pi=0.02), 0.1, 1.0)
    assert doubled - value == pytest.approx(0.01, rel=1e-9)


def test_localization_bound_vanishes():
    big = BoundCalculatorInputs(n=10 ** 15, catalog_size=3)
    assert localization_error_bound(big, 1.0, 0.0) < 1e-6


def test_ranking_certified():
    assert ranking_certified(0.12, 0.02, 0.02, 0.06, 1.0)
    assert ranking_certified(1e-9, 0, 0, 0, 1.0)
    margin = 0.02 + 0.02 + 0.06 / 1.0
    assert not ranking_certified(margin, 0.02, 0.02, 0.06, 1.0)


def test_regret_bound():
    inputs = BoundCalculatorInputs(B=1, mu0=1, n=10 ** 6, catalog_size=19, delta=0.05, L_pi=0.01)
    eps = localization_error_bound(inputs, 0.1, 1.0)
    assert regret_bound(inputs, [(0.1, 1.0)]) == pytest.approx(2 * eps)
    assert regret_bound(inputs, [(0.1, 1.0)] * 5) == pytest.approx(0.02164, abs=1e-5)
    worst = regret_bound(inputs, [(0.01, 0.0), (0.1, 1.0), (0.05, 0.5)])
    assert worst == pytest.approx(2 * eps)
