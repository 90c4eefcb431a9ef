import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from ddrs import binsim
from ddrs.binsim import (ArrivalProcess, BinsConfig, BinState, CentralisedAssigner, PreferenceModel,
                         RaceAssigner, WeekConfig, assign_centralised, assign_race,
                         assignment_probabilities, parse_strategy, rms_distance, sample_wait,
                         simulate_week)
from ddrs.exceptions import AllBinsFull, ConfigError, DomainError

residual_vectors = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8)


def direct_law(r, a):
    w = np.asarray(r, dtype=float) ** a
    return w / w.sum()


def test_rate_and_wait():
    assert binsim.rate(4.0, 2) == 16.0
    assert binsim.rate(0.0, 8) == 0.0
    assert sample_wait(2.0, u=np.exp(-1.0)) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        sample_wait(0.0)
    with pytest.raises(ConfigError):
        binsim.rate(1.0, 0.0)
    with pytest.raises(DomainError):
        binsim.rate(-1.0, 1.0)


@pytest.mark.parametrize("a", [1, 2, 8])
def test_probabilities_match_direct_law(a):
    np.testing.assert_allclose(assignment_probabilities([200, 100, 50], a), direct_law([200, 100, 50], a),
                               rtol=1e-12)


@pytest.mark.property
@settings(max_examples=200, deadline=None)
@given(residual_vectors, st.floats(0.01, 64.0))
def test_probabilities_form_a_distribution(r, a):
    q = assignment_probabilities(r, a)
    assert np.all(q >= 0)
    assert abs(q.sum() - 1.0) <= 1e-12


@pytest.mark.property
@settings(max_examples=200, deadline=None)
@given(residual_vectors, st.floats(0.01, 16.0), st.floats(1e-3, 1e3))
def test_scale_invariance(r, a, c):
    q1 = assignment_probabilities(r, a)
    q2 = assignment_probabilities(np.asarray(r) * c, a)
    np.testing.assert_allclose(q1, q2, atol=1e-12)


@pytest.mark.property
@settings(max_examples=200, deadline=None)
@given(residual_vectors, st.floats(0.01, 16.0), st.integers(0, 7), st.floats(1.0, 10.0))
def test_growing_residual_never_lowers_its_share(r, a, j, factor):
    j = j % len(r)
    r2 = list(r)
    r2[j] *= factor
    assert assignment_probabilities(r2, a)[j] >= assignment_probabilities(r, a)[j] - 1e-12


@pytest.mark.property
def test_argmax_share_grows_with_exponent():
    r = [200, 100, 50, 199]
    shares = [assignment_probabilities(r, a)[0] for a in (1, 2, 4, 8, 16, 32, 64, 512, 4096)]
    assert all(b >= a for a, b in zip(shares, shares[1:]))
    assert shares[-1] > 0.99


def test_full_bins():
    q = assignment_probabilities([0, 10, 0], 3)
    np.testing.assert_array_equal(q, [0, 1, 0])
    with pytest.raises(AllBinsFull):
        assignment_probabilities([0, 0], 1)
    with pytest.raises(AllBinsFull):
        assign_race([0, 0], 1, mode="time-driven")
    with pytest.raises(AllBinsFull):
        assign_centralised([0, 0])
    with pytest.raises(DomainError):
        assignment_probabilities([-1, 5], 1)


@pytest.mark.parametrize("a", [1, 2])
def test_time_driven_matches_analytic(a):
    rng = np.random.default_rng(5)
    r = [200, 100, 50]
    draws = np.array([assign_race(r, a, "time-driven", rng) for _ in range(20000)])
    counts = np.bincount(draws, minlength=3)
    assert chisquare(counts, 20000 * direct_law(r, a)).pvalue > 0.001


def test_time_driven_waits_are_exponential_in_total_rate():
    rng = np.random.default_rng(9)
    r = np.array([0.5, 0.25])
    waits = [assign_race(r, 1, "time-driven", rng, base_rate=2.0, return_wait=True)[1] for _ in range(20000)]
    assert np.mean(waits) == pytest.approx(1 / (2.0 * r.sum()), rel=0.03)


def test_unknown_mode():
    with pytest.raises(ConfigError):
        assign_race([1, 2], 1, mode="bogus")


def test_centralised_picks_emptiest_and_splits_ties():
    assert assign_centralised([5, 9, 3]) == 1
    rng = np.random.default_rng(0)
    picks = {assign_centralised([7, 7, 1], rng) for _ in range(100)}
    assert picks == {0, 1}


def test_bin_state_and_effective_residuals():
    bins = [BinState(0, 200, 50, 0.0), BinState(1, 200, 200, 0.5), BinState(2, 100, 0, 1.0)]
    assert bins[0].residual == 150
    np.testing.assert_allclose(binsim.effective_residuals(bins, 1.0), [0.75, 0.0, 1.0])
    np.testing.assert_allclose(binsim.effective_residuals(bins, 0.5), [0.875, 0.0, 0.5])
    with pytest.raises(DomainError):
        BinState(0, 10, 11)


def test_estimators():
    X = np.array([[200, 100, 50], [0, 1, 0]])
    race = RaceAssigner(exponent=8, random_state=0).fit()
    np.testing.assert_allclose(race.predict_proba(X)[0], direct_law([200, 100, 50], 8))
    assert race.predict(X)[1] == 1
    central = CentralisedAssigner(random_state=0).fit()
    np.testing.assert_array_equal(central.predict(X), [0, 1])
    assert race.get_params() == {"exponent": 8, "mode": "analytic", "random_state": 0}


def test_arrival_profile_integrates_to_daily_mean():
    arr = ArrivalProcess()
    m = arr.minute_means()
    assert m.size == 1440
    assert m.sum() == pytest.approx(270.0, rel=1e-12)
    assert np.argmax(m) // 60 in (7, 8)
    hours = np.linspace(0, 24, 24 * 600, endpoint=False)
    assert np.mean(arr.intensity(hours)) * 24 == pytest.approx(270.0, rel=1e-3)


@pytest.mark.parametrize("name,expected", [("unsupervised", ("unsupervised", None)),
                                           ("centralised", ("centralised", None)),
                                           ("decentralised", ("decentralised", 8.0)),
                                           ("decentralised(1)", ("decentralised", 1.0)),
                                           ("decentralised(a=8)", ("decentralised", 8.0))])
def test_parse_strategy(name, expected):
    assert parse_strategy(name) == expected


def test_parse_strategy_rejects_unknown():
    with pytest.raises(ConfigError):
        parse_strategy("random")


@pytest.mark.property
@pytest.mark.parametrize("strategy", ["unsupervised", "centralised", "decentralised(a=1)"])
@pytest.mark.parametrize("seed", [0, 1])
def test_week_conservation(strategy, seed):
    cfg = WeekConfig(horizon_days=2)
    rep = simulate_week(cfg, strategy, np.random.default_rng(seed))
    assert rep.recycled + rep.overflowed == rep.arrivals
    assert rep.levels.shape == (2 * 1440, 3)
    assert np.all((rep.levels >= 0) & (rep.levels <= 200))
    assert rep.cumulative_overflow[-1] == rep.overflowed
    assert np.all(np.diff(rep.cumulative_overflow) >= 0)


def test_week_shares_arrivals_across_strategies():
    cfg = WeekConfig(horizon_days=2)
    a = simulate_week(cfg, "unsupervised", np.random.default_rng(4))
    b = simulate_week(cfg, "centralised", np.random.default_rng(4))
    assert a.arrivals == b.arrivals


def test_week_is_deterministic():
    cfg = WeekConfig(horizon_days=1)
    a = simulate_week(cfg, "decentralised(a=8)", np.random.default_rng(3))
    b = simulate_week(cfg, "decentralised(a=8)", np.random.default_rng(3))
    np.testing.assert_array_equal(a.levels, b.levels)
    assert rms_distance(a, b) == 0.0


def test_centralised_keeps_levels_balanced():
    rep = simulate_week(WeekConfig(), "centralised", np.random.default_rng(0))
    assert rep.overflowed == 0
    spread = rep.levels.max(axis=1) - rep.levels.min(axis=1)
    assert spread.max() <= 1


def test_nightly_emptying_when_over_threshold():
    cfg = WeekConfig(horizon_days=2, bins=BinsConfig(initial_levels=[190, 0, 0]),
                     arrivals=ArrivalProcess(daily_mean=0.0))
    rep = simulate_week(cfg, "centralised", np.random.default_rng(0))
    assert rep.levels[1439, 0] == 190
    assert rep.levels[1440, 0] == 0
    assert rep.emptyings == 1


def test_all_full_overflow_under_race():
    cfg = WeekConfig(horizon_days=1, bins=BinsConfig(count=2, capacity=1, initial_levels=[1, 1]),
                     preferences=PreferenceModel([0.5, 0.5], [0.5, 0.5]), empty_threshold_fraction=1.0)
    rep = simulate_week(cfg, "decentralised(a=8)", np.random.default_rng(0))
    assert rep.recycled == 0 and rep.overflowed == rep.arrivals > 0


def test_time_driven_mode_records_waits():
    cfg = WeekConfig(horizon_days=1, race_mode="time-driven", base_rate=60.0)
    rep = simulate_week(cfg, "decentralised(a=8)", np.random.default_rng(0))
    assert rep.waits.size == rep.recycled
    assert rep.summary()["signal_wait_mean_s"] > 0


def test_week_config_validation():
    with pytest.raises(ConfigError) as exc:
        WeekConfig(preferences=PreferenceModel([1, 1], [1, 1]))
    assert exc.value.path == "preferences.weekday"
    with pytest.raises(ConfigError):
        WeekConfig(strategy="nope")
    with pytest.raises(ConfigError):
        BinsConfig(initial_levels=[300, 0, 0])
    with pytest.raises(ConfigError):
        ArrivalProcess(peak_fraction=1.5)


@pytest.mark.parametrize("mode", ["analytic", "time-driven"])
def test_vectorised_sampler(mode):
    rng = np.random.default_rng(1)
    w = binsim.sample_race([200, 100, 50], 2, 50000, mode, rng)
    counts = np.bincount(w, minlength=3)
    assert chisquare(counts, 50000 * direct_law([200, 100, 50], 2)).pvalue > 0.001
    rows = binsim.sample_race([[0, 3, 0], [1, 0, 0]], 5, mode=mode, rng=rng)
    np.testing.assert_array_equal(rows, [1, 0])
    with pytest.raises(AllBinsFull):
        binsim.sample_race([[0, 0]], 1, mode=mode)
