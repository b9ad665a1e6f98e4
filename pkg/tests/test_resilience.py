import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leoroute.channel import FadingModel, RadioConfig
from leoroute.errors import ConfigError, DomainError
from leoroute.orbital import NO_NEIGHBOR, build_constellation, reduced_shell
from leoroute.resilience import (FailureEvent, OutageParams, PathSelection, ResilienceWeights, apply_failures,
                                 dump_failures, hop_outage, link_resilience_feature, load_failures,
                                 outage_from_mean_snr, path_outage, random_failure_schedule, resilience_score)

from oracles import nakagami_outage_m2, nakagami_power_chi2

M2 = OutageParams(1.0, FadingModel(2.0))


def test_outage_vanishes_as_threshold_goes_to_zero():
    vals = [outage_from_mean_snr(1.0, OutageParams(th, FadingModel(2.0))) for th in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-11


def test_outage_at_mean_equals_closed_form():
    got = outage_from_mean_snr(5.0, OutageParams(5.0, FadingModel(2.0)))
    assert got == pytest.approx(1 - 3 * math.exp(-2), abs=1e-15)
    assert got == pytest.approx(0.5940, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_outage_matches_m2_closed_form(th, mean):
    got = outage_from_mean_snr(mean, OutageParams(th, FadingModel(2.0)))
    assert got == pytest.approx(nakagami_outage_m2(th, mean), abs=1e-12)


def test_outage_matches_monte_carlo():
    rng = np.random.default_rng(7)
    g = nakagami_power_chi2(2, 1_000_000, rng)
    for ratio in (0.3, 1.0, 2.0):
        mc = float(np.mean(g <= ratio))
        assert outage_from_mean_snr(1.0, OutageParams(ratio, FadingModel(2.0))) == pytest.approx(mc, abs=1e-2)


def test_deterministic_link_step_function():
    p = OutageParams(10.0, fading=None)
    assert outage_from_mean_snr(11.0, p) == 0.0
    assert outage_from_mean_snr(9.0, p) == 1.0


def test_zero_mean_snr_is_certain_outage():
    assert outage_from_mean_snr(0.0, M2) == 1.0


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-2, 1e2), st.floats(1e-2, 1e2), st.floats(1.0, 10.0))
def test_outage_monotone(th, mean, k):
    base = outage_from_mean_snr(mean, OutageParams(th, FadingModel(2.0)))
    assert outage_from_mean_snr(mean, OutageParams(th * k, FadingModel(2.0))) >= base
    assert outage_from_mean_snr(mean * k, OutageParams(th, FadingModel(2.0))) <= base


def test_hop_outage_uses_budget_mean_snr():
    b = RadioConfig().budget(2000.0)
    p = OutageParams(1e8, FadingModel(2.0))
    from leoroute.channel import isl_snr

    assert hop_outage(b, p) == pytest.approx(nakagami_outage_m2(1e8, isl_snr(b)), abs=1e-12)


def test_path_outage_examples():
    path = PathSelection.from_walk([0, 1, 2, 3, 4, 5])
    zero = {link: 0.0 for link in path}
    assert path_outage(path, zero) == 0.0
    one = PathSelection.from_walk([0, 1])
    assert path_outage(one, {(0, 1): 0.1}) == pytest.approx(0.1)
    five = {link: 0.01 for link in path}
    assert path_outage(path, five, 0.005, 0.005) == pytest.approx(1 - 0.995**2 * 0.99**5, abs=1e-15)
    assert path_outage(path, five, 0.005, 0.005) == pytest.approx(0.0583, abs=5e-4)


def test_disconnected_selection_rejected():
    with pytest.raises(DomainError):
        path_outage(PathSelection([(0, 1), (2, 3)]), {(0, 1): 0.0, (2, 3): 0.0})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_path_outage_grows_with_links(ps):
    walk = list(range(len(ps) + 1))
    outs = {(i, i + 1): p for i, p in enumerate(ps)}
    prev = 0.0
    for k in range(1, len(ps) + 1):
        cur = path_outage(PathSelection.from_walk(walk[: k + 1]), outs)
        assert cur >= prev - 1e-15
        prev = cur


def test_resilience_examples():
    path = PathSelection.from_walk([0, 1, 2])
    empty = {0: 0.0, 1: 0.0, 2: 0.0}
    assert resilience_score(path, 0.0, empty) == 1.0
    assert resilience_score(path, 0.3, {0: 0.5, 1: 0.9, 2: 0.1}, ResilienceWeights(1.0, 0.0)) == pytest.approx(0.7)
    sel = PathSelection([(0, 1), (2, 3)])
    occ = {0: 0.4, 1: 0.9, 2: 0.7, 3: 0.7}
    assert resilience_score(sel, 0.2, occ, ResilienceWeights(0.5, 0.5)) == pytest.approx(0.7, abs=1e-15)


def test_bottleneck_aggregate_is_conservative():
    sel = PathSelection([(0, 1), (2, 3)])
    occ = {0: 0.4, 1: 0.9, 2: 0.7, 3: 0.7}
    # min over links of min(1-qi, 1-qj): min(0.1, 0.3) = 0.1
    assert resilience_score(sel, 0.2, occ, aggregate="bottleneck") == pytest.approx(0.45)
    with pytest.raises(ConfigError):
        resilience_score(sel, 0.2, occ, aggregate="mean")


def test_empty_selection_scores_outage_term_only():
    assert resilience_score(PathSelection(), 0.2, {}) == pytest.approx(0.4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.floats(0, 1), st.floats(0, 1))
def test_resilience_in_unit_interval(occ, p_out, w1):
    path = PathSelection.from_walk(range(len(occ)))
    r = resilience_score(path, p_out, dict(enumerate(occ)), ResilienceWeights(w1, 1 - w1))
    assert -1e-12 <= r <= 1 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.floats(0, 1))
def test_resilience_is_one_only_when_perfect(occ, p_out):
    path = PathSelection.from_walk(range(len(occ)))
    occ = dict(enumerate(occ))
    r = resilience_score(path, p_out, occ)
    qterm = max(max(1 - occ[i], 1 - occ[j]) for i, j in path)
    if r >= 1 - 1e-12:
        assert p_out <= 2e-12 and qterm >= 1 - 2e-12
    if p_out == 0 and qterm == 1:
        assert r == 1.0


def test_weights_must_be_normalised():
    with pytest.raises(ConfigError):
        ResilienceWeights(0.6, 0.6)
    with pytest.raises(ConfigError):
        ResilienceWeights(-0.1, 1.1)


def test_link_feature_examples():
    occ = {0: 0.5, 1: 0.3}
    assert link_resilience_feature((0, 1), 0.0, [], occ, 0.2) == pytest.approx(0.75)
    assert link_resilience_feature((0, 1), 0.0, [], {0: 0.0, 1: 0.0}, 0.0) == 1.0
    down = [FailureEvent(("link", 0, 1), 0.0, 5.0)]
    assert link_resilience_feature((0, 1), 1.0, down, occ, 0.2) == 0.0
    assert link_resilience_feature((0, 1), 6.0, down, occ, 0.2) == pytest.approx(0.75)
    node = [FailureEvent(("sat", 1), 0.0, 5.0, "hardware")]
    assert link_resilience_feature((0, 1), 1.0, node, occ, 0.2) == 0.0


NB = build_constellation(reduced_shell()).neighbors


def test_empty_schedule_keeps_adjacency():
    eff, failed = apply_failures(NB, [], 3.0)
    assert eff is NB and not failed


def test_node_failure_removes_incident_links():
    eff, failed = apply_failures(NB, [FailureEvent(("sat", 9), 1.0, 2.0)], 2.0)
    assert failed == {9}
    assert np.all(eff[9] == NO_NEIGHBOR)
    assert not np.any(eff == 9)
    # restored after the window
    eff, failed = apply_failures(NB, [FailureEvent(("sat", 9), 1.0, 2.0)], 3.0)
    assert np.array_equal(eff, NB) and not failed


def test_link_failure_is_directional():
    j = int(NB[3, 0])
    eff, _ = apply_failures(NB, [FailureEvent(("link", 3, j), 0.0, 1.0)], 0.5)
    assert eff[3, 0] == NO_NEIGHBOR
    assert 3 in eff[j]


def test_random_schedule_replay_is_deterministic():
    def timeline(seed):
        sched = random_failure_schedule(64, NB, 10, 30.0, seed)
        return [apply_failures(NB, sched, t)[0].tobytes() for t in np.arange(0, 30, 0.5)]

    assert timeline(3) == timeline(3)
    assert timeline(3) != timeline(4)


def test_failure_event_validation():
    with pytest.raises(ConfigError):
        FailureEvent(("sat", 1), 0.0, 0.0)
    with pytest.raises(ConfigError):
        FailureEvent(("sat", 1), 0.0, 1.0, "meteor")


def test_failure_file_round_trip(tmp_path):
    sched = [FailureEvent(("sat", 10), 1.5, 2.0, "hardware"), FailureEvent(("link", 3, 11), 0.0, 4.0)]
    f = tmp_path / "events.csv"
    f.write_text(dump_failures(sched, 8))
    assert load_failures(f, 8) == sched
    f.write_text("sat:1/2,0,1\n")
    with pytest.raises(ConfigError):
        load_failures(f, 8)
