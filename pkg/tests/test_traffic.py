import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leoroute.errors import ConfigError, ConsistencyError
from leoroute.orbital import Gateway
from leoroute.traffic import Packet, TrafficGenerator, TrafficPattern, generate, mark_delivered


def gws(weights):
    return [Gateway.from_degrees(f"g{k}", 0.0, 10.0 * k, w) for k, w in enumerate(weights)]


def test_zero_rate_generates_nothing():
    assert generate(TrafficPattern("uniform", 0.0), gws([1, 1, 1]), 1.0, 0.0) == []


def test_uniform_destination_histogram():
    gen = TrafficGenerator(TrafficPattern("uniform", 1.0, seed=1), gws([1, 1, 1]))
    counts = np.zeros(3)
    n = 1_000_000
    for s in range(3):
        d = gen.sample_destinations(s, n // 3)
        assert not np.any(d == s)
        counts += np.bincount(d, minlength=3)
    frac = counts / counts.sum()
    assert np.all(np.abs(frac - 1 / 3) < 0.01 / 3)


def test_population_destination_ratio():
    gen = TrafficGenerator(TrafficPattern("population", 1.0, seed=2), gws([1, 2, 1]))
    d = gen.sample_destinations(0, 1_000_000)
    c = np.bincount(d, minlength=3)
    assert c[0] == 0
    assert c[1] / c[2] == pytest.approx(2.0, rel=0.02)


def test_population_source_rates_follow_weights():
    gen = TrafficGenerator(TrafficPattern("population", 4e6), gws([1, 2, 1]))
    assert list(gen.source_rates) == [1e6, 2e6, 1e6]


def test_arrival_count_within_three_sigma():
    pat = TrafficPattern("uniform", 64e3 * 50, seed=9)
    gen = TrafficGenerator(pat, gws([1, 1, 1, 1]))
    total = 0
    for k in range(2000):
        total += len(gen.generate(1e-2, k * 1e-2))
    mean = 4 * 50 * 20.0
    assert abs(total - mean) < 3 * math.sqrt(mean)


def test_seeded_determinism():
    def run():
        gen = TrafficGenerator(TrafficPattern("population", 5e7, seed=4), gws([1, 3, 2, 5]))
        return [(p.src, p.dst, p.created_at) for k in range(50) for p in gen.generate(1e-3, k * 1e-3)]

    a, b = run(), run()
    assert a == b and len(a) > 20


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["uniform", "population"]))
def test_no_local_traffic(seed, kind):
    gen = TrafficGenerator(TrafficPattern(kind, 5e7, seed=seed), gws([1, 0, 3, 2]))
    for p in gen.generate(1e-2, 0.0):
        assert p.src != p.dst
        assert 0.0 <= p.created_at < 1e-2


def test_packets_sorted_by_creation():
    gen = TrafficGenerator(TrafficPattern("uniform", 5e7, seed=1), gws([1, 1, 1]))
    ts = [p.created_at for p in gen.generate(1e-2, 3.0)]
    assert ts == sorted(ts)


def test_configuration_errors():
    with pytest.raises(ConfigError):
        generate(TrafficPattern("uniform", 1.0), [], 1.0, 0.0)
    with pytest.raises(ConfigError):
        TrafficPattern("bursty", 1.0)
    with pytest.raises(ConfigError):
        TrafficPattern("uniform", -1.0)
    with pytest.raises(ConfigError):
        TrafficGenerator(TrafficPattern("population", 1.0), gws([0, 0]))


def test_mark_delivered_latency():
    p = Packet(0, 64e3, "a", "b", 1.000)
    rec = mark_delivered(p, 1.040)
    assert rec.latency_s == pytest.approx(0.040, abs=1e-12)


def test_delivery_before_creation_rejected():
    with pytest.raises(ConsistencyError):
        mark_delivered(Packet(0, 64e3, "a", "b", 1.0), 0.5)


def test_double_delivery_rejected():
    p = Packet(0, 64e3, "a", "b", 1.0)
    mark_delivered(p, 1.1)
    with pytest.raises(ConsistencyError):
        mark_delivered(p, 1.2)


def test_delivery_after_drop_rejected():
    p = Packet(0, 64e3, "a", "b", 1.0, drop_reason="ttl")
    with pytest.raises(ConsistencyError):
        mark_delivered(p, 1.2)
