"""Small scenarios shared across test modules."""
from __future__ import annotations

import math

import numpy as np

from leoroute.channel import RadioConfig
from leoroute.orbital import Constellation, ConstellationParams, Gateway, reduced_shell
from leoroute.routing import RoutingPolicy
from leoroute.simcore import EngineConfig

TORUS4 = ConstellationParams(4, 4, 550.0, math.radians(53), phasing_offset=math.pi / 16)


def subsatellite_gateways(params, t=0.0, every=1):
    """One gateway directly under every ``every``-th satellite at time ``t``."""
    pos = Constellation(params).positions_ecef(t)
    out = []
    for i in range(0, len(pos), every):
        v = pos[i]
        lat = math.degrees(math.asin(v[2] / np.linalg.norm(v)))
        lon = math.degrees(math.atan2(v[1], v[0]))
        out.append(Gateway.from_degrees(f"g{i}", lat, lon))
    return out


def city_gateways():
    return [
        Gateway.from_degrees("tokyo", 35.7, 139.7, 37.0),
        Gateway.from_degrees("delhi", 28.6, 77.2, 31.0),
        Gateway.from_degrees("saopaulo", -23.5, -46.6, 22.0),
        Gateway.from_degrees("cairo", 30.0, 31.2, 21.0),
        Gateway.from_degrees("newyork", 40.7, -74.0, 19.0),
        Gateway.from_degrees("lagos", 6.5, 3.4, 15.0),
    ]


def torus_config(**kw):
    base = dict(constellation=TORUS4, gateways=subsatellite_gateways(TORUS4), radio=RadioConfig(bandwidth_hz=5e6),
                frozen_time=True, min_elevation=math.radians(10), coverage_fallback="nearest", horizon=0.2)
    base.update(kw)
    return EngineConfig(**base)


def desk_config(**kw):
    base = dict(constellation=ConstellationParams(8, 8, 550.0, math.radians(53), phasing_offset=math.radians(2.8125)),
                gateways=city_gateways(), radio=RadioConfig(bandwidth_hz=1e6), min_elevation=math.radians(10),
                coverage_fallback="nearest", horizon=0.5)
    base.update(kw)
    return EngineConfig(**base)


class Idle(RoutingPolicy):
    """Never asked to route in traffic-free scenarios."""

    name = "idle"

    def choose(self, engine, sat, pkt):
        return None


class FixedPort(RoutingPolicy):
    """Always the same port (tests only)."""

    name = "fixed"

    def __init__(self, port):
        super().__init__()
        self.port = port

    def choose(self, engine, sat, pkt):
        self.decisions += 1
        return self.port


class SelfLoopOnce(RoutingPolicy):
    """Sends each packet once back to its own satellite, then defers to ``inner``."""

    name = "self-loop"

    def __init__(self, inner):
        super().__init__()
        self.inner = inner

    def reset(self, engine):
        self.inner.reset(engine)

    def on_step(self, engine):
        self.inner.on_step(engine)

    def next_hop(self, engine, sat, pkt):
        if sat not in pkt.hop_trace[:-1]:
            return 0, sat
        return self.inner.next_hop(engine, sat, pkt)


def reduced():
    return reduced_shell()


def train_torus(seed=0, iterations=20_000, gamma=0.8):
    """Global DDQN on the 4x4 torus with light uniform training traffic."""
    from leoroute.learning import train_global
    from leoroute.simcore import Engine
    from leoroute.traffic import TrafficPattern

    pattern = TrafficPattern("uniform", 64e3 * 200, seed=3)
    return train_global(lambda pol: Engine(torus_config(traffic=(pattern,), horizon=1e9), pol),
                        iterations=iterations, seed=seed, gamma=gamma)


def greedy_hops(engine, net, src, dst, limit=40):
    """Hops the greedy policy of ``net`` takes from satellite ``src`` to ``dst``'s attachment."""
    from leoroute.learning.ddqn import masked_argmax

    target = engine.snapshot.gateway_attachment[dst]
    cur, hops = src, 0
    while cur != target and hops < limit:
        s, mask, _ = engine.observation(cur, dst)
        cur = int(engine.eff_neighbors[cur, masked_argmax(net(s), mask)])
        hops += 1
    return hops


def torus_optimality(net):
    """Share of ordered satellite pairs where the greedy path length equals the torus distance."""
    from leoroute.simcore import Engine
    from oracles import torus_hops

    e = Engine(torus_config(), Idle())
    ok = total = 0
    for s in range(16):
        for t in range(16):
            if s != t:
                total += 1
                ok += greedy_hops(e, net, s, f"g{t}") == torus_hops(4, 4, s, t)
    return ok / total


# PASS/FAIL lines collected by the acceptance tests and echoed in the terminal summary
VERDICTS: list = []


def verdict(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
    VERDICTS.append(line)
    print(line)
    return ok
