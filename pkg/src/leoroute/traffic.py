"""Gateway-to-gateway traffic generation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, ConsistencyError

DEFAULT_PACKET_BITS = 64e3


@dataclass(slots=True, eq=False)
class Packet:
    id: int
    size_bits: float
    src: str
    dst: str
    created_at: float
    tagged: bool = False
    hop_trace: list = field(default_factory=list)  # flat satellite indices
    hops: list = field(default_factory=list)  # HopLatency per traversed link, uplink first
    delivered_at: Optional[float] = None
    drop_reason: Optional[str] = None
    # engine bookkeeping
    enqueued_at: float = 0.0
    tx_start: Optional[float] = None
    remaining_bits: float = 0.0
    stale: bool = False
    hop_outages: list = field(default_factory=list)
    hop_occupancy: list = field(default_factory=list)  # (q_sender, q_receiver) per ISL hop
    pending: object = None  # learning transition awaiting its next state
    next_node: int = -1

    @property
    def done(self) -> bool:
        return self.delivered_at is not None or self.drop_reason is not None


class LatencyRecord(NamedTuple):
    packet_id: int
    src: str
    dst: str
    created: float
    delivered: float
    hops: int
    latency_s: float
    tagged: bool


@dataclass(frozen=True)
class TrafficPattern:
    kind: str = "uniform"  # uniform | population
    rate_bps: float = 0.0  # per gateway (uniform) or network total (population)
    seed: int = 0
    packet_bits: float = DEFAULT_PACKET_BITS
    tagged: bool = False

    def __post_init__(self):
        if self.kind not in ("uniform", "population"):
            raise ConfigError("traffic.kind", f"unknown pattern {self.kind!r}")
        if self.rate_bps < 0:
            raise ConfigError("traffic.rate_bps", "must be nonnegative")
        if not self.packet_bits > 0:
            raise ConfigError("traffic.packet_bits", "must be positive")


class TrafficGenerator:
    """Poisson arrivals per source gateway; local traffic is never generated."""

    def __init__(self, pattern: TrafficPattern, gateways):
        if len(gateways) < 2:
            raise ConfigError("gateways", "at least two gateways are required")
        self.pattern = pattern
        self.ids = [g.id for g in gateways]
        w = np.array([g.population_weight for g in gateways], dtype=float)
        n = len(gateways)
        if pattern.kind == "population":
            if w.sum() <= 0:
                raise ConfigError("gateways.population_weight", "weights must sum to a positive value")
            self.source_rates = pattern.rate_bps * w / w.sum()
            self._dest_p = []
            for s in range(n):
                ws = w.copy()
                ws[s] = 0.0
                if ws.sum() <= 0:
                    ws = np.ones(n)
                    ws[s] = 0.0
                self._dest_p.append(ws / ws.sum())
        else:
            self.source_rates = np.full(n, pattern.rate_bps, dtype=float)
            self._dest_p = None
        self.rng = np.random.default_rng(pattern.seed)

    def sample_destinations(self, src: int, count: int) -> np.ndarray:
        n = len(self.ids)
        if self._dest_p is None:
            k = self.rng.integers(0, n - 1, size=count)
            return np.where(k >= src, k + 1, k)
        return self.rng.choice(n, size=count, p=self._dest_p[src])

    def generate(self, dt: float, now: float) -> list[Packet]:
        if not dt > 0:
            raise ValueError("dt must be positive")
        bits = self.pattern.packet_bits
        out = []
        for s, rate in enumerate(self.source_rates):
            if rate <= 0:
                continue
            k = int(self.rng.poisson(rate * dt / bits))
            if not k:
                continue
            times = now + self.rng.random(k) * dt
            dests = self.sample_destinations(s, k)
            src = self.ids[s]
            for t, d in zip(times, dests):
                out.append(Packet(-1, bits, src, self.ids[d], float(t), tagged=self.pattern.tagged))
        out.sort(key=lambda p: p.created_at)
        return out


def generate(pattern: TrafficPattern, gateways, dt: float, now: float) -> list[Packet]:
    if not gateways:
        raise ConfigError("gateways", "empty gateway set")
    return TrafficGenerator(pattern, gateways).generate(dt, now)


def mark_delivered(pkt: Packet, t: float) -> LatencyRecord:
    if pkt.delivered_at is not None:
        raise ConsistencyError(f"packet {pkt.id} delivered twice")
    if pkt.drop_reason is not None:
        raise ConsistencyError(f"packet {pkt.id} delivered after drop ({pkt.drop_reason})")
    if t < pkt.created_at:
        raise ConsistencyError(f"packet {pkt.id} delivered at {t} before creation at {pkt.created_at}")
    pkt.delivered_at = t
    return LatencyRecord(pkt.id, pkt.src, pkt.dst, pkt.created_at, t, len(pkt.hop_trace),
                         t - pkt.created_at, pkt.tagged)
