"""Discrete-event engine and metrics.

Each ``step`` covers the window [now, now+dt) and runs, in this order:

1. refresh the constellation snapshot when due (positions, link rates, outages,
   gateway attachments);
2. apply the failure schedule, flushing queues of links that went down;
3. let the policy react (Dijkstra recomputes tables on its own cadence);
4. generate traffic; new packets join their source gateway's uplink queue at
   their exact creation time;
5. process node arrivals falling inside the window in timestamp order: deliver,
   drop (TTL / failed node / dead end / overflow) or ask the policy for a hop;
6. serve every non-empty queue over the window; departures are scheduled to
   arrive at the next node after the propagation delay;
7. advance the clock, check packet conservation, sample network resilience.

Timestamps inside a window are exact, so a packet's end-to-end latency equals
the sum of its per-hop queueing, transmission and propagation delays.
"""
from __future__ import annotations

import csv
import heapq
import io
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .channel import (SPEED_OF_LIGHT, FadingModel, HopLatency, RadioConfig, ground_snr,
                      isl_snr_array, rate_from_snr)
from .errors import ConfigError, ConsistencyError
from .learning.state import arc_distance, encode_state
from .orbital import NO_NEIGHBOR, Constellation, ConstellationParams, take_snapshot
from .queueing import LinkQueue
from .resilience import (OutageParams, PathSelection, ResilienceWeights, apply_failures,
                         outage_from_mean_snr, resilience_score)
from .traffic import LatencyRecord, TrafficGenerator, TrafficPattern, mark_delivered

SCHEMA_VERSION = "leoroute-metrics v1"
GROUND_PORT = 4
PORTS = 5

_ARRIVE_SAT, _ARRIVE_GW = 0, 1


@dataclass
class EngineConfig:
    constellation: ConstellationParams
    gateways: list
    radio: RadioConfig = field(default_factory=RadioConfig)
    outage: OutageParams = field(default_factory=lambda: OutageParams(snr_threshold=1e8))
    resilience_weights: ResilienceWeights = field(default_factory=ResilienceWeights)
    resilience_aggregate: str = "max"
    queue_capacity_bits: float = 1e9
    dt: float = 1e-3
    horizon: float = 1.0
    snapshot_refresh_s: float = 1.0
    min_elevation: float = math.radians(25.0)
    coverage_fallback: str = "error"  # error | nearest
    traffic: tuple = ()  # TrafficPattern instances
    failures: tuple = ()
    epoch_offset_s: float = 0.0
    frozen_time: bool = False
    ttl_hops: int | None = None
    resilience_sample_s: float = 0.05
    strict: bool = True
    record_flows: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("sim.dt", "must be positive")
        if self.snapshot_refresh_s < self.dt:
            raise ConfigError("sim.snapshot_refresh_s", "must be >= dt")
        if self.horizon < 0:
            raise ConfigError("sim.horizon", "must be nonnegative")
        if self.coverage_fallback not in ("error", "nearest"):
            raise ConfigError("sim.coverage_fallback", "must be 'error' or 'nearest'")


class MetricsLedger:
    """Append-only run record."""

    def __init__(self):
        self.latency: list[LatencyRecord] = []
        self.path_resilience: list[float] = []  # aligned with ``latency``
        self.path_outage: list[float] = []
        self.drops: list[tuple] = []  # (packet id, time, reason)
        self.resilience_series: list[tuple] = []  # (time, mean per-link feature)
        self.generated = 0
        self.decisions = 0
        self.stale_routes = 0
        self.stalls = 0
        self.conservation_checks = 0
        self.coverage_gaps = 0

    @property
    def delivered(self):
        return len(self.latency)

    def latencies(self, tagged_only=False):
        return [r.latency_s for r in self.latency if r.tagged or not tagged_only]


def _nearest_alive(pos, gw_pos, min_el, failed):
    v = pos - gw_pos
    rng = np.linalg.norm(v, axis=1)
    sin_el = (v @ (gw_pos / np.linalg.norm(gw_pos))) / rng
    alive = np.ones(len(pos), dtype=bool)
    alive[list(failed)] = False
    vis = alive & (sin_el >= math.sin(min_el))
    pool = vis if vis.any() else alive
    return int(np.argmin(np.where(pool, rng, np.inf))), not vis.any()


class Engine:
    def __init__(self, cfg: EngineConfig, policy, traffic_generators=None):
        self.cfg = cfg
        self.const = Constellation(cfg.constellation)
        self.radio = cfg.radio
        self.policy = policy
        self.gateways = list(cfg.gateways)
        self.gateway_ids = [g.id for g in self.gateways]
        self.gw_index = {g: k for k, g in enumerate(self.gateway_ids)}
        self.gw_pos = {g.id: g.ecef(cfg.constellation.earth_radius_km) for g in self.gateways}
        n = self.const.size
        self.n = n
        p = cfg.constellation
        self.ttl = cfg.ttl_hops or 4 * (p.plane_count + p.sats_per_plane)
        self.hop_scale = 2 * self.const.radius_km * math.sin(math.pi / p.sats_per_plane)
        self.queues = [LinkQueue(cfg.queue_capacity_bits) for _ in range(n * PORTS + len(self.gateways))]
        self.active = set()
        self.events = []
        self._seq = 0
        self._next_id = 0
        self.now = 0.0
        self.steps = 0
        self.ledger = MetricsLedger()
        self.generators = traffic_generators if traffic_generators is not None else [
            TrafficGenerator(tp, self.gateways) for tp in cfg.traffic]
        self.failures = list(cfg.failures)
        self._failed = frozenset()
        self.eff_neighbors = self.const.neighbors
        self.snapshot = None
        self._next_refresh = 0.0
        self._next_res_sample = 0.0
        self.flows = _FlowRecorder() if cfg.record_flows else None
        budget = self.radio.budget(1.0)
        fading = FadingModel(self.radio.nakagami_m)
        self._ground_outage_params = OutageParams(cfg.outage.snr_threshold, fading, cfg.outage.outage_threshold)
        up_snr = ground_snr(budget, "uplink", 1.0)
        dn_snr = ground_snr(budget, "downlink", 1.0)
        bw = self.radio.bandwidth_hz
        self.uplink_rate = {g: rate_from_snr(up_snr, bw) for g in self.gateway_ids}
        self.downlink_rate = rate_from_snr(dn_snr, bw)
        self.uplink_outage = outage_from_mean_snr(up_snr, self._ground_outage_params)
        self.downlink_outage = outage_from_mean_snr(dn_snr, self._ground_outage_params)
        self._isl_outage_params = OutageParams(
            cfg.outage.snr_threshold, fading if self.radio.isl_fading else None, cfg.outage.outage_threshold)
        self._refresh(force=True)
        self._apply_failures()
        policy.reset(self)

    # ------------------------------------------------------------ topology
    @property
    def geometry_time(self):
        return self.cfg.epoch_offset_s + (0.0 if self.cfg.frozen_time else self.now)

    def _refresh(self, force=False):
        if not force and (self.cfg.frozen_time and self.snapshot is not None):
            self._next_refresh += self.cfg.snapshot_refresh_s
            return
        snap = take_snapshot(self.const, self.gateways, self.geometry_time, self.cfg.min_elevation,
                             self.cfg.coverage_fallback)
        self.ledger.coverage_gaps += len(snap.coverage_gaps)
        self.snapshot = snap
        pos = snap.positions
        nb = self.const.neighbors
        valid = nb != NO_NEIGHBOR
        other = pos[np.where(valid, nb, 0)]
        dist = np.linalg.norm(other - pos[:, None, :], axis=2)
        self.isl_dist = np.where(valid, dist, np.inf)
        snr = np.where(valid, isl_snr_array(np.where(valid, dist, 1.0), self.radio), 0.0)
        self.base_isl_rate = rate_from_snr(snr, self.radio.bandwidth_hz)
        self.isl_outage = np.where(valid, outage_from_mean_snr(snr, self._isl_outage_params), 1.0)
        self.ground_dist = {g: float(np.linalg.norm(pos[snap.gateway_attachment[g]] - self.gw_pos[g]))
                            for g in self.gateway_ids}
        self._next_refresh += self.cfg.snapshot_refresh_s
        self._set_rates()

    def _set_rates(self):
        eff = self.eff_neighbors
        self.isl_rate = np.where(eff != NO_NEIGHBOR, self.base_isl_rate, 0.0)
        for i in range(self.n):
            base = i * PORTS
            for d in range(4):
                self.queues[base + d].served_rate = self.isl_rate[i, d]
            self.queues[base + GROUND_PORT].served_rate = 0.0 if i in self._failed else self.downlink_rate
        for k, g in enumerate(self.gateway_ids):
            self.queues[self.n * PORTS + k].served_rate = self.uplink_rate[g]

    def _apply_failures(self):
        if not self.failures:
            return
        eff, failed = apply_failures(self.const.neighbors, self.failures, self.geometry_time_for_failures)
        changed = failed != self._failed or not np.array_equal(eff, self.eff_neighbors)
        self.eff_neighbors, self._failed = eff, failed
        if failed:
            att = dict(self.snapshot.gateway_attachment)
            for g in self.gateway_ids:
                if att[g] in failed:
                    att[g], _ = _nearest_alive(self.snapshot.positions, self.gw_pos[g],
                                               self.cfg.min_elevation, failed)
            self.snapshot = type(self.snapshot)(self.snapshot.time, self.snapshot.positions,
                                                self.snapshot.neighbors, att, self.snapshot.coverage_gaps)
        if changed:
            self._set_rates()
            for i in range(self.n):
                for d in range(4):
                    if eff[i, d] == NO_NEIGHBOR and self.const.neighbors[i, d] != NO_NEIGHBOR:
                        self._flush(i * PORTS + d, "link-down")
                if i in failed:
                    self._flush(i * PORTS + GROUND_PORT, "node-failure")

    @property
    def geometry_time_for_failures(self):
        return self.now

    def _flush(self, key, reason):
        q = self.queues[key]
        if not len(q):
            return
        for p in q.flush(reason):
            self._record_drop(p, reason, self.now, at_queue=key)
        self.active.discard(key)

    def advance_topology_only(self, horizon):
        """Walk the clock without packets (snapshot refresh, failures, policy epochs)."""
        step = self.cfg.snapshot_refresh_s
        while self.now < horizon - 1e-12:
            if self.now + 1e-12 >= self._next_refresh:
                self._refresh()
            self._apply_failures()
            self.policy.on_step(self)
            self.now = round(self.now + step, 9)

    # ------------------------------------------------------------ observation
    def node_occupancy(self, i):
        base = i * PORTS
        return max(self.queues[base + d].occupancy() for d in range(PORTS))

    def node_occupancies(self):
        occ = np.array([q.occupancy() for q in self.queues[: self.n * PORTS]]).reshape(self.n, PORTS)
        return occ.max(axis=1)

    def link_feature(self, i, d, qi=None):
        j = self.eff_neighbors[i, d]
        if j == NO_NEIGHBOR:
            return 0.0
        w = self.cfg.resilience_weights
        qi = self.node_occupancy(i) if qi is None else qi
        qj = self.node_occupancy(j)
        qt = max(1 - qi, 1 - qj) if self.cfg.resilience_aggregate == "max" else min(1 - qi, 1 - qj)
        return w.w_outage * (1.0 - self.isl_outage[i, d]) + w.w_queue * qt

    def distance_to_dst(self, sat, dst):
        return arc_distance(self.snapshot.positions[sat], self.gw_pos[dst], self.const.radius_km)

    def observation(self, sat, dst):
        """(state vector, valid-action mask, per-port link resilience)."""
        nb = self.eff_neighbors[sat]
        pos = self.snapshot.positions
        qi = self.node_occupancy(sat)
        occ, res, npos = [], [], []
        for d in range(4):
            j = nb[d]
            if j == NO_NEIGHBOR:
                occ.append(None)
                res.append(0.0)
                npos.append(None)
            else:
                occ.append(self.queues[sat * PORTS + d].occupancy())
                res.append(self.link_feature(sat, d, qi))
                npos.append(pos[j])
        s = encode_state(pos[sat], npos, occ, self.gw_pos[dst], res, self.const.radius_km)
        return s, nb != NO_NEIGHBOR, res

    # ------------------------------------------------------------ packet flow
    def _push(self, t, kind, node, pkt):
        self._seq += 1
        heapq.heappush(self.events, (t, self._seq, kind, node, pkt))

    def inject(self, pkt):
        """Hand a packet to its source gateway's uplink queue at ``pkt.created_at``."""
        pkt.id = self._next_id
        self._next_id += 1
        self.ledger.generated += 1
        key = self.n * PORTS + self.gw_index[pkt.src]
        if not self.queues[key].enqueue(pkt, pkt.created_at):
            self._record_drop(pkt, "queue-overflow", pkt.created_at)
            return
        self.active.add(key)

    def _record_drop(self, pkt, reason, t, at_queue=None):
        pkt.drop_reason = reason
        self.ledger.drops.append((pkt.id, t, reason))
        if self.flows is not None and pkt.hop_trace:
            self.flows.retained[pkt.hop_trace[-1]] += pkt.size_bits
        self.policy.on_terminal(self, pkt, delivered=False)

    def _arrive_sat(self, t, sat, pkt):
        pkt.hop_trace.append(sat)
        if self.flows is not None:
            if len(pkt.hop_trace) == 1:
                self.flows.uplink[sat] += pkt.size_bits
        if sat in self._failed:
            self._record_drop(pkt, "node-failure", t)
            return
        if sat == self.snapshot.gateway_attachment[pkt.dst]:
            self.policy.on_terminal(self, pkt, delivered=True)
            key = sat * PORTS + GROUND_PORT
            pkt.next_node = pkt.dst
            if self.queues[key].enqueue(pkt, t):
                self.active.add(key)
            else:
                self._record_drop(pkt, "queue-overflow", t)
            return
        if len(pkt.hop_trace) > self.ttl:
            self._record_drop(pkt, "ttl", t)
            return
        self.ledger.decisions += 1
        d, nxt = self.policy.next_hop(self, sat, pkt)
        if d is None or nxt is None or nxt == NO_NEIGHBOR:
            self._record_drop(pkt, "no-valid-action", t)
            return
        if self.cfg.strict and self.eff_neighbors[sat, d] != nxt:
            raise ConsistencyError(f"policy chose absent link {sat}->{nxt} (port {d}) at t={t}")
        key = sat * PORTS + d
        pkt.next_node = int(nxt)
        if self.queues[key].enqueue(pkt, t):
            self.active.add(key)
        else:
            self._record_drop(pkt, "queue-overflow", t)

    def _arrive_gw(self, t, gw, pkt):
        rec = mark_delivered(pkt, t)
        self.ledger.latency.append(rec)
        outage_all, score = self.path_metrics(pkt)
        self.ledger.path_outage.append(outage_all)
        self.ledger.path_resilience.append(score)

    def path_metrics(self, pkt):
        """Path outage and resilience score of a delivered packet's ISL walk."""
        links = list(zip(pkt.hop_trace[:-1], pkt.hop_trace[1:]))
        survival = 1.0
        for p in pkt.hop_outages:
            survival *= 1.0 - p
        outage_all = 1.0 - (1 - self.uplink_outage) * (1 - self.downlink_outage) * survival
        occ = {}
        for (i, j), (qi, qj) in zip(links, pkt.hop_occupancy):
            occ[i] = qi
            occ[j] = qj
        score = resilience_score(PathSelection(links), outage_all, occ, self.cfg.resilience_weights,
                                 self.cfg.resilience_aggregate)
        return outage_all, score

    def _depart(self, key, pkt, t_dep):
        tx_start = pkt.tx_start
        queueing = tx_start - pkt.enqueued_at
        transmission = t_dep - tx_start
        pos = self.snapshot.positions
        if key >= self.n * PORTS:  # uplink
            gw = self.gateway_ids[key - self.n * PORTS]
            sat = self.snapshot.gateway_attachment[gw]
            dist = float(np.linalg.norm(pos[sat] - self.gw_pos[gw]))
            prop = dist * 1e3 / SPEED_OF_LIGHT
            pkt.hops.append(HopLatency(prop, transmission, queueing))
            self._push(t_dep + prop, _ARRIVE_SAT, sat, pkt)
            return
        i, port = divmod(key, PORTS)
        if port == GROUND_PORT:
            dist = float(np.linalg.norm(pos[i] - self.gw_pos[pkt.dst]))
            prop = dist * 1e3 / SPEED_OF_LIGHT
            pkt.hops.append(HopLatency(prop, transmission, queueing))
            if self.flows is not None:
                self.flows.downlink[i] += pkt.size_bits
            self._push(t_dep + prop, _ARRIVE_GW, pkt.dst, pkt)
            return
        j = pkt.next_node
        dist = 0.0 if j == i else float(np.linalg.norm(pos[i] - pos[j]))
        prop = dist * 1e3 / SPEED_OF_LIGHT
        pkt.hops.append(HopLatency(prop, transmission, queueing))
        pkt.hop_outages.append(0.0 if j == i else float(self.isl_outage[i, port]))
        pkt.hop_occupancy.append((self.node_occupancy(i), self.node_occupancy(j)))
        if self.flows is not None:
            self.flows.link[(i, j)] = self.flows.link.get((i, j), 0.0) + pkt.size_bits
            self.flows.note_rate(i, j, self.isl_rate[i, port])
        self.policy.on_depart(self, pkt, i, t_dep)
        self._push(t_dep + prop, _ARRIVE_SAT, j, pkt)

    # ------------------------------------------------------------ main loop
    def in_flight(self):
        return len(self.events) + sum(len(self.queues[k]) for k in self.active)

    def step(self, generate=True):
        now, dt = self.now, self.cfg.dt
        end = now + dt
        if now + 1e-12 >= self._next_refresh:
            self._refresh()
        self._apply_failures()
        self.policy.on_step(self)
        if generate:
            batch = []
            for gen in self.generators:
                batch.extend(gen.generate(dt, now))
            if len(self.generators) > 1:
                batch.sort(key=lambda p: p.created_at)
            for pkt in batch:
                self.inject(pkt)
        events = self.events
        while events and events[0][0] < end:
            t, _, kind, node, pkt = heapq.heappop(events)
            if kind == _ARRIVE_SAT:
                self._arrive_sat(t, node, pkt)
            else:
                self._arrive_gw(t, node, pkt)
        for key in sorted(self.active):
            q = self.queues[key]
            before = q.stalls
            for pkt, t_dep in q.service(dt, now):
                self._depart(key, pkt, t_dep)
            self.ledger.stalls += q.stalls - before
            if not len(q):
                self.active.discard(key)
        self.steps += 1
        self.now = self.steps * dt
        self._check_conservation()
        if self.now + 1e-12 >= self._next_res_sample:
            self.ledger.resilience_series.append((self.now, self.network_resilience()))
            self._next_res_sample += self.cfg.resilience_sample_s

    def _check_conservation(self):
        lg = self.ledger
        if lg.generated != lg.delivered + len(lg.drops) + self.in_flight():
            raise ConsistencyError(
                f"conservation violated at t={self.now}: generated={lg.generated} delivered={lg.delivered} "
                f"dropped={len(lg.drops)} in_flight={self.in_flight()}")
        lg.conservation_checks += 1

    def network_resilience(self):
        """Mean per-link resilience over all wired ISLs (failed links score 0)."""
        nb = self.const.neighbors
        wired = nb != NO_NEIGHBOR
        occ = self.node_occupancies()
        qj = occ[np.where(wired, nb, 0)]
        qi = occ[:, None]
        if self.cfg.resilience_aggregate == "max":
            qt = np.maximum(1 - qi, 1 - qj)
        else:
            qt = np.minimum(1 - qi, 1 - qj)
        w = self.cfg.resilience_weights
        feat = w.w_outage * (1 - self.isl_outage) + w.w_queue * qt
        feat = np.where(self.eff_neighbors != NO_NEIGHBOR, feat, 0.0)
        return float(feat[wired].mean())

    def run(self, horizon=None, drain=True, max_drain_s=60.0):
        horizon = self.cfg.horizon if horizon is None else horizon
        n_steps = int(round(horizon / self.cfg.dt))
        while self.steps < n_steps:
            self.step()
        if drain:
            limit = self.steps + int(round(max_drain_s / self.cfg.dt))
            while self.in_flight() and self.steps < limit:
                self.step(generate=False)
        return self.ledger


class _FlowRecorder:
    def __init__(self):
        from collections import defaultdict

        self.link = {}
        self.uplink = defaultdict(float)
        self.downlink = defaultdict(float)
        self.retained = defaultdict(float)
        self.min_rate = {}

    def note_rate(self, i, j, r):
        self.min_rate[(i, j)] = min(self.min_rate.get((i, j), math.inf), r)

    def assignment(self, window_s):
        from .routing import FlowAssignment

        return FlowAssignment(window_s, dict(self.link), dict(self.uplink), dict(self.downlink),
                              dict(self.retained))


# ---------------------------------------------------------------- summaries


def summarize(ledger: MetricsLedger, policy, tagged_only=False) -> dict:
    lat = ledger.latencies(tagged_only)
    res = [r for r, rec in zip(ledger.path_resilience, ledger.latency) if rec.tagged or not tagged_only]
    series = [v for _, v in ledger.resilience_series]
    out = {
        "policy": policy.name,
        "generated": ledger.generated,
        "delivered": ledger.delivered,
        "dropped": len(ledger.drops),
        "drop_rate": len(ledger.drops) / ledger.generated if ledger.generated else 0.0,
        "latency_mean_s": statistics.fmean(lat) if lat else float("nan"),
        "latency_median_s": statistics.median(lat) if lat else float("nan"),
        "latency_p95_s": float(np.percentile(lat, 95)) if lat else float("nan"),
        "decisions": ledger.decisions,
        "decision_cost_s": policy.modeled_cost(),
        "stale_routes": getattr(policy, "stale_events", 0),
        "path_change_pct": _mean_change(policy),
        "resilience_path": statistics.fmean(res) if res else float("nan"),
        "resilience_links": statistics.fmean(series) if series else float("nan"),
        "stalls": ledger.stalls,
        "coverage_gaps": ledger.coverage_gaps,
    }
    return out


def _mean_change(policy):
    rows = [r["path_change_pct"] for r in policy.cost_rows() if "path_change_pct" in r]
    rows = [r for r in rows if not math.isnan(r)]
    return statistics.fmean(rows) if rows else float("nan")


def summarize_resilience(summaries, traffic_levels):
    """{policy: [(level, path-form mean, per-link mean), ...]} from per-level summary dicts.

    ``summaries`` maps (policy, level) to a summary row (or a list of rows, one per seed).
    """
    out = {}
    for (policy, level), rows in sorted(summaries.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        rows = rows if isinstance(rows, list) else [rows]
        out.setdefault(policy, []).append((
            level,
            statistics.fmean(r["resilience_path"] for r in rows),
            statistics.fmean(r["resilience_links"] for r in rows),
        ))
    for policy in out:
        out[policy].sort(key=lambda x: traffic_levels.index(x[0]))
    return out


def _fmt(v):
    if isinstance(v, (np.integer, np.bool_)):
        return str(v.item())
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metrics_csv(ledger: MetricsLedger, summary: dict) -> str:
    """One-file run record: schema line, then packet, summary and series sections."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# {SCHEMA_VERSION}"])
    w.writerow(["record", "id", "src", "dst", "created", "delivered", "hops", "latency_s", "tagged",
                "path_outage", "path_resilience"])
    for rec, po, pr in zip(ledger.latency, ledger.path_outage, ledger.path_resilience):
        w.writerow(["packet", rec.packet_id, rec.src, rec.dst, _fmt(rec.created), _fmt(rec.delivered),
                    rec.hops, _fmt(rec.latency_s), int(rec.tagged), _fmt(po), _fmt(pr)])
    for pid, t, reason in ledger.drops:
        w.writerow(["drop", pid, "", "", "", _fmt(t), "", "", "", "", reason])
    for k, v in summary.items():
        w.writerow(["summary", k, _fmt(v)])
    for t, v in ledger.resilience_series:
        w.writerow(["series", "resilience_links", _fmt(t), _fmt(v)])
    return buf.getvalue()


# ---------------------------------------------------------------- experiments


@dataclass
class RunResult:
    policy: str
    seed: int
    level_bps: float
    ledger: MetricsLedger
    summary: dict
    policy_obj: object = None

    def csv(self) -> str:
        return metrics_csv(self.ledger, self.summary)


def train_models(cfg, seed: int, names=("madrl", "sarsa")):
    """Train (or load) the learned policies' networks for one seed.

    Returns ``{name: (MLP, TrainResult | None)}``; a configured model path
    is loaded instead of training.
    """
    from .learning.ddqn import EpsilonSchedule
    from .learning.nets import load_mlp
    from .learning.state import N_ACTIONS, STATE_DIM
    from .learning.training import train_global, train_sarsa

    train_pattern = (TrafficPattern(cfg["traffic"]["kind"], cfg["train"]["traffic_bps"], seed=seed * 1000 + 3,
                                    packet_bits=cfg["radio"]["packet_bits"]),)

    def factory(policy):
        return Engine(cfg.engine_config(seed, 0.0, traffic=train_pattern, failures=(), horizon=math.inf), policy)

    out = {}
    weights = cfg.reward_weights()
    for name in names:
        m = cfg[name]
        if m["model"] is not None:
            net, _ = load_mlp(cfg.path(m["model"]))
            out[name] = (net, None)
            continue
        eps = EpsilonSchedule(cfg["madrl"]["epsilon_start"], cfg["madrl"]["epsilon_end"],
                              cfg["madrl"]["epsilon_decay"])
        if name == "madrl":
            res = train_global(factory, m["iterations"], seed, dims=(STATE_DIM, *m["hidden"], N_ACTIONS), lr=m["lr"],
                               gamma=m["gamma"], batch=m["batch"], memory=m["memory"], sync_every=m["sync_every"],
                               weights=weights, epsilon=eps, max_sim_s=cfg["train"]["max_sim_s"])
            out[name] = (res.model, res)
        else:
            res = train_sarsa(factory, m["iterations"], seed, head=m["head"], lr=m["lr"], gamma=m["gamma"],
                              weights=weights, epsilon=eps, max_sim_s=cfg["train"]["max_sim_s"])
            out[name] = (res.model.as_mlp(), res)
    return out


def build_policy(name, cfg, seed=0, models=None, dijkstra_interval=None, online=None):
    from .learning.policies import MADRLPolicy, OnlineConfig, QPolicy
    from .routing import DijkstraPolicy

    if name == "dijkstra":
        d = cfg["dijkstra"]
        return DijkstraPolicy(dijkstra_interval or d["interval_s"], d["include_transmission"], cfg.cost_model())
    if models is None or name not in models:
        raise ValueError(f"policy {name!r} needs a trained model")
    net = models[name][0] if isinstance(models[name], tuple) else models[name]
    if name == "madrl":
        m = cfg["madrl"]
        oc = online or OnlineConfig(**m["online"], gamma=m["gamma"])
        return MADRLPolicy(net, oc, cfg.reward_weights(), seed, m["loop_guard"], cfg.cost_model())
    if name == "sarsa":
        return QPolicy(net, "sarsa", cfg["sarsa"]["loop_guard"], cfg.cost_model())
    raise ValueError(f"unknown policy {name!r}")


def run_single(cfg, name, seed, level_bps, models=None, dijkstra_interval=None, online=None,
               **engine_overrides) -> RunResult:
    policy = build_policy(name, cfg, seed, models, dijkstra_interval, online)
    engine = Engine(cfg.engine_config(seed, level_bps, **engine_overrides), policy)
    ledger = engine.run()
    summary = summarize(ledger, policy)
    summary.update(seed=seed, level_bps=float(level_bps), sim_time_s=engine.now)
    if name == "dijkstra":
        summary["interval_s"] = policy.interval
    return RunResult(name, seed, float(level_bps), ledger, summary, policy)


def run_experiment(cfg, models_by_seed=None, policies=None, seeds=None, levels=None, keep_ledgers=True):
    """Every (seed, level, policy) combination; learned models trained per seed when absent.

    Returns ``(results, models_by_seed)``; ``results`` is ordered by seed, level, policy.
    """
    policies = list(policies or cfg.policies)
    seeds = list(cfg.seeds if seeds is None else seeds)
    levels = list(cfg.levels if levels is None else levels)
    models_by_seed = dict(models_by_seed or {})
    learned = [p for p in policies if p != "dijkstra"]
    results = []
    for seed in seeds:
        if learned and seed not in models_by_seed:
            models_by_seed[seed] = train_models(cfg, seed, learned)
        for level in levels:
            for name in policies:
                r = run_single(cfg, name, seed, level, models_by_seed.get(seed))
                if not keep_ledgers:
                    r.ledger = None
                results.append(r)
    return results, models_by_seed


def interval_sweep(cfg, intervals, seeds=None, level_bps=None, horizon_s=None):
    """Dijkstra at several recalculation intervals: modeled decision cost and path churn.

    Level and horizon default to ``dijkstra.sweep_level_bps`` / ``sweep_horizon_s``
    and then to the first traffic level / ``sim.horizon_s``.
    """
    d = cfg["dijkstra"]
    seeds = list(cfg.seeds if seeds is None else seeds)
    if level_bps is None:
        level_bps = d["sweep_level_bps"] if d["sweep_level_bps"] is not None else cfg.levels[0]
    if horizon_s is None:
        horizon_s = d["sweep_horizon_s"] if d["sweep_horizon_s"] is not None else cfg["sim"]["horizon_s"]
    rows = []
    for interval in intervals:
        for seed in seeds:
            r = run_single(cfg, "dijkstra", seed, level_bps, dijkstra_interval=interval, horizon=horizon_s)
            rows.append(r.summary)
    return rows


SUMMARY_FIELDS = ("policy", "seed", "level_bps", "interval_s", "sim_time_s", "generated", "delivered", "dropped", "drop_rate",
                  "latency_mean_s", "latency_median_s", "latency_p95_s", "decisions", "decision_cost_s",
                  "stale_routes", "path_change_pct", "resilience_path", "resilience_links", "stalls",
                  "coverage_gaps")


def summary_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"# {SCHEMA_VERSION} summary"])
    w.writerow(SUMMARY_FIELDS)
    for r in rows:
        w.writerow([_fmt(r.get(k, "")) for k in SUMMARY_FIELDS])
    return buf.getvalue()


def read_summary_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        d = {}
        for k, v in row.items():
            if k == "policy":
                d[k] = v
            elif v == "":
                d[k] = None
            else:
                d[k] = float(v)
        out.append(d)
    return out
