"""Routing-policy interface, the Dijkstra baseline and the constraint validator."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import SPEED_OF_LIGHT
from .orbital import DIRECTIONS, NO_NEIGHBOR

GROUND = 4
ACTION_NAMES = DIRECTIONS + ("ground",)
ABSENT = -1


def dijkstra(adj, source):
    """Single-source shortest paths over ``adj[u] = [(v, w), ...]``; returns (dist, pred)."""
    n = len(adj)
    dist = [math.inf] * n
    pred = [-1] * n
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = [False] * n
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            nd = d + w
            if nd < dist[v] or (nd == dist[v] and not done[v] and u < pred[v]):
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    return dist, pred


def _reverse_adjacency(neighbors, weights):
    n = len(neighbors)
    radj = [[] for _ in range(n)]
    for i in range(n):
        for d in range(4):
            j = neighbors[i, d]
            if j != NO_NEIGHBOR and math.isfinite(weights[i, d]):
                radj[j].append((i, weights[i, d]))
    return radj


def next_hops_toward(neighbors, weights, dist):
    """Direction per node minimising w(i,j) + dist(j); ties go to the lowest neighbour index."""
    n = len(neighbors)
    out = np.full(n, ABSENT, dtype=np.int8)
    for i in range(n):
        best, best_j, best_d = math.inf, None, ABSENT
        for d in range(4):
            j = neighbors[i, d]
            if j == NO_NEIGHBOR:
                continue
            c = weights[i, d] + dist[j]
            if c < best or (c == best and best_j is not None and j < best_j):
                best, best_j, best_d = c, j, d
        if math.isfinite(best):
            out[i] = best_d
    return out


@dataclass
class RoutingTable:
    """Next-hop action per (satellite, destination gateway)."""

    dst_ids: tuple
    next_hop: np.ndarray  # (N, G) int8; GROUND at the attachment, ABSENT when unreachable
    epoch: float
    targets: dict = field(default_factory=dict)  # gateway id -> attachment satellite

    @property
    def size_bits(self) -> int:
        g = len(self.dst_ids)
        per_entry = max(1, math.ceil(math.log2(max(g, 2)))) + 3
        return int(np.count_nonzero(self.next_hop != ABSENT)) * per_entry

    def per_satellite_bits(self) -> np.ndarray:
        g = len(self.dst_ids)
        per_entry = max(1, math.ceil(math.log2(max(g, 2)))) + 3
        return np.count_nonzero(self.next_hop != ABSENT, axis=1) * per_entry

    def lookup(self, sat: int, dst: str):
        a = int(self.next_hop[sat, self.dst_ids.index(dst)])
        return None if a == ABSENT else a

    def dump(self, sats_per_plane: int | None = None) -> str:
        lines = []
        for i in range(self.next_hop.shape[0]):
            name = str(i) if sats_per_plane is None else f"{i // sats_per_plane}/{i % sats_per_plane}"
            for k, g in enumerate(self.dst_ids):
                a = self.next_hop[i, k]
                if a != ABSENT:
                    lines.append(f"{name},{g},{ACTION_NAMES[a]},{self.epoch!r}")
        return "\n".join(lines) + ("\n" if lines else "")


def isl_latency_weights(distances_km, rates, packet_bits, include_transmission=True):
    """Per-port weight: propagation (+ transmission) delay; inf where the link is absent."""
    w = np.asarray(distances_km, dtype=float) * 1e3 / SPEED_OF_LIGHT
    if include_transmission:
        with np.errstate(divide="ignore"):
            w = w + np.where(rates > 0, packet_bits / np.where(rates > 0, rates, 1.0), np.inf)
    return w


def dijkstra_tables(neighbors, link_weights, attachments: dict, epoch: float = 0.0) -> RoutingTable:
    """Routing table toward every destination gateway's attachment satellite.

    ``link_weights[i, d]`` is the cost of leaving ``i`` through port ``d``.
    """
    n = len(neighbors)
    dst_ids = tuple(attachments)
    table = np.full((n, len(dst_ids)), ABSENT, dtype=np.int8)
    radj = _reverse_adjacency(neighbors, link_weights)
    cache = {}
    for k, g in enumerate(dst_ids):
        target = attachments[g]
        if target not in cache:
            dist, _ = dijkstra(radj, target)
            col = next_hops_toward(neighbors, link_weights, dist)
            col[target] = GROUND
            cache[target] = col
        table[:, k] = cache[target]
    return RoutingTable(dst_ids, table, epoch, dict(attachments))


def dijkstra_ops(n_nodes: int, n_edges: int, n_runs: int) -> float:
    """Elementary-operation count for ``n_runs`` binary-heap Dijkstra runs."""
    return n_runs * (n_edges + n_nodes * math.log2(max(n_nodes, 2)))


def path_change_fraction(table: RoutingTable, prev: RoutingTable) -> float:
    """Percentage of (satellite, destination) entries whose next hop differs."""
    ids = sorted(set(table.dst_ids) | set(prev.dst_ids))
    changed = total = 0
    for g in ids:
        a = table.next_hop[:, table.dst_ids.index(g)] if g in table.dst_ids else None
        b = prev.next_hop[:, prev.dst_ids.index(g)] if g in prev.dst_ids else None
        if a is None or b is None:
            col = a if a is not None else b
            k = int(np.count_nonzero(col != ABSENT))
            changed += k
            total += k
            continue
        present = (a != ABSENT) | (b != ABSENT)
        total += int(present.sum())
        changed += int(((a != b) & present).sum())
    return 100.0 * changed / total if total else 0.0


def greedy_direction(positions, neighbors_row, target_sat, visited=()):
    """Live neighbour closest (great-circle) to the target; unvisited neighbours preferred."""
    tgt = positions[target_sat]
    tgt = tgt / np.linalg.norm(tgt)
    best = None
    for d in range(4):
        j = neighbors_row[d]
        if j == NO_NEIGHBOR:
            continue
        p = positions[j]
        ang = math.acos(max(-1.0, min(1.0, float(p @ tgt) / float(np.linalg.norm(p)))))
        key = (j in visited, ang, j)
        if best is None or key < best[0]:
            best = (key, d)
    return None if best is None else best[1]


@dataclass(frozen=True)
class DecisionCostModel:
    """Modeled (deterministic) decision cost.

    Dijkstra: ``op_cost_s`` per elementary operation on the ground plus, per
    satellite, table upload time and the propagation needed to reach it.
    Learned policies: forward-pass FLOPs over the onboard FLOP rate.
    """

    dijkstra_op_cost_s: float = 1e-6
    onboard_flops_per_s: float = 1e9
    control_gateway: str | None = None


class RoutingPolicy:
    """Engine-facing interface. ``choose`` returns an ISL direction 0..3."""

    name = "base"
    learns = False

    def __init__(self):
        self.decisions = 0

    def reset(self, engine):
        pass

    def on_step(self, engine):
        pass

    def choose(self, engine, sat: int, pkt) -> int | None:
        raise NotImplementedError

    def next_hop(self, engine, sat: int, pkt):
        """Returns ``(direction, neighbour)``; override to bypass the grid (tests only)."""
        d = self.choose(engine, sat, pkt)
        if d is None:
            return None, None
        return d, int(engine.eff_neighbors[sat, d])

    def on_depart(self, engine, pkt, sat, t):
        """A packet left ``sat`` over an ISL at time ``t``."""

    def on_terminal(self, engine, pkt, delivered: bool):
        """The packet reached its destination's attachment satellite, or was dropped."""

    def modeled_cost(self) -> float:
        return 0.0

    def cost_rows(self):
        return []


class DijkstraPolicy(RoutingPolicy):
    """Periodic global recomputation; stale tables fall back to greedy forwarding."""

    name = "dijkstra"

    def __init__(self, interval_s: float = 5.0, include_transmission=True, cost=DecisionCostModel()):
        super().__init__()
        if not interval_s > 0:
            raise ValueError("interval must be positive")
        self.interval = float(interval_s)
        self.include_transmission = include_transmission
        self.cost = cost
        self.table = None
        self.tables = []
        self.ledger = []  # (epoch, ops, compute_s, dissemination_s, wallclock_s, change_pct)
        self.stale_events = 0
        self._next_epoch = None

    def reset(self, engine):
        self.table = None
        self.tables = []
        self.ledger = []
        self.stale_events = 0
        self._next_epoch = engine.now

    def on_step(self, engine):
        if self._next_epoch is not None and engine.now + 1e-12 >= self._next_epoch:
            self.recompute(engine)
            self._next_epoch += self.interval

    def recompute(self, engine):
        t0 = time.perf_counter()
        w = isl_latency_weights(engine.isl_dist, engine.isl_rate, engine.radio.packet_bits,
                                self.include_transmission)
        nb = engine.eff_neighbors
        w = np.where(nb == NO_NEIGHBOR, np.inf, w)
        table = dijkstra_tables(nb, w, engine.snapshot.gateway_attachment, engine.now)
        wall = time.perf_counter() - t0
        n_edges = int(np.count_nonzero(nb != NO_NEIGHBOR))
        n_runs = len(set(table.targets.values()))
        ops = dijkstra_ops(len(nb), n_edges, n_runs)
        compute = ops * self.cost.dijkstra_op_cost_s
        dissem = dissemination_cost(engine, table, self.cost.control_gateway)
        change = path_change_fraction(table, self.table) if self.table is not None else float("nan")
        self.ledger.append((engine.now, ops, compute, dissem, wall, change))
        self.table = table
        self.tables.append(table)

    def choose(self, engine, sat, pkt):
        self.decisions += 1
        target = engine.snapshot.gateway_attachment[pkt.dst]
        if not pkt.stale:
            a = self.table.lookup(sat, pkt.dst) if pkt.dst in self.table.dst_ids else None
            if a is not None and a != GROUND and engine.eff_neighbors[sat, a] != NO_NEIGHBOR:
                return a
            pkt.stale = True
            self.stale_events += 1
        return greedy_direction(engine.snapshot.positions, engine.eff_neighbors[sat], target,
                                set(pkt.hop_trace))

    def modeled_cost(self) -> float:
        return sum(r[2] + r[3] for r in self.ledger)

    def cost_rows(self):
        return [
            {"epoch": r[0], "ops": r[1], "compute_s": r[2], "dissemination_s": r[3], "path_change_pct": r[5]}
            for r in self.ledger
        ]


def dissemination_cost(engine, table: RoutingTable, control_gateway=None) -> float:
    """Sum over satellites of upload time plus propagation from the control gateway."""
    gw = control_gateway or engine.gateway_ids[0]
    root = engine.snapshot.gateway_attachment[gw]
    nb = engine.eff_neighbors
    prop = np.where(nb == NO_NEIGHBOR, np.inf, engine.isl_dist * 1e3 / SPEED_OF_LIGHT)
    adj = [[(int(nb[i, d]), float(prop[i, d])) for d in range(4) if nb[i, d] != NO_NEIGHBOR]
           for i in range(len(nb))]
    dist, _ = dijkstra(adj, root)
    up_prop = engine.ground_dist[gw] * 1e3 / SPEED_OF_LIGHT
    up_rate = engine.uplink_rate[gw]
    bits = table.per_satellite_bits()
    reach = np.array([d if math.isfinite(d) else 0.0 for d in dist]) + up_prop
    return float(np.sum(bits / up_rate + reach))


def recalculation_loop(engine_factory, interval_s: float, horizon_s: float):
    """Tables every ``interval_s`` on a traffic-free engine; returns (tables, ledger rows)."""
    policy = DijkstraPolicy(interval_s)
    engine = engine_factory(policy)
    engine.advance_topology_only(horizon_s)
    return policy.tables, policy.cost_rows()


# ---------------------------------------------------------------- constraints


@dataclass
class FlowAssignment:
    window_s: float
    link_bits: dict = field(default_factory=dict)  # (i, j) -> bits sent, self-loops included
    uplink_bits: dict = field(default_factory=dict)  # sat -> bits received from ground
    downlink_bits: dict = field(default_factory=dict)  # sat -> bits sent to ground
    retained_bits: dict = field(default_factory=dict)  # sat -> dropped + backlog growth

    def rate(self, i, j):
        return self.link_bits.get((i, j), 0.0) / self.window_s


@dataclass
class ConstraintResult:
    name: str
    passed: bool
    worst_margin: float
    violations: list


def validate_constraints(flows: FlowAssignment, rates: dict, path_outages=(), outage_threshold=1.0,
                         n_sats=None, tol_bits=1e-6):
    """Check C1 (capacity), C2 (transit conservation), C3 (no self-loops), C5 (outage bound)."""
    report = {}
    worst, bad = math.inf, []
    for (i, j), bits in flows.link_bits.items():
        if i == j or (i, j) not in rates:
            continue
        m = rates[(i, j)] - bits / flows.window_s
        worst = min(worst, m)
        if m < 0:
            bad.append((i, j))
    report["C1"] = ConstraintResult("C1", not bad, worst, bad)

    nodes = set(range(n_sats)) if n_sats is not None else set()
    for i, j in flows.link_bits:
        nodes.update((i, j))
    nodes.update(flows.uplink_bits, flows.downlink_bits, flows.retained_bits)
    inflow = dict.fromkeys(nodes, 0.0)
    outflow = dict.fromkeys(nodes, 0.0)
    for (i, j), bits in flows.link_bits.items():
        outflow[i] += bits
        inflow[j] += bits
    for s, b in flows.uplink_bits.items():
        inflow[s] += b
    for s, b in flows.downlink_bits.items():
        outflow[s] += b
    for s, b in flows.retained_bits.items():
        outflow[s] += b
    worst, bad = 0.0, []
    for s in sorted(nodes):
        gap = abs(inflow[s] - outflow[s])
        worst = max(worst, gap)
        if gap > tol_bits:
            bad.append(s)
    report["C2"] = ConstraintResult("C2", not bad, -worst / flows.window_s, bad)

    loops = sorted(i for (i, j), b in flows.link_bits.items() if i == j and b > 0)
    report["C3"] = ConstraintResult("C3", not loops, -max((flows.rate(i, i) for i in loops), default=0.0), loops)

    worst, bad = math.inf, []
    for k, p in enumerate(path_outages):
        m = outage_threshold - p
        worst = min(worst, m)
        if m < 0:
            bad.append(k)
    report["C5"] = ConstraintResult("C5", not bad, worst, bad)
    return report
