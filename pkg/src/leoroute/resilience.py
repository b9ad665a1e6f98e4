"""Outage probabilities, resilience scoring and failure injection."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammainc

from .channel import FadingModel, LinkBudget, ground_snr, isl_snr
from .errors import ConfigError, DomainError
from .orbital import NO_NEIGHBOR


@dataclass(frozen=True)
class OutageParams:
    snr_threshold: float  # linear
    fading: Optional[FadingModel] = FadingModel()
    outage_threshold: float = 0.1  # bound used by constraint C5

    def __post_init__(self):
        if not self.snr_threshold > 0:
            raise ConfigError("outage.snr_threshold", "must be positive")
        if not 0 < self.outage_threshold < 1:
            raise ConfigError("outage.outage_threshold", "must lie in (0, 1)")


@dataclass(frozen=True)
class ResilienceWeights:
    w_outage: float = 0.5
    w_queue: float = 0.5

    def __post_init__(self):
        if self.w_outage < 0 or self.w_queue < 0:
            raise ConfigError("resilience.weights", "weights must be nonnegative")
        if abs(self.w_outage + self.w_queue - 1.0) > 1e-9:
            raise ConfigError("resilience.weights", "weights must sum to 1")


def outage_from_mean_snr(mean_snr, params: OutageParams):
    """Pr{SNR <= threshold} for SNR = mean_snr * |g|^2.

    Nakagami-m power gain is Gamma(m, 1/m), so the outage is the regularised
    lower incomplete gamma P(m, m*threshold/mean). Without fading the link is
    a step function of its mean SNR.
    """
    mean = np.asarray(mean_snr, dtype=float)
    th = params.snr_threshold
    if params.fading is None:
        out = (mean <= th).astype(float)
    else:
        m = params.fading.nakagami_m
        with np.errstate(divide="ignore"):
            x = np.where(mean > 0, m * th / np.where(mean > 0, mean, 1.0), np.inf)
        out = np.where(np.isfinite(x), gammainc(m, np.where(np.isfinite(x), x, 0.0)), 1.0)
    return float(out) if out.ndim == 0 else out


def hop_outage(budget: LinkBudget, params: OutageParams, link: str = "isl") -> float:
    if link == "isl":
        mean = isl_snr(budget, 1.0)
    else:
        mean = ground_snr(budget, link, 1.0)
    return outage_from_mean_snr(mean, params)


class PathSelection:
    """Ordered directed links with S=1; must form a walk."""

    __slots__ = ("links",)

    def __init__(self, links: Sequence[tuple] = ()):
        self.links = tuple((int(i), int(j)) for i, j in links)

    @classmethod
    def from_walk(cls, nodes):
        nodes = list(nodes)
        return cls(zip(nodes[:-1], nodes[1:]))

    def validate(self):
        for (a, b), (c, d) in zip(self.links, self.links[1:]):
            if b != c:
                raise DomainError(f"path selection is not connected at ({a},{b}) -> ({c},{d})")
        return self

    def __len__(self):
        return len(self.links)

    def __iter__(self):
        return iter(self.links)


def path_survival(path: PathSelection, per_link_outages) -> float:
    s = 1.0
    for link in path:
        s *= 1.0 - per_link_outages[link]
    return s


def path_outage(path: PathSelection, per_link_outages, uplink_outage=0.0, downlink_outage=0.0) -> float:
    path.validate()
    return 1.0 - (1.0 - uplink_outage) * (1.0 - downlink_outage) * path_survival(path, per_link_outages)


def _link_queue_term(qi, qj, aggregate):
    if aggregate == "bottleneck":
        return min(1.0 - qi, 1.0 - qj)
    return max(1.0 - qi, 1.0 - qj)


def resilience_score(path: PathSelection, outage_all: float, occupancies, weights=ResilienceWeights(),
                     aggregate: str = "max") -> float:
    """Weighted path survival plus a queue-freeness aggregate over selected links.

    ``aggregate="max"`` takes the best link (max of per-link max); ``"bottleneck"``
    takes the worst link (min of per-link min).
    """
    if aggregate not in ("max", "bottleneck"):
        raise ConfigError("resilience.aggregate", f"unknown aggregate {aggregate!r}")
    queue_term = 0.0
    if len(path):
        terms = [_link_queue_term(occupancies[i], occupancies[j], aggregate) for i, j in path]
        queue_term = max(terms) if aggregate == "max" else min(terms)
    return weights.w_outage * (1.0 - outage_all) + weights.w_queue * queue_term


@dataclass(frozen=True)
class FailureEvent:
    target: tuple  # ("sat", i) or ("link", i, j), flat indices
    start: float
    duration: float
    kind: str = "jamming"

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("failure.duration", "must be positive")
        if self.kind not in ("jamming", "hardware"):
            raise ConfigError("failure.kind", f"unknown kind {self.kind!r}")
        if self.target[0] not in ("sat", "link"):
            raise ConfigError("failure.target", f"unknown target {self.target!r}")

    def active(self, now: float) -> bool:
        return self.start <= now < self.start + self.duration


def active_failures(schedule, now):
    sats, links = set(), set()
    for ev in schedule:
        if ev.active(now):
            if ev.target[0] == "sat":
                sats.add(ev.target[1])
            else:
                links.add((ev.target[1], ev.target[2]))
    return sats, links


def apply_failures(neighbors: np.ndarray, schedule, now: float):
    """Effective neighbour table and the set of failed satellites at ``now``.

    A failed satellite loses all ISLs in both directions and its ground link.
    """
    failed_sats, failed_links = active_failures(schedule, now)
    if not failed_sats and not failed_links:
        return neighbors, frozenset()
    eff = neighbors.copy()
    for s in failed_sats:
        eff[s, :] = NO_NEIGHBOR
    if failed_sats:
        eff[np.isin(eff, list(failed_sats))] = NO_NEIGHBOR
    for i, j in failed_links:
        eff[i, eff[i] == j] = NO_NEIGHBOR
    return eff, frozenset(failed_sats)


def link_resilience_feature(link, now, failure_schedule, occupancies, link_outage: float,
                            weights=ResilienceWeights(), aggregate="max") -> float:
    """Per-link reliability in [0, 1]; 0 while the link or either endpoint is failed."""
    i, j = link
    sats, links = active_failures(failure_schedule, now)
    if i in sats or j in sats or (i, j) in links:
        return 0.0
    return (weights.w_outage * (1.0 - link_outage)
            + weights.w_queue * _link_queue_term(occupancies[i], occupancies[j], aggregate))


def random_failure_schedule(n_sats, neighbors, count, horizon, seed, mean_duration=5.0,
                            node_fraction=0.3, kind="jamming"):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        start = float(rng.uniform(0, horizon))
        dur = float(rng.exponential(mean_duration)) + 1e-3
        i = int(rng.integers(n_sats))
        if rng.random() < node_fraction:
            out.append(FailureEvent(("sat", i), start, dur, kind))
        else:
            cand = [int(j) for j in neighbors[i] if j != NO_NEIGHBOR]
            j = cand[int(rng.integers(len(cand)))]
            out.append(FailureEvent(("link", i, j), start, dur, kind))
            out.append(FailureEvent(("link", j, i), start, dur, kind))
    return out


def _parse_sat(token, sats_per_plane):
    p, s = token.split("/")
    return int(p) * sats_per_plane + int(s)


def load_failures(path, sats_per_plane: int) -> list[FailureEvent]:
    """Read ``target,start_s,duration_s,kind`` records.

    Targets are ``sat:P/S`` or ``link:P/S->P/S`` with plane/slot indices.
    """
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows and rows[0][0].strip().lower() == "target":
        rows = rows[1:]
    for lineno, row in enumerate(rows, 1):
        where = f"{path.name}:{lineno}"
        if len(row) != 4:
            raise ConfigError(where, f"expected 4 fields, got {len(row)}")
        tgt = row[0].strip()
        try:
            if tgt.startswith("sat:"):
                target = ("sat", _parse_sat(tgt[4:], sats_per_plane))
            elif tgt.startswith("link:"):
                a, b = tgt[5:].split("->")
                target = ("link", _parse_sat(a, sats_per_plane), _parse_sat(b, sats_per_plane))
            else:
                raise ValueError(f"bad target {tgt!r}")
            out.append(FailureEvent(target, float(row[1]), float(row[2]), row[3].strip()))
        except ValueError as exc:
            raise ConfigError(where, str(exc)) from None
    return out


def dump_failures(schedule, sats_per_plane: int) -> str:
    def sat(i):
        return f"{i // sats_per_plane}/{i % sats_per_plane}"

    lines = ["target,start_s,duration_s,kind"]
    for ev in schedule:
        t = f"sat:{sat(ev.target[1])}" if ev.target[0] == "sat" else f"link:{sat(ev.target[1])}->{sat(ev.target[2])}"
        lines.append(f"{t},{ev.start!r},{ev.duration!r},{ev.kind}")
    return "\n".join(lines) + "\n"

