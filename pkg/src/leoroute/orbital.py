"""Walker-Delta constellation geometry.

Positions are computed on circular orbits from Kepler's third law. The
inertial frame has its x axis through the ascending node of plane 0; the
Earth-fixed frame coincides with it at t=0 and rotates at the sidereal rate.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, CoverageGapError

EARTH_RADIUS_KM = 6371.0
MU_EARTH_KM3_S2 = 398600.4418
EARTH_ROTATION_RAD_S = 7.2921159e-5

# ISL port order; index doubles as the learned action id.
UP, DOWN, RIGHT, LEFT = 0, 1, 2, 3
DIRECTIONS = ("up", "down", "right", "left")
NO_NEIGHBOR = -1


@dataclass(frozen=True)
class ConstellationParams:
    plane_count: int
    sats_per_plane: int
    altitude_km: float
    inclination: float  # radians
    eccentricity: float = 0.0
    phasing_offset: float = 0.0  # radians between adjacent planes
    earth_radius_km: float = EARTH_RADIUS_KM
    disable_seam_links: bool = False

    def __post_init__(self):
        if int(self.plane_count) != self.plane_count or self.plane_count < 1:
            raise ConfigError("plane_count", f"must be an integer >= 1, got {self.plane_count}")
        if int(self.sats_per_plane) != self.sats_per_plane or self.sats_per_plane < 3:
            raise ConfigError("sats_per_plane", f"must be an integer >= 3, got {self.sats_per_plane}")
        if not self.altitude_km > 0:
            raise ConfigError("altitude_km", f"must be positive, got {self.altitude_km}")
        if not 0.0 <= self.inclination <= math.pi:
            raise ConfigError("inclination", f"must lie in [0, pi], got {self.inclination}")
        if not 0.0 <= self.eccentricity < 1e-3:
            raise ConfigError("eccentricity", "only near-circular orbits are supported")
        if not self.earth_radius_km > 0:
            raise ConfigError("earth_radius_km", "must be positive")

    @property
    def total_satellites(self) -> int:
        return self.plane_count * self.sats_per_plane

    @property
    def orbit_radius_km(self) -> float:
        return self.earth_radius_km + self.altitude_km


def starlink_shell1() -> ConstellationParams:
    return ConstellationParams(72, 22, 550.0, math.radians(53.0))


def reduced_shell(planes=8, sats=8) -> ConstellationParams:
    return ConstellationParams(planes, sats, 550.0, math.radians(53.0))


class SatelliteId(NamedTuple):
    plane: int
    slot: int

    def flat(self, sats_per_plane: int) -> int:
        return self.plane * sats_per_plane + self.slot


@dataclass(frozen=True)
class Gateway:
    id: str
    lat: float  # radians
    lon: float  # radians
    population_weight: float = 1.0

    def __post_init__(self):
        if abs(self.lat) > math.pi / 2 + 1e-12:
            raise ConfigError(f"gateway[{self.id}].lat", "latitude outside [-90, 90] deg")
        if self.population_weight < 0:
            raise ConfigError(f"gateway[{self.id}].population_weight", "must be nonnegative")

    @classmethod
    def from_degrees(cls, id, lat_deg, lon_deg, population_weight=1.0):
        return cls(str(id), math.radians(lat_deg), math.radians(lon_deg), float(population_weight))

    def ecef(self, earth_radius_km=EARTH_RADIUS_KM) -> np.ndarray:
        cl = math.cos(self.lat)
        return earth_radius_km * np.array(
            [cl * math.cos(self.lon), cl * math.sin(self.lon), math.sin(self.lat)]
        )


class Constellation:
    """Static descriptor; positions at any time derive from it."""

    def __init__(self, params: ConstellationParams):
        self.params = params
        O, N = params.plane_count, params.sats_per_plane
        self.radius_km = params.orbit_radius_km
        self.mean_motion = math.sqrt(MU_EARTH_KM3_S2 / self.radius_km**3)
        self.period_s = 2 * math.pi / self.mean_motion
        planes = np.repeat(np.arange(O), N)
        slots = np.tile(np.arange(N), O)
        self.raan = 2 * math.pi * planes / O
        self.phase0 = 2 * math.pi * slots / N + planes * params.phasing_offset
        self.neighbors = self._wire_grid()

    @property
    def size(self) -> int:
        return self.params.total_satellites

    def flat(self, sat: SatelliteId) -> int:
        O, N = self.params.plane_count, self.params.sats_per_plane
        if not (0 <= sat[0] < O and 0 <= sat[1] < N):
            raise KeyError(f"unknown satellite {tuple(sat)}")
        return sat[0] * N + sat[1]

    def sat_id(self, flat: int) -> SatelliteId:
        if not 0 <= flat < self.size:
            raise KeyError(f"unknown satellite index {flat}")
        return SatelliteId(*divmod(int(flat), self.params.sats_per_plane))

    def _wire_grid(self) -> np.ndarray:
        p = self.params
        O, N = p.plane_count, p.sats_per_plane
        seam_shift = round(O * p.phasing_offset * N / (2 * math.pi)) % N
        nb = np.full((O * N, 4), NO_NEIGHBOR, dtype=np.int64)
        for plane in range(O):
            for slot in range(N):
                i = plane * N + slot
                nb[i, UP] = plane * N + (slot + 1) % N
                nb[i, DOWN] = plane * N + (slot - 1) % N
                if O == 1:
                    continue
                if plane + 1 < O:
                    nb[i, RIGHT] = (plane + 1) * N + slot
                elif O > 2 and not p.disable_seam_links:
                    nb[i, RIGHT] = (slot + seam_shift) % N
                if plane > 0:
                    nb[i, LEFT] = (plane - 1) * N + slot
                elif O > 2 and not p.disable_seam_links:
                    nb[i, LEFT] = (O - 1) * N + (slot - seam_shift) % N
        return nb

    def positions_eci(self, t: float) -> np.ndarray:
        u = self.phase0 + self.mean_motion * t
        inc = self.params.inclination
        x, y = np.cos(u), np.sin(u)
        yi, zi = y * math.cos(inc), y * math.sin(inc)
        cO, sO = np.cos(self.raan), np.sin(self.raan)
        return self.radius_km * np.column_stack((x * cO - yi * sO, x * sO + yi * cO, zi))

    def positions_ecef(self, t: float) -> np.ndarray:
        eci = self.positions_eci(t)
        th = EARTH_ROTATION_RAD_S * t
        c, s = math.cos(th), math.sin(th)
        return np.column_stack((c * eci[:, 0] + s * eci[:, 1], -s * eci[:, 0] + c * eci[:, 1], eci[:, 2]))


def build_constellation(params: ConstellationParams) -> Constellation:
    return Constellation(params)


def satellite_position(constellation: Constellation, sat: SatelliteId, t: float, frame="eci") -> np.ndarray:
    if t < 0:
        raise ValueError("t must be >= 0")
    i = constellation.flat(sat)
    pos = constellation.positions_eci(t) if frame == "eci" else constellation.positions_ecef(t)
    return pos[i]


def isl_neighbors(constellation: Constellation, sat: SatelliteId) -> dict[str, SatelliteId]:
    i = constellation.flat(sat)
    return {
        DIRECTIONS[d]: constellation.sat_id(j)
        for d, j in enumerate(constellation.neighbors[i])
        if j != NO_NEIGHBOR
    }


def _elevation_and_range(sat_ecef: np.ndarray, gw_ecef: np.ndarray):
    v = sat_ecef - gw_ecef
    rng = np.linalg.norm(v, axis=-1)
    up = gw_ecef / np.linalg.norm(gw_ecef)
    sin_el = (v @ up) / rng
    return np.arcsin(np.clip(sin_el, -1.0, 1.0)), rng


def gateway_attachment(constellation, g: Gateway, t: float, min_elevation: float) -> int:
    """Flat index of the visible satellite with the shortest slant range."""
    sat = constellation.positions_ecef(t)
    el, rng = _elevation_and_range(sat, g.ecef(constellation.params.earth_radius_km))
    visible = el >= min_elevation
    if not visible.any():
        raise CoverageGapError(g.id, t)
    # argmin returns the first minimum, i.e. the smallest flat index on ties
    return int(np.argmin(np.where(visible, rng, np.inf)))


@dataclass(frozen=True)
class ConstellationSnapshot:
    time: float
    positions: np.ndarray  # Earth-fixed, km, shape (N, 3)
    neighbors: np.ndarray  # (N, 4) flat indices, NO_NEIGHBOR where absent
    gateway_attachment: dict  # gateway id -> flat sat index
    coverage_gaps: tuple = field(default=())  # gateways attached by the nearest-satellite fallback

    def isl_distance(self, i: int, j: int) -> float:
        return float(np.linalg.norm(self.positions[i] - self.positions[j]))


def take_snapshot(constellation, gateways, t, min_elevation, fallback="error") -> ConstellationSnapshot:
    """Positions, grid wiring and gateway attachments at time ``t``.

    ``fallback="nearest"`` attaches an uncovered gateway to the closest
    satellite regardless of elevation and records it in ``coverage_gaps``.
    """
    pos = constellation.positions_ecef(t)
    attach, gaps = {}, []
    for g in gateways:
        el, rng = _elevation_and_range(pos, g.ecef(constellation.params.earth_radius_km))
        visible = el >= min_elevation
        if visible.any():
            attach[g.id] = int(np.argmin(np.where(visible, rng, np.inf)))
        elif fallback == "nearest":
            attach[g.id] = int(np.argmin(rng))
            gaps.append(g.id)
        else:
            raise CoverageGapError(g.id, t)
    return ConstellationSnapshot(t, pos, constellation.neighbors, attach, tuple(gaps))


def load_gateways(path) -> list[Gateway]:
    """Read ``id,lat_deg,lon_deg,population_weight`` records; ``#`` starts a comment."""
    path = Path(path)
    out, seen = [], set()
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows and rows[0][0].strip().lower() == "id":
        rows = rows[1:]
    for lineno, row in enumerate(rows, 1):
        if len(row) != 4:
            raise ConfigError(f"{path.name}:{lineno}", f"expected 4 fields, got {len(row)}")
        gid = row[0].strip()
        if gid in seen:
            raise ConfigError(f"{path.name}:{lineno}", f"duplicate gateway id {gid!r}")
        seen.add(gid)
        try:
            lat, lon, w = (float(x) for x in row[1:])
        except ValueError as exc:
            raise ConfigError(f"{path.name}:{lineno}", str(exc)) from None
        out.append(Gateway.from_degrees(gid, lat, lon, w))
    if not out:
        raise ConfigError(path.name, "no gateways defined")
    return out
