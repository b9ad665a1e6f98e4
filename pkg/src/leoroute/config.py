"""Experiment configuration: YAML in, validated and fully resolved out.

Every field has a default, so a minimal file may be empty. ``resolve``
returns the merged tree; ``dump_resolved`` writes it back as YAML, and
re-parsing that echo yields the same tree.

Environment overrides use ``LEOROUTE_<SECTION>__<KEY>=<yaml value>``, e.g.
``LEOROUTE_SIM__HORIZON_S=5`` or ``LEOROUTE_POLICIES='[dijkstra]'``.
"""
from __future__ import annotations

import copy
import hashlib
import math
import os
from dataclasses import dataclass
from importlib.resources import files
from pathlib import Path

import yaml

from .channel import RadioConfig
from .errors import ConfigError
from .learning.state import RewardWeights
from .orbital import ConstellationParams, load_gateways
from .resilience import OutageParams, ResilienceWeights, load_failures
from .routing import DecisionCostModel
from .traffic import TrafficPattern

ENV_PREFIX = "LEOROUTE_"
POLICY_NAMES = ("dijkstra", "sarsa", "madrl")
BUILTIN_PREFIX = "builtin:"

DEFAULTS = {
    "constellation": {
        "planes": 72,
        "sats_per_plane": 22,
        "altitude_km": 550.0,
        "inclination_deg": 53.0,
        "phasing_offset_deg": 0.0,
        "disable_seam_links": False,
    },
    "gateways": "builtin:gateways20.csv",
    "radio": {
        "satellite_power_w": 20.0,
        "terminal_power_w": 10.0,
        "antenna_gain_db": 60.0,
        "path_loss_exponent": 2.0,
        "noise_psd_dbm_hz": -174.0,
        "carrier_hz": 30e9,
        "bandwidth_hz": 500e6,
        "packet_bits": 64e3,
        "nakagami_m": 2.0,
        "isl_fading": False,
    },
    "outage": {"snr_threshold_db": 80.0, "outage_threshold": 0.1},
    "resilience": {"w_outage": 0.5, "w_queue": 0.5, "aggregate": "max"},
    "sim": {
        "dt_s": 1e-3,
        "horizon_s": 10.0,
        "snapshot_refresh_s": 1.0,
        "min_elevation_deg": 25.0,
        "coverage_fallback": "error",
        "queue_capacity_bits": 1e9,
        "epoch_offset_s": 0.0,
        "epoch_spread_s": 0.0,  # per-seed shift of the geometry epoch
        "frozen_time": False,
        "ttl_hops": None,
        "resilience_sample_s": 0.05,
    },
    "traffic": {
        "kind": "population",
        "levels_bps": [1e8],
        "foreground_bps": 0.0,
    },
    "failures": None,
    "policies": ["dijkstra", "sarsa", "madrl"],
    "dijkstra": {
        "interval_s": 5.0,
        "include_transmission": True,
        "sweep_intervals_s": [],
        "sweep_horizon_s": None,  # null: sim.horizon_s
        "sweep_level_bps": None,  # null: first traffic level
    },
    "cost": {"dijkstra_op_cost_s": 1e-6, "onboard_flops_per_s": 1e9, "control_gateway": None},
    "reward": {
        "w_queue": -1.0,
        "w_progress": 1.0,
        "w_revisit": -1.0,
        "w_resilience": 0.5,
        "delivery_bonus": 10.0,
        "drop_penalty": 10.0,
        "queue_ref_s": 0.01,
    },
    "train": {"traffic_bps": 1e8, "max_sim_s": 600.0},
    "madrl": {
        "iterations": 100000,
        "hidden": [128, 128],
        "lr": 1e-4,
        "gamma": 0.99,
        "batch": 128,
        "memory": 2000,
        "sync_every": 500,
        "epsilon_start": 0.99,
        "epsilon_end": 0.1,
        "epsilon_decay": 1000.0,
        "loop_guard": True,
        "model": None,
        "online": {"enabled": True, "lr": 1e-5, "cadence": 4, "batch": 16, "memory": 256},
    },
    "sarsa": {"iterations": 100000, "head": "linear", "lr": 1e-3, "gamma": 0.99, "loop_guard": True,
              "model": None},
    "seeds": [0],
    "output": "out",
}


@dataclass
class Diagnostic:
    field: str
    message: str
    line: int | None = None

    def __str__(self):
        where = f" (line {self.line})" if self.line else ""
        return f"{self.field}{where}: {self.message}"


class ConfigInvalid(ConfigError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__(self.diagnostics[0].field, "; ".join(str(d) for d in self.diagnostics))


def _line_index(text):
    """Map dotted field paths to 1-based source lines."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[path] = k.start_mark.line + 1
                walk(v, path)

    if root is not None:
        walk(root, "")
    return out


def _env_overrides(env):
    out = {}
    for key, raw in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = yaml.safe_load(raw)
    return out


def _merge(base, override, prefix, diags):
    for k, v in override.items():
        path = f"{prefix}.{k}" if prefix else k
        if k not in base:
            diags.append(Diagnostic(path, "unknown field"))
            continue
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                diags.append(Diagnostic(path, "expected a mapping"))
                continue
            _merge(base[k], v, path, diags)
        else:
            base[k] = v


def _as_number(v):
    """YAML 1.1 reads ``5e6`` as text; accept numeric strings, reject booleans."""
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return v
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _check_types(tree, defaults, prefix, diags):
    for k, dv in defaults.items():
        path = f"{prefix}.{k}" if prefix else k
        v = tree[k]
        if isinstance(dv, dict):
            _check_types(v, dv, path, diags)
        elif isinstance(dv, bool):
            if not isinstance(v, bool):
                diags.append(Diagnostic(path, f"expected true/false, got {v!r}"))
        elif isinstance(dv, (int, float)) and not isinstance(dv, bool):
            v = _as_number(v)
            if v is None:
                diags.append(Diagnostic(path, f"expected a number, got {tree[k]!r}"))
            elif isinstance(dv, float):
                tree[k] = float(v)
            elif float(v).is_integer():
                tree[k] = int(v)
            else:
                diags.append(Diagnostic(path, f"expected an integer, got {tree[k]!r}"))
        elif isinstance(dv, list) and isinstance(v, list) and k in ("levels_bps", "sweep_intervals_s"):
            nums = [_as_number(x) for x in v]
            if any(x is None for x in nums):
                diags.append(Diagnostic(path, f"expected numbers, got {v!r}"))
            else:
                tree[k] = [float(x) for x in nums]
        elif isinstance(dv, list):
            if not isinstance(v, list):
                diags.append(Diagnostic(path, f"expected a list, got {v!r}"))


def _rules(t, diags):
    def need(cond, path, msg):
        if not cond:
            diags.append(Diagnostic(path, msg))

    c = t["constellation"]
    need(c["altitude_km"] > 0, "constellation.altitude_km", "must be positive")
    need(isinstance(c["planes"], int) and c["planes"] >= 1, "constellation.planes", "must be an integer >= 1")
    need(isinstance(c["sats_per_plane"], int) and c["sats_per_plane"] >= 3,
         "constellation.sats_per_plane", "must be an integer >= 3")
    need(0 <= c["inclination_deg"] <= 180, "constellation.inclination_deg", "must lie in [0, 180]")
    r = t["radio"]
    for k in ("satellite_power_w", "terminal_power_w", "carrier_hz", "bandwidth_hz", "packet_bits",
              "path_loss_exponent"):
        need(r[k] > 0, f"radio.{k}", "must be positive")
    need(r["nakagami_m"] >= 0.5, "radio.nakagami_m", "must be >= 0.5")
    o = t["outage"]
    need(0 < o["outage_threshold"] <= 1, "outage.outage_threshold", "must lie in (0, 1]")
    w = t["resilience"]
    need(w["w_outage"] >= 0 and w["w_queue"] >= 0 and abs(w["w_outage"] + w["w_queue"] - 1) < 1e-9,
         "resilience", "weights must be nonnegative and sum to 1")
    need(w["aggregate"] in ("max", "bottleneck"), "resilience.aggregate", "must be 'max' or 'bottleneck'")
    s = t["sim"]
    need(s["dt_s"] > 0, "sim.dt_s", "must be positive")
    need(s["snapshot_refresh_s"] >= s["dt_s"], "sim.snapshot_refresh_s", "must be >= dt_s")
    need(s["horizon_s"] >= 0, "sim.horizon_s", "must be nonnegative")
    need(s["queue_capacity_bits"] > 0, "sim.queue_capacity_bits", "must be positive")
    need(s["coverage_fallback"] in ("error", "nearest"), "sim.coverage_fallback", "must be 'error' or 'nearest'")
    need(0 <= s["min_elevation_deg"] < 90, "sim.min_elevation_deg", "must lie in [0, 90)")
    need(s["resilience_sample_s"] > 0, "sim.resilience_sample_s", "must be positive")
    need(s["ttl_hops"] is None or (isinstance(s["ttl_hops"], int) and s["ttl_hops"] > 0), "sim.ttl_hops",
         "must be a positive integer or null")
    tr = t["traffic"]
    need(tr["kind"] in ("uniform", "population"), "traffic.kind", "must be 'uniform' or 'population'")
    need(len(tr["levels_bps"]) >= 1 and all(isinstance(x, (int, float)) and x >= 0 for x in tr["levels_bps"]),
         "traffic.levels_bps", "must be a non-empty list of nonnegative rates")
    need(tr["foreground_bps"] >= 0, "traffic.foreground_bps", "must be nonnegative")
    pol = t["policies"]
    need(len(pol) >= 1, "policies", "select at least one policy")
    for p in pol:
        need(p in POLICY_NAMES, "policies", f"unknown policy {p!r}; choose from {', '.join(POLICY_NAMES)}")
    need(len(set(pol)) == len(pol), "policies", "duplicate entries")
    need(t["dijkstra"]["interval_s"] > 0, "dijkstra.interval_s", "must be positive")
    need(all(isinstance(x, (int, float)) and x > 0 for x in t["dijkstra"]["sweep_intervals_s"]),
         "dijkstra.sweep_intervals_s", "intervals must be positive")
    for k in ("sweep_horizon_s", "sweep_level_bps"):
        v = _as_number(t["dijkstra"][k]) if t["dijkstra"][k] is not None else 0.0
        need(v is not None and v >= 0, f"dijkstra.{k}", "must be a nonnegative number or null")
        if v is not None and t["dijkstra"][k] is not None:
            t["dijkstra"][k] = float(v)
    for name in ("madrl", "sarsa"):
        m = t[name]
        need(isinstance(m["iterations"], int) and m["iterations"] >= 0, f"{name}.iterations",
             "must be a nonnegative integer")
        need(m["lr"] >= 0, f"{name}.lr", "must be nonnegative")
        need(0 <= m["gamma"] <= 1, f"{name}.gamma", "must lie in [0, 1]")
    need(t["sarsa"]["head"] in ("linear", "mlp"), "sarsa.head", "must be 'linear' or 'mlp'")
    m = t["madrl"]
    need(all(isinstance(h, int) and h > 0 for h in m["hidden"]), "madrl.hidden", "layer widths must be positive")
    need(isinstance(m["batch"], int) and 0 < m["batch"] <= m["memory"], "madrl.batch",
         "must be a positive integer no larger than madrl.memory")
    need(m["online"]["cadence"] >= 1, "madrl.online.cadence", "must be >= 1")
    need(m["online"]["batch"] <= m["online"]["memory"], "madrl.online.batch", "must not exceed the local memory")
    rw = t["reward"]
    need(rw["w_queue"] <= 0, "reward.w_queue", "is a penalty and must be <= 0")
    need(rw["w_revisit"] <= 0, "reward.w_revisit", "is a penalty and must be <= 0")
    need(rw["w_progress"] >= 0, "reward.w_progress", "must be >= 0")
    need(rw["w_resilience"] >= 0, "reward.w_resilience", "must be >= 0")
    need(rw["queue_ref_s"] > 0, "reward.queue_ref_s", "must be positive")
    need(len(t["seeds"]) >= 1 and all(isinstance(x, int) for x in t["seeds"]), "seeds",
         "must be a non-empty list of integers")
    need(t["cost"]["onboard_flops_per_s"] > 0, "cost.onboard_flops_per_s", "must be positive")


def _resolve_path(value, base_dir):
    if value is None:
        return None
    if isinstance(value, str) and value.startswith(BUILTIN_PREFIX):
        return files("leoroute").joinpath("data", value[len(BUILTIN_PREFIX):])
    p = Path(value)
    return p if p.is_absolute() else Path(base_dir) / p


def resolve(raw: dict | None, base_dir=".", env=None, lines=None) -> dict:
    """Merge ``raw`` over the defaults and validate; raises ``ConfigInvalid``."""
    lines = lines or {}
    diags = []
    tree = copy.deepcopy(DEFAULTS)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigInvalid([Diagnostic("<root>", "expected a mapping at top level")])
    _merge(tree, raw, "", diags)
    _merge(tree, _env_overrides(os.environ if env is None else env), "", diags)
    if not diags:
        _check_types(tree, DEFAULTS, "", diags)
    if not diags:
        _rules(tree, diags)
    if not diags:
        for key in ("gateways", "failures"):
            p = _resolve_path(tree[key], base_dir)
            if p is not None and not p.is_file():
                diags.append(Diagnostic(key, f"file not found: {tree[key]}"))
        for name in ("madrl", "sarsa"):
            p = _resolve_path(tree[name]["model"], base_dir)
            if p is not None and not p.is_file():
                diags.append(Diagnostic(f"{name}.model", f"file not found: {tree[name]['model']}"))
    if not diags:
        try:
            ExperimentConfig(tree, base_dir).load_inputs()
        except ConfigError as err:
            diags.append(Diagnostic(err.field, str(err)))
        except (OSError, ValueError) as err:
            diags.append(Diagnostic("gateways/failures", str(err)))
    for d in diags:
        d.line = d.line or lines.get(d.field)
    if diags:
        raise ConfigInvalid(diags)
    return tree


def dump_resolved(tree: dict) -> str:
    return yaml.safe_dump(tree, sort_keys=False, default_flow_style=None)


def config_hash(tree: dict) -> str:
    return hashlib.sha256(dump_resolved(tree).encode()).hexdigest()[:16]


class ExperimentConfig:
    """Resolved configuration plus builders for the runtime objects."""

    def __init__(self, tree: dict, base_dir="."):
        self.tree = tree
        self.base_dir = Path(base_dir)
        self._gateways = None
        self._failures = None

    def __getitem__(self, key):
        return self.tree[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.tree == other.tree

    @property
    def hash(self):
        return config_hash(self.tree)

    def echo(self) -> str:
        return dump_resolved(self.tree)

    @property
    def policies(self):
        return list(self.tree["policies"])

    @property
    def seeds(self):
        return list(self.tree["seeds"])

    @property
    def levels(self):
        return [float(x) for x in self.tree["traffic"]["levels_bps"]]

    def path(self, value):
        return _resolve_path(value, self.base_dir)

    def load_inputs(self):
        self.constellation_params()
        self.gateways()
        self.failures()
        self.radio()
        return self

    def constellation_params(self) -> ConstellationParams:
        c = self.tree["constellation"]
        try:
            return ConstellationParams(c["planes"], c["sats_per_plane"], c["altitude_km"],
                                       math.radians(c["inclination_deg"]),
                                       phasing_offset=math.radians(c["phasing_offset_deg"]),
                                       disable_seam_links=c["disable_seam_links"])
        except ConfigError as err:
            raise ConfigError(f"constellation.{err.field}", str(err)) from None

    def gateways(self):
        if self._gateways is None:
            self._gateways = load_gateways(self.path(self.tree["gateways"]))
            if len(self._gateways) < 2:
                raise ConfigError("gateways", "need at least two gateways")
        return self._gateways

    def failures(self):
        if self._failures is None:
            p = self.path(self.tree["failures"])
            self._failures = [] if p is None else load_failures(p, self.tree["constellation"]["sats_per_plane"])
        return self._failures

    def radio(self) -> RadioConfig:
        r = self.tree["radio"]
        return RadioConfig(satellite_power_w=r["satellite_power_w"], terminal_power_w=r["terminal_power_w"],
                           antenna_gain_db=r["antenna_gain_db"], path_loss_exponent=r["path_loss_exponent"],
                           noise_psd_dbm_hz=r["noise_psd_dbm_hz"], carrier_hz=r["carrier_hz"],
                           bandwidth_hz=r["bandwidth_hz"], packet_bits=r["packet_bits"],
                           nakagami_m=r["nakagami_m"], isl_fading=r["isl_fading"])

    def outage(self) -> OutageParams:
        o = self.tree["outage"]
        return OutageParams(10 ** (o["snr_threshold_db"] / 10), outage_threshold=o["outage_threshold"])

    def resilience_weights(self) -> ResilienceWeights:
        w = self.tree["resilience"]
        return ResilienceWeights(w["w_outage"], w["w_queue"])

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(**self.tree["reward"])

    def cost_model(self) -> DecisionCostModel:
        c = self.tree["cost"]
        return DecisionCostModel(c["dijkstra_op_cost_s"], c["onboard_flops_per_s"], c["control_gateway"])

    def epoch(self, seed: int) -> float:
        s = self.tree["sim"]
        return s["epoch_offset_s"] + seed * s["epoch_spread_s"]

    def traffic(self, level_bps: float, seed: int, background_stream=1):
        """Background pattern at ``level_bps`` plus optional tagged foreground on its own stream."""
        t = self.tree["traffic"]
        bits = self.tree["radio"]["packet_bits"]
        out = []
        if level_bps > 0:
            out.append(TrafficPattern(t["kind"], level_bps, seed=seed * 1000 + background_stream, packet_bits=bits))
        if t["foreground_bps"] > 0:
            out.append(TrafficPattern(t["kind"], t["foreground_bps"], seed=seed * 1000 + 2, packet_bits=bits,
                                      tagged=True))
        return tuple(out)

    def engine_config(self, seed: int, level_bps: float, **override):
        from .simcore import EngineConfig

        s = self.tree["sim"]
        kw = dict(
            constellation=self.constellation_params(), gateways=self.gateways(), radio=self.radio(),
            outage=self.outage(), resilience_weights=self.resilience_weights(),
            resilience_aggregate=self.tree["resilience"]["aggregate"],
            queue_capacity_bits=s["queue_capacity_bits"], dt=s["dt_s"], horizon=s["horizon_s"],
            snapshot_refresh_s=s["snapshot_refresh_s"], min_elevation=math.radians(s["min_elevation_deg"]),
            coverage_fallback=s["coverage_fallback"], traffic=self.traffic(level_bps, seed),
            failures=tuple(self.failures()), epoch_offset_s=self.epoch(seed), frozen_time=s["frozen_time"],
            ttl_hops=s["ttl_hops"], resilience_sample_s=s["resilience_sample_s"],
        )
        kw.update(override)
        return EngineConfig(**kw)


def load_config(path, env=None) -> ExperimentConfig:
    """Parse, merge defaults, validate. Raises ``ConfigInvalid`` with field paths and lines.

    ``builtin:desk.yaml`` names a preset shipped with the package.
    """
    path = Path(str(_resolve_path(str(path), "."))) if str(path).startswith(BUILTIN_PREFIX) else Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigInvalid([Diagnostic("<file>", str(err))]) from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        raise ConfigInvalid([Diagnostic("<yaml>", str(err).splitlines()[0],
                                        mark.line + 1 if mark else None)]) from None
    tree = resolve(raw, path.parent, env, _line_index(text))
    return ExperimentConfig(tree, path.parent)


def validate_config(path, env=None):
    """Returns ``(config, [])`` or ``(None, diagnostics)``."""
    try:
        return load_config(path, env), []
    except ConfigInvalid as err:
        return None, err.diagnostics


def from_dict(raw: dict, base_dir=".", env=None) -> ExperimentConfig:
    return ExperimentConfig(resolve(raw, base_dir, env or {}), base_dir)
