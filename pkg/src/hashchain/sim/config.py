"""Scenario configuration and its TOML key-value file format."""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..identity import DEFAULT_FLIP_PROB, DEFAULT_LENGTH, DEFAULT_THRESHOLD

# 30, 50, 70 and 100 km/h
DEFAULT_SPEEDS = (8.33, 13.89, 19.44, 27.78)
DEFAULT_DENSITIES = (20, 40, 60, 80, 100, 120)


@dataclass(frozen=True)
class ScenarioConfig:
    area_m: float = 1000.0
    sm_count: int = 2
    sim_duration_s: float = 360.0
    densities: tuple[int, ...] = DEFAULT_DENSITIES
    speeds_mps: tuple[float, ...] = DEFAULT_SPEEDS
    data_rate_bps: float = 6e6
    plain_beacon_bits: int = 80
    hashchain_beacon_bits: int = 720
    beacon_interval_ms: float = 100.0
    # lead time between a vehicle's first beacon and its authentication request
    auth_lead_ms: float = 100.0

    # broker batching
    batch_n: int = 10
    batch_interval_ms: int = 2

    # fingerprinting
    fingerprint_processing_ms: float = 11.0
    fingerprint_length: int = DEFAULT_LENGTH
    flip_prob: float = DEFAULT_FLIP_PROB
    threshold: float = DEFAULT_THRESHOLD

    # 802.11p channel access (10 MHz channel timing)
    aifs_ms: float = 0.110
    slot_ms: float = 0.013
    cw_min: int = 15
    propagation_mps: float = 3.0e8

    # fitted by the calibrate subcommand
    contention_ms_per_vehicle: float = 0.05
    ca_rtt_ms: float = 5.0
    block_build_ms: float = 3.0

    # fixed ledger costs
    sync_ms: float = 0.5
    open_ms: float = 0.1

    # mobility
    spawn_window_s: float = 240.0
    strip_m: float = 50.0
    spawn_vertices: tuple[tuple[float, float], ...] = ((0.0, 250.0), (0.0, 750.0), (200.0, 0.0), (200.0, 1000.0))

    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        problems = []
        positive = [
            "area_m", "sim_duration_s", "data_rate_bps", "plain_beacon_bits", "hashchain_beacon_bits",
            "beacon_interval_ms", "batch_n", "fingerprint_length", "slot_ms", "propagation_mps",
            "spawn_window_s", "sm_count",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        nonneg = [
            "auth_lead_ms", "batch_interval_ms", "fingerprint_processing_ms", "aifs_ms", "cw_min",
            "contention_ms_per_vehicle", "ca_rtt_ms", "block_build_ms", "sync_ms", "open_ms", "strip_m",
        ]
        for name in nonneg:
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.sm_count != 2:
            problems.append("only two security domains are modelled (sm_count = 2)")
        if not self.densities or any(d <= 0 for d in self.densities):
            problems.append("densities must be positive")
        if any(b - a != 20 for a, b in zip(self.densities, self.densities[1:])):
            problems.append("densities must step by 20")
        if not self.speeds_mps or any(v <= 0 for v in self.speeds_mps):
            problems.append("speeds must be positive")
        if not 0 <= self.flip_prob <= 1 or not 0 <= self.threshold <= 1:
            problems.append("flip_prob and threshold must lie in [0, 1]")
        half = self.area_m / 2
        for x, y in self.spawn_vertices:
            if not (0 <= x < half - self.strip_m and 0 <= y <= self.area_m):
                problems.append(f"spawn vertex ({x}, {y}) must lie in the source domain, outside the strip")
        if self.seed < 0:
            problems.append("seed must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


_TUPLE_FIELDS = {"densities": int, "speeds_mps": float}


def config_from_dict(data: dict) -> ScenarioConfig:
    known = {f.name: f for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    defaults = ScenarioConfig()
    for key, value in data.items():
        default = getattr(defaults, key)
        try:
            if key in _TUPLE_FIELDS:
                kwargs[key] = tuple(_TUPLE_FIELDS[key](v) for v in value)
            elif key == "spawn_vertices":
                kwargs[key] = tuple((float(x), float(y)) for x, y in value)
            elif isinstance(default, bool):
                kwargs[key] = bool(value)
            elif isinstance(default, int):
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(f"expected an integer, got {value}")
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return ScenarioConfig(**kwargs).validate()


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    # calibrated parameter files keep residuals in their own table
    data = {k: v for k, v in data.items() if not isinstance(v, dict)}
    return config_from_dict(data)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise TypeError(type(value))


def dump_config(config: ScenarioConfig, extra_tables: dict[str, dict] | None = None) -> str:
    lines = [f"{f.name} = {_fmt(getattr(config, f.name))}" for f in fields(config)]
    for table, items in (extra_tables or {}).items():
        lines.append("")
        lines.append(f"[{table}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in items.items())
    return "\n".join(lines) + "\n"


def load_tables(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)
