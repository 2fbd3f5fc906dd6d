"""Seeded simulation of the two-domain crossing scenario."""
from .config import ScenarioConfig, config_from_dict, dump_config, load_config
from .delay import contention_ms, propagation_ms, serialization_ms, tx_delay
from .engine import BASELINE, HASHCHAIN, SCHEMES, CellResult, CellSimulation, simulate_cell, speed_kmh
from .report import CSV_HEADER, DelayReport, DelayRow, parse_csv, run_baseline, run_scenario

__all__ = [
    "BASELINE", "CSV_HEADER", "CellResult", "CellSimulation", "DelayReport", "DelayRow", "HASHCHAIN",
    "SCHEMES", "ScenarioConfig", "config_from_dict", "contention_ms", "dump_config", "load_config",
    "parse_csv", "propagation_ms", "run_baseline", "run_scenario", "serialization_ms", "simulate_cell",
    "speed_kmh", "tx_delay",
]
