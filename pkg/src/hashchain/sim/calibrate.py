"""Fit the free delay constants to reported mean delays.

Free constants: CA round-trip time, per-vehicle contention slope and block
build cost.  Fingerprint processing time is never fitted.

Every anchor is a mean of cell means, and each cell mean is affine in the three
free constants (they only add fixed amounts to per-vehicle delays and do not
change event order).  The fit therefore probes the sweep at the current point
and one step along each constant, solves a bounded least-squares problem on
relative errors over that affine model, and finally re-runs a fresh sweep with
the fitted constants to report the residuals actually achieved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .config import ScenarioConfig
from .engine import BASELINE, HASHCHAIN
from .report import DelayReport, run_scenario

FREE = ("ca_rtt_ms", "contention_ms_per_vehicle", "block_build_ms")
BOUNDS = {
    "ca_rtt_ms": (0.0, 100.0),
    # kept strictly positive so that delay grows with density by construction
    "contention_ms_per_vehicle": (0.05, 1.0),
    "block_build_ms": (0.0, 100.0),
}
TOLERANCE = 0.25


@dataclass(frozen=True)
class Targets:
    baseline_30kmh_ms: float = 5.9
    hashchain_30kmh_ms: float = 7.36
    hashchain_overall_ms: float = 8.6
    fingerprint_processing_ms: float = 11.0

    @classmethod
    def from_dict(cls, data: dict) -> "Targets":
        data = data.get("targets", data)
        return cls(**{k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__})


def anchor_values(report: DelayReport) -> dict[str, float]:
    return {
        "baseline_30kmh_ms": report.mean_of(BASELINE, 30),
        "hashchain_30kmh_ms": report.mean_of(HASHCHAIN, 30),
        "hashchain_overall_ms": report.mean_of(HASHCHAIN),
    }


def residuals(report: DelayReport, targets: Targets) -> dict[str, float]:
    """Signed relative error per anchor."""
    got = anchor_values(report)
    return {k: (got[k] - getattr(targets, k)) / getattr(targets, k) for k in got}


@dataclass
class Calibration:
    config: ScenarioConfig
    targets: Targets
    achieved: dict[str, float]
    residuals: dict[str, float]
    report: DelayReport = field(repr=False)

    @property
    def converged(self) -> bool:
        return all(abs(r) <= TOLERANCE for r in self.residuals.values())

    def tables(self) -> dict[str, dict]:
        res = {f"{k}_relative_error": round(v, 6) for k, v in self.residuals.items()}
        res.update({f"{k}_achieved": round(v, 6) for k, v in self.achieved.items()})
        res["fingerprint_processing_ms_pinned"] = self.config.fingerprint_processing_ms
        res["tolerance"] = TOLERANCE
        res["converged"] = self.converged
        res["note"] = "values fitted to reported anchors, not independently reproduced"
        return {"targets": {k: getattr(self.targets, k) for k in self.targets.__dataclass_fields__},
                "residuals": res}


def calibrate(config: ScenarioConfig, targets: Targets = Targets()) -> Calibration:
    config = config.replace(fingerprint_processing_ms=targets.fingerprint_processing_ms).validate()
    keys = list(anchor_values(run_scenario(config)).keys())  # fixes anchor order
    tgt = np.array([getattr(targets, k) for k in keys])

    def measure(cfg):
        vals = anchor_values(run_scenario(cfg))
        return np.array([vals[k] for k in keys])

    x0 = np.array([getattr(config, p) for p in FREE])
    m0 = measure(config)
    jac = np.zeros((len(keys), len(FREE)))
    for j, name in enumerate(FREE):
        step = 1.0 if name != "contention_ms_per_vehicle" else 0.1
        jac[:, j] = (measure(config.replace(**{name: x0[j] + step})) - m0) / step

    def rel_err(x):
        return (m0 + jac @ (x - x0) - tgt) / tgt

    lo = np.array([BOUNDS[p][0] for p in FREE])
    hi = np.array([BOUNDS[p][1] for p in FREE])
    fit = least_squares(rel_err, np.clip(x0, lo, hi), bounds=(lo, hi), method="trf", xtol=1e-12, ftol=1e-12)
    fitted = config.replace(**{p: round(float(v), 6) for p, v in zip(FREE, fit.x)})

    report = run_scenario(fitted)
    return Calibration(fitted, targets, anchor_values(report), residuals(report, targets), report)
