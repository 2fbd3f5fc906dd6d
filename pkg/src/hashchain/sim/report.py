"""Delay reports and the scenario runners that produce them."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .config import ScenarioConfig
from .engine import BASELINE, HASHCHAIN, SCHEMES, CellResult, simulate_cell, speed_kmh

CSV_HEADER = ("scheme", "speed_kmh", "density", "mean_delay_ms", "samples", "dropped")


@dataclass(frozen=True)
class DelayRow:
    scheme: str
    speed_kmh: int
    density: int
    mean_delay_ms: float
    samples: int
    dropped: int
    in_flight: int = 0


@dataclass
class DelayReport:
    rows: list[DelayRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.scheme, r.speed_kmh, r.density, f"{r.mean_delay_ms:.3f}", r.samples, r.dropped])
        return buf.getvalue()

    def cell(self, scheme: str, speed_kmh: int, density: int) -> DelayRow:
        for r in self.rows:
            if (r.scheme, r.speed_kmh, r.density) == (scheme, speed_kmh, density):
                return r
        raise KeyError((scheme, speed_kmh, density))

    def series(self, scheme: str, speed_kmh: int) -> list[DelayRow]:
        return sorted((r for r in self.rows if r.scheme == scheme and r.speed_kmh == speed_kmh),
                      key=lambda r: r.density)

    def mean_of(self, scheme: str, speed_kmh: int | None = None) -> float:
        """Unweighted mean of cell means, over one speed or over every speed."""
        vals = [r.mean_delay_ms for r in self.rows
                if r.scheme == scheme and (speed_kmh is None or r.speed_kmh == speed_kmh)]
        return sum(vals) / len(vals)


def parse_csv(text: str) -> DelayReport:
    reader = csv.DictReader(io.StringIO(text))
    return DelayReport([
        DelayRow(r["scheme"], int(r["speed_kmh"]), int(r["density"]), float(r["mean_delay_ms"]),
                 int(r["samples"]), int(r["dropped"]))
        for r in reader
    ])


def rows_for(cell: CellResult, schemes=SCHEMES) -> list[DelayRow]:
    out = []
    for scheme in schemes:
        st = cell.stats[scheme]
        out.append(DelayRow(scheme, speed_kmh(cell.speed_mps), cell.density, st.mean, st.samples,
                            st.dropped, st.in_flight))
    return out


def run_cells(config: ScenarioConfig):
    config.validate()
    for speed in config.speeds_mps:
        for density in config.densities:
            yield simulate_cell(config, speed, density)


def run_scenario(config: ScenarioConfig) -> DelayReport:
    """Every configured (speed, density) cell, both schemes; hashchain rows first."""
    cells = list(run_cells(config))
    rows = [r for scheme in SCHEMES for c in cells for r in rows_for(c, (scheme,))]
    return DelayReport(rows)


def run_baseline(config: ScenarioConfig) -> DelayReport:
    return DelayReport([r for c in run_cells(config) for r in rows_for(c, (BASELINE,))])


def run_hashchain(config: ScenarioConfig) -> DelayReport:
    return DelayReport([r for c in run_cells(config) for r in rows_for(c, (HASHCHAIN,))])
