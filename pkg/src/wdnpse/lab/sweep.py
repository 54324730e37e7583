"""Impact of each uncertainty source on the state deviations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..pse import run_algorithm1
from ..scenario import SourceSpec

# grid of one group per source, each varying one source while the other
# two stay at the listed fixed margins of error (percent)
DEFAULT_GRID = {
    "noise": {"values": [0.0, 2.5, 5.0], "fixed": {"demand": 15.0, "roughness": 15.0}},
    "demand": {"values": [0.0, 15.0, 30.0], "fixed": {"roughness": 15.0, "noise": 1.0}},
    "roughness": {"values": [0.0, 15.0, 30.0], "fixed": {"demand": 15.0, "noise": 2.5}},
}

SOURCES = ("demand", "roughness", "noise")


@dataclass
class ImpactRow:
    source: str
    me_percent: float
    state: str
    sigma: float


@dataclass
class ImpactTable:
    rows: list = field(default_factory=list)

    def sigmas(self, source: str, me: float) -> dict:
        return {r.state: r.sigma for r in self.rows if r.source == source and r.me_percent == me}

    def mean_sigma(self, source: str, me: float, kinds=("h", "q")) -> float:
        vals = [s for k, s in self.sigmas(source, me).items() if k.split(":", 1)[0] in kinds]
        return float(np.mean(vals)) if vals else 0.0

    def to_csv(self) -> str:
        lines = ["source,me_percent,state,sigma"]
        lines += [f"{r.source},{r.me_percent:g},{r.state},{r.sigma:.10g}" for r in self.rows]
        return "\n".join(lines) + "\n"


def _with_margins(scenario, margins: dict):
    def spec(old: SourceSpec, me):
        return SourceSpec(me_percent=float(me), distribution=old.distribution)

    noise = spec(scenario.noise_default, margins["noise"])
    return scenario.replace(
        demand_default=spec(scenario.demand_default, margins["demand"]),
        demand_per_junction={},
        roughness_default=spec(scenario.roughness_default, margins["roughness"]),
        roughness_per_pipe={},
        noise_default=noise,
        measurement_specs=[replace(m, noise=noise) for m in scenario.measurement_specs],
    )


def source_impact_sweep(net, scenario, grid=None, *, step: int = 1, isolated: bool = False) -> ImpactTable:
    """Per-state deviation for each grid point.

    ``grid`` maps a source name to ``{"values": [...], "fixed": {...}}``.
    With ``isolated=True`` the other sources are switched off instead of
    held at the fixed margins. Deviations are taken at ``step``.
    """
    grid = DEFAULT_GRID if grid is None else grid
    table = ImpactTable()
    for source, cfg in grid.items():
        if source not in SOURCES:
            raise ValueError(f"unknown source {source!r}")
        for me in cfg["values"]:
            margins = {s: 0.0 for s in SOURCES} if isolated else dict(cfg.get("fixed", {}))
            for s in SOURCES:
                margins.setdefault(s, 0.0)
            margins[source] = float(me)
            sc = _with_margins(scenario, margins).replace(horizon=max(step, 1))
            res = run_algorithm1(net, sc, step)[step - 1]
            for lab, sig in zip(res.labels, res.sigma):
                table.rows.append(ImpactRow(source, float(me), lab, float(sig)))
    return table
