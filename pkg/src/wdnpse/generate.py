"""Synthetic grid networks for scaling and rank checks."""

from __future__ import annotations

import numpy as np

from .inp import SHUTOFF_FACTOR
from .network import Junction, Network, Pipe, Pump, Reservoir, Tank


def grid_network(rows: int = 13, cols: int = 13, *, demand: float = 10.0, seed: int = 0) -> Network:
    """Looped ``rows x cols`` grid fed by a pumped reservoir, with a tank.

    The reservoir pumps into the corner junction ``J0_0``; the tank hangs
    off the opposite corner. Elevations vary smoothly plus a small seeded
    jitter, so the network is deterministic for a given ``seed``.
    """
    if rows < 2 or cols < 2:
        raise ValueError("grid needs at least 2 x 2 junctions")
    rng = np.random.default_rng(seed)
    jid = lambda i, j: f"J{i}_{j}"
    junctions = []
    for i in range(rows):
        for j in range(cols):
            elev = 650.0 + 20.0 * (i + j) / (rows + cols) + float(rng.uniform(-2, 2))
            junctions.append(Junction(jid(i, j), elev, demand))
    total = demand * rows * cols
    pipes = []
    for i in range(rows):
        for j in range(cols):
            near = i + j < 4
            diam = 16.0 if near else 10.0 if i + j < (rows + cols) // 2 else 8.0
            if j + 1 < cols:
                pipes.append(Pipe(f"P{i}_{j}h", jid(i, j), jid(i, j + 1), 1000.0, diam / 12.0, 110.0))
            if i + 1 < rows:
                pipes.append(Pipe(f"P{i}_{j}v", jid(i, j), jid(i + 1, j), 1000.0, diam / 12.0, 110.0))
    pipes.append(Pipe("PTK", jid(rows - 1, cols - 1), "T1", 500.0, 8.0 / 12.0, 110.0))
    h_design = 200.0
    q_design = 1.05 * total
    h0 = SHUTOFF_FACTOR * h_design
    pump = Pump("PU1", "R1", jid(0, 0), h0, (h0 - h_design) / q_design**2, 2.0,
                curve_id="C1", curve=((q_design, h_design),))
    return Network(
        name=f"grid {rows}x{cols}",
        junctions=tuple(junctions),
        reservoirs=(Reservoir("R1", 600.0),),
        tanks=(Tank("T1", 760.0, 15.0, 0.0, 40.0, 80.0),),
        pipes=tuple(pipes),
        pumps=(pump,),
    )
