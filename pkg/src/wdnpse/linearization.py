"""Tangent models of pipes and pumps and assembly of the linear system.

Row layout of one step (``A^s``):

* mass rows, one per junction: inflow - outflow = d
* energy rows, one per pipe/pump: h_from - h_to - k_q q = k_c c + b
* valve rows, one per valve (see :func:`hydraulics.valve_equations`)
* measurement rows: x[state] = y - v

The coupled horizon system stacks the per-step blocks and appends tank
rows ``h(k) + (dt/A) E_TK q(k) - h(k+1) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_bipartite_matching, structural_rank

from .errors import DomainError, RankDeficiencyError, ScenarioError
from .hydraulics import (
    SLOPE_FLOOR,
    HydraulicState,
    pipe_headloss,
    resistance_gpm,
    resolve_valves,
    valve_equations,
)
from .network import GPM_TO_CFS, HW_EXPONENT, LinkKind, Network, Pipe, Pump, build_incidence


@dataclass(frozen=True)
class LinearizedLink:
    """``dh ~= k_q * q + k_c * c + b`` where dh = h_from - h_to.

    For pumps ``k_c`` is 0 and ``k_q`` is the (positive) slope of the
    head drop, so the head gain falls by ``k_q`` per GPM.
    """

    kind: LinkKind
    id: str
    k_q: float
    k_c: float
    b: float
    q0: float
    c0: Optional[float] = None
    floored: bool = False

    def predict(self, q, c=None):
        c = self.c0 if c is None else c
        return self.k_q * q + (self.k_c * c if self.k_c else 0.0) + self.b


def linearize_pipe(pipe: Pipe, q0: float, c0: Optional[float] = None, eps: float = SLOPE_FLOOR) -> LinearizedLink:
    c0 = pipe.roughness if c0 is None else float(c0)
    R = resistance_gpm(pipe, c0)
    dh = pipe_headloss(pipe, q0, c0)
    slope = HW_EXPONENT * R * abs(q0) ** (HW_EXPONENT - 1)
    k_q = max(slope, eps)
    k_c = -HW_EXPONENT * dh / c0
    b = dh - k_q * q0 - k_c * c0
    return LinearizedLink(LinkKind.PIPE, pipe.id, k_q, k_c, b, float(q0), c0, slope < eps)


def linearize_pump(pump: Pump, q0: float, eps: float = SLOPE_FLOOR) -> LinearizedLink:
    if q0 < 0:
        raise DomainError(f"pump {pump.id}: cannot linearize at reverse flow {q0:g}")
    dh = -(pump.h0 - pump.r * q0**pump.beta)
    slope = pump.beta * pump.r * q0 ** (pump.beta - 1) if q0 > 0 else (pump.r if pump.beta == 1 else 0.0)
    k_q = max(slope, eps)
    b = dh - k_q * q0
    return LinearizedLink(LinkKind.PUMP, pump.id, k_q, 0.0, b, float(q0), None, slope < eps)


def linearize_state(net: Network, state: HydraulicState, roughness=None) -> list:
    """Tangent models for every pipe and pump at ``state``."""
    rough = [p.roughness for p in net.pipes] if roughness is None else list(roughness)
    q = state.q
    out = [linearize_pipe(p, q[j], rough[j]) for j, p in enumerate(net.pipes)]
    for j, pump in enumerate(net.pumps):
        qm = q[net.n_p + j]
        if qm < 0:
            raise DomainError(
                f"step {state.step}: pump {pump.id} runs backwards ({qm:.4g} GPM) at the operating point"
            )
        out.append(linearize_pump(pump, qm))
    return out


@dataclass
class EBlock:
    """Hydraulic rows of one step: ``E x = z`` with ``z = const + [d; k_c c; 0; 0]``."""

    E: sp.csr_matrix
    const: np.ndarray
    k_c: np.ndarray  # per pipe
    row_labels: list
    n_j: int
    n_p: int

    def z(self, d, c) -> np.ndarray:
        z = self.const.copy()
        z[: self.n_j] += np.asarray(d, dtype=float)
        z[self.n_j : self.n_j + self.n_p] += self.k_c * np.asarray(c, dtype=float)
        return z


def assemble_E(net: Network, links: Sequence[LinearizedLink], valve_states=None) -> EBlock:
    if len(links) != net.n_p + net.n_m:
        raise ScenarioError(f"expected {net.n_p + net.n_m} linearized links, got {len(links)}")
    for link, ref in zip(links, net.pipes + net.pumps):
        if link.id != ref.id:
            raise ScenarioError(f"linearized link {link.id!r} out of order (expected {ref.id!r})")
    vstates = resolve_valves(net, valve_states)
    nh = net.n_h
    inc = build_incidence(net)
    rows, cols, vals = [], [], []
    EJ = inc.junction_rows.tocoo()
    rows += EJ.row.tolist()
    cols += (EJ.col + nh).tolist()
    vals += EJ.data.tolist()
    const = np.zeros(net.n_j + net.n_q)
    labels = [f"mass:{j.id}" for j in net.junctions]
    r0 = net.n_j
    for j, (link, lin) in enumerate(zip(net.pipes + net.pumps, links)):
        r = r0 + j
        rows += [r, r, r]
        cols += [net.head_index(link.start), net.head_index(link.end), nh + j]
        vals += [1.0, -1.0, -lin.k_q]
        const[r] = lin.b
        labels.append(f"energy:{link.id}")
    r0 += net.n_p + net.n_m
    for j, valve in enumerate(net.valves):
        status, setting = vstates[valve.id]
        vrow = valve_equations(valve, status, setting)
        for label, coef in vrow.coefficients:
            rows.append(r0 + j)
            cols.append(net.state_index(label))
            vals.append(coef)
        const[r0 + j] = vrow.rhs
        labels.append(f"valve:{valve.id}")
    E = sp.csr_matrix((vals, (rows, cols)), shape=(net.n_j + net.n_q, net.n_x))
    k_c = np.array([lin.k_c for lin in links[: net.n_p]], dtype=float)
    return EBlock(E, const, k_c, labels, net.n_j, net.n_p)


@dataclass(frozen=True)
class Measurement:
    """Observation ``x[state] = value - v`` with ``Var(v) = variance``."""

    state: str
    value: float
    variance: float = 0.0
    mean_noise: float = 0.0

    def __post_init__(self):
        if not self.variance >= 0:
            raise ScenarioError(f"measurement {self.state}: variance must be >= 0")

    @property
    def label(self) -> str:
        return f"meas:{self.state}"


# row source kinds used when building K_bb
SRC_DEMAND = "demand"
SRC_ROUGHNESS = "roughness"
SRC_NOISE = "noise"


@dataclass
class LinearSystem:
    A: sp.csr_matrix
    b: np.ndarray
    row_labels: list
    col_labels: list
    row_kinds: list  # mass / energy / valve / meas / tank
    row_sources: list  # (source kind, step, component index or measurement) or None
    row_scale: np.ndarray  # multiplier of the source inside b (k_c for roughness rows)
    steps: list
    n_x: int  # states per step
    blocks: list = field(default_factory=list)  # per-step EBlock
    measurements: list = field(default_factory=list)  # per-step measurement lists

    @property
    def shape(self):
        return self.A.shape

    def row_index(self, label: str) -> int:
        return self.row_labels.index(label)

    def col_index(self, label: str) -> int:
        return self.col_labels.index(label)

    def dump(self) -> str:
        """Coordinate triplet text with label header, for diffing."""
        coo = self.A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        lines = [f"# shape {self.A.shape[0]} {self.A.shape[1]}"]
        lines += [f"# row {i} {lab}" for i, lab in enumerate(self.row_labels)]
        lines += [f"# col {i} {lab}" for i, lab in enumerate(self.col_labels)]
        lines += [f"{coo.row[i]} {coo.col[i]} {coo.data[i]:.17g}" for i in order]
        lines += [f"b {i} {v:.17g}" for i, v in enumerate(self.b)]
        return "\n".join(lines) + "\n"


def _step_block(net, state, roughness, meas, tag):
    rough = np.array([p.roughness for p in net.pipes] if roughness is None else roughness, dtype=float)
    links = linearize_state(net, state, rough)
    blk = assemble_E(net, links, state.valve_states or None)
    d = state.demands if state.demands is not None else net.demands_at(state.step - 1)
    z = blk.z(d, rough)
    C_rows, C_cols, y = [], [], []
    for i, m in enumerate(meas):
        try:
            C_cols.append(net.state_index(m.state))
        except KeyError:
            raise ScenarioError(f"measured state {m.state!r} is not in the network") from None
        C_rows.append(i)
        y.append(m.value - m.mean_noise)
    C = sp.csr_matrix((np.ones(len(meas)), (C_rows, C_cols)), shape=(len(meas), net.n_x))
    A = sp.vstack([blk.E, C], format="csr")
    b = np.concatenate([z, np.array(y, dtype=float)])
    rlabels = [f"{lab}{tag}" for lab in blk.row_labels + [m.label for m in meas]]
    kinds = [lab.split(":", 1)[0] for lab in blk.row_labels] + ["meas"] * len(meas)
    k = state.step
    sources = (
        [(SRC_DEMAND, k, j) for j in range(net.n_j)]
        + [(SRC_ROUGHNESS, k, j) for j in range(net.n_p)]
        + [None] * (net.n_m + net.n_l)
        + [(SRC_NOISE, k, m) for m in meas]
    )
    scale = np.concatenate([np.ones(net.n_j), blk.k_c, np.zeros(net.n_m + net.n_l), np.ones(len(meas))])
    return A, b, rlabels, kinds, sources, scale, blk


def default_measurements(net: Network, state: HydraulicState, tank_variance=0.0) -> list:
    """Noise-free reservoir rows plus tank rows at the state's tank heads."""
    if np.isscalar(tank_variance):
        tank_variance = {t.id: float(tank_variance) for t in net.tanks}
    out = [Measurement(f"h:{r.id}", state.head(r.id), 0.0) for r in net.reservoirs]
    out += [Measurement(f"h:{t.id}", state.head(t.id), tank_variance.get(t.id, 0.0)) for t in net.tanks]
    return out


def assemble_system(
    net: Network,
    states: Sequence[HydraulicState] | HydraulicState,
    measurements: Optional[Sequence] = None,
    *,
    roughness=None,
    coupled: bool = False,
    dt: Optional[float] = None,
    tank_measured: str = "all",
) -> LinearSystem:
    """Build the linear system around one or more operating points.

    ``measurements`` is a list of :class:`Measurement` (single step) or a
    list of such lists, one per step. Without ``coupled`` only a single
    state is accepted. ``tank_measured`` chooses whether tank head
    measurement rows appear at every step (``"all"``) or only at the first
    step of a coupled horizon (``"first"``).
    """
    if isinstance(states, HydraulicState):
        states = [states]
    states = list(states)
    T = len(states)
    if T == 0:
        raise ScenarioError("need at least one operating point")
    if T > 1 and not coupled:
        raise ScenarioError("several operating points given; pass coupled=True or solve step by step")
    if measurements is None:
        meas_steps = [default_measurements(net, s) for s in states]
    elif measurements and isinstance(measurements[0], Measurement):
        meas_steps = [list(measurements)] * T if T == 1 else None
        if meas_steps is None:
            raise ScenarioError("coupled systems need one measurement list per step")
    elif len(measurements) == 0:
        meas_steps = [[] for _ in states]
    else:
        meas_steps = [list(m) for m in measurements]
    if len(meas_steps) != T:
        raise ScenarioError(f"got {len(meas_steps)} measurement lists for {T} steps")
    if tank_measured not in ("all", "first"):
        raise ValueError("tank_measured must be 'all' or 'first'")
    if coupled and tank_measured == "first":
        tank_states = {f"h:{t.id}" for t in net.tanks}
        meas_steps = [meas_steps[0]] + [[m for m in ms if m.state not in tank_states] for ms in meas_steps[1:]]

    rough_steps = roughness if (roughness is not None and np.ndim(roughness) == 2) else [roughness] * T
    blocks_A, b_parts, rlabels, kinds, sources, scales, blks = [], [], [], [], [], [], []
    for k, (st, ms) in enumerate(zip(states, meas_steps)):
        tag = f"@{st.step}" if coupled and T > 1 else ""
        A, b, rl, kd, src, sc, blk = _step_block(net, st, rough_steps[k], ms, tag)
        blocks_A.append(A)
        b_parts.append(b)
        rlabels += rl
        kinds += kd
        sources += src
        scales.append(sc)
        blks.append(blk)
    A = sp.block_diag(blocks_A, format="csr")
    b = np.concatenate(b_parts)
    labels = net.state_labels()
    if coupled and T > 1:
        col_labels = [f"{lab}@{st.step}" for st in states for lab in labels]
        dt = net.hydraulic_step if dt is None else dt
        E_tk = build_incidence(net).tank_rows
        rows, cols, vals = [], [], []
        n = net.n_x
        for k in range(T - 1):
            for t, tank in enumerate(net.tanks):
                r = k * net.n_t + t
                ih = net.head_index(tank.id)
                rows += [r, r]
                cols += [k * n + ih, (k + 1) * n + ih]
                vals += [1.0, -1.0]
                coef = dt / tank.area * GPM_TO_CFS
                row = E_tk.getrow(t).tocoo()
                rows += [r] * row.nnz
                cols += (k * n + net.n_h + row.col).tolist()
                vals += (coef * row.data).tolist()
                rlabels.append(f"tank:{tank.id}@{states[k].step}")
                kinds.append("tank")
                sources.append(None)
        n_tank = (T - 1) * net.n_t
        A_tk = sp.csr_matrix((vals, (rows, cols)), shape=(n_tank, T * n))
        A = sp.vstack([A, A_tk], format="csr")
        b = np.concatenate([b, np.zeros(n_tank)])
        scales.append(np.zeros(n_tank))
    else:
        col_labels = labels
    return LinearSystem(
        A=A,
        b=b,
        row_labels=rlabels,
        col_labels=col_labels,
        row_kinds=kinds,
        row_sources=sources,
        row_scale=np.concatenate(scales),
        steps=[st.step for st in states],
        n_x=net.n_x,
        blocks=blks,
        measurements=meas_steps,
    )


@dataclass(frozen=True)
class RankReport:
    full_rank: bool
    numeric_rank: int
    structural_rank: int
    n_rows: int
    n_cols: int
    unmatched_rows: tuple = ()
    unmatched_columns: tuple = ()

    @property
    def row_deficient(self) -> bool:
        """True when a square solve would fail (rows are linearly dependent)."""
        return self.numeric_rank < self.n_rows

    def raise_if_deficient(self):
        if not self.full_rank:
            raise RankDeficiencyError(
                f"system is {self.n_rows}x{self.n_cols} with numeric rank {self.numeric_rank} "
                f"(structural {self.structural_rank}); unmatched columns: {list(self.unmatched_columns)}",
                self.unmatched_rows,
                self.unmatched_columns,
            )


def rank_check(system, rtol: float = 1e-10) -> RankReport:
    """Structural rank via bipartite matching, numeric rank via SVD."""
    if isinstance(system, LinearSystem):
        A, rlab, clab = system.A, system.row_labels, system.col_labels
    else:
        A = sp.csr_matrix(system)
        rlab = [str(i) for i in range(A.shape[0])]
        clab = [str(j) for j in range(A.shape[1])]
    m, n = A.shape
    pattern = sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    pattern.eliminate_zeros()
    srank = int(structural_rank(pattern)) if min(m, n) else 0
    match_col = maximum_bipartite_matching(pattern.tocsr(), perm_type="row") if min(m, n) else np.full(n, -1)
    unmatched_cols = tuple(clab[j] for j in range(n) if match_col[j] < 0)
    matched_rows = set(int(i) for i in match_col if i >= 0)
    unmatched_rows = tuple(rlab[i] for i in range(m) if i not in matched_rows)
    if min(m, n) == 0:
        nrank = 0
    else:
        s = np.linalg.svd(A.toarray(), compute_uv=False)
        nrank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return RankReport(nrank == n and srank == n, nrank, srank, m, n, unmatched_rows, unmatched_cols)
