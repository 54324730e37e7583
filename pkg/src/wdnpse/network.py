"""Typed water-network model and incidence-matrix construction.

Ordering convention used everywhere downstream: heads are stacked as
junctions, reservoirs, tanks; flows as pipes, pumps, valves; the state
vector is ``x = [h, q]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import TopologyError

HW_EXPONENT = 1.852
HW_DIAMETER_EXPONENT = 4.871
HW_COEFFICIENT = 4.727  # US units: ft, cfs
GPM_TO_CFS = 0.13368055555555556 / 60.0  # one US gallon is 0.1336806 ft^3


class NodeKind(str, Enum):
    JUNCTION = "junction"
    RESERVOIR = "reservoir"
    TANK = "tank"


class LinkKind(str, Enum):
    PIPE = "pipe"
    PUMP = "pump"
    VALVE = "valve"


class ValveKind(str, Enum):
    FCV = "FCV"
    PRV = "PRV"


class ValveStatus(str, Enum):
    OPEN = "OPEN"
    ACTIVE = "ACTIVE"


@dataclass(frozen=True)
class NodeRef:
    kind: NodeKind
    index: int
    id: str


@dataclass(frozen=True)
class LinkRef:
    kind: LinkKind
    index: int
    id: str


@dataclass(frozen=True)
class Junction:
    id: str
    elevation: float
    base_demand: float = 0.0
    pattern: Optional[str] = None

    def __post_init__(self):
        if not math.isfinite(self.base_demand):
            raise ValueError(f"junction {self.id}: base demand must be finite")


@dataclass(frozen=True)
class Reservoir:
    id: str
    head: float

    @property
    def elevation(self) -> float:
        return self.head


@dataclass(frozen=True)
class Tank:
    """Cylindrical tank; levels are measured from ``elevation``."""

    id: str
    elevation: float
    init_level: float
    min_level: float
    max_level: float
    diameter: float

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError(f"tank {self.id}: diameter must be positive")
        if not self.min_level <= self.init_level <= self.max_level:
            raise ValueError(f"tank {self.id}: need min_level <= init_level <= max_level")

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4.0

    @property
    def initial_head(self) -> float:
        return self.elevation + self.init_level

    @property
    def min_head(self) -> float:
        return self.elevation + self.min_level

    @property
    def max_head(self) -> float:
        return self.elevation + self.max_level


@dataclass(frozen=True)
class Pipe:
    id: str
    start: str
    end: str
    length: float  # ft
    diameter: float  # ft
    roughness: float  # Hazen-Williams C

    def __post_init__(self):
        if self.length <= 0 or self.diameter <= 0 or self.roughness <= 0:
            raise ValueError(f"pipe {self.id}: length, diameter and roughness must be positive")


@dataclass(frozen=True)
class Pump:
    """Pump with head-gain curve ``h0 - r * q**beta`` (q in GPM, head in ft).

    ``curve`` keeps the source points (flow, head) when the pump was read
    from a file so that it can be written back unchanged.
    """

    id: str
    start: str
    end: str
    h0: float
    r: float
    beta: float
    curve_id: Optional[str] = None
    curve: Optional[tuple] = None

    def __post_init__(self):
        if self.h0 <= 0 or self.r <= 0 or self.beta <= 0:
            raise ValueError(f"pump {self.id}: h0, r and beta must be positive")


@dataclass(frozen=True)
class Valve:
    """FCV (setting in GPM) or PRV (setting as downstream head in ft)."""

    id: str
    start: str
    end: str
    kind: ValveKind
    setting: float
    diameter: float = 1.0
    status: ValveStatus = ValveStatus.ACTIVE


@dataclass(frozen=True)
class Network:
    name: str = "network"
    junctions: tuple = ()
    reservoirs: tuple = ()
    tanks: tuple = ()
    pipes: tuple = ()
    pumps: tuple = ()
    valves: tuple = ()
    patterns: dict = field(default_factory=dict)
    duration: float = 0.0  # seconds
    hydraulic_step: float = 3600.0  # seconds
    pattern_step: float = 3600.0  # seconds
    default_pattern: Optional[str] = None
    _node_map: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _link_map: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("junctions", "reservoirs", "tanks", "pipes", "pumps", "valves"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        node_map = {}
        offset = 0
        for kind, group in (
            (NodeKind.JUNCTION, self.junctions),
            (NodeKind.RESERVOIR, self.reservoirs),
            (NodeKind.TANK, self.tanks),
        ):
            for i, node in enumerate(group):
                if node.id in node_map:
                    raise TopologyError(f"duplicate node id {node.id!r}")
                node_map[node.id] = (NodeRef(kind, i, node.id), offset + i)
            offset += len(group)
        link_map = {}
        offset = 0
        for kind, group in (
            (LinkKind.PIPE, self.pipes),
            (LinkKind.PUMP, self.pumps),
            (LinkKind.VALVE, self.valves),
        ):
            for i, link in enumerate(group):
                if link.id in link_map:
                    raise TopologyError(f"duplicate link id {link.id!r}")
                for end in (link.start, link.end):
                    if end not in node_map:
                        raise TopologyError(
                            f"link {link.id!r} references unknown node {end!r}"
                        )
                if link.start == link.end:
                    raise TopologyError(f"link {link.id!r} starts and ends at {link.start!r}")
                link_map[link.id] = (LinkRef(kind, i, link.id), offset + i)
            offset += len(group)
        object.__setattr__(self, "_node_map", node_map)
        object.__setattr__(self, "_link_map", link_map)

    # counts -----------------------------------------------------------
    @property
    def n_j(self) -> int:
        return len(self.junctions)

    @property
    def n_r(self) -> int:
        return len(self.reservoirs)

    @property
    def n_t(self) -> int:
        return len(self.tanks)

    @property
    def n_p(self) -> int:
        return len(self.pipes)

    @property
    def n_m(self) -> int:
        return len(self.pumps)

    @property
    def n_l(self) -> int:
        return len(self.valves)

    @property
    def n_h(self) -> int:
        return self.n_j + self.n_r + self.n_t

    @property
    def n_q(self) -> int:
        return self.n_p + self.n_m + self.n_l

    @property
    def n_x(self) -> int:
        return self.n_h + self.n_q

    # lookups ----------------------------------------------------------
    @property
    def nodes(self) -> tuple:
        return self.junctions + self.reservoirs + self.tanks

    @property
    def links(self) -> tuple:
        return self.pipes + self.pumps + self.valves

    def node_ref(self, node_id: str) -> NodeRef:
        try:
            return self._node_map[node_id][0]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def link_ref(self, link_id: str) -> LinkRef:
        try:
            return self._link_map[link_id][0]
        except KeyError:
            raise KeyError(f"unknown link {link_id!r}") from None

    def head_index(self, node_id: str) -> int:
        """Position of a node's head inside ``h`` (and inside ``x``)."""
        try:
            return self._node_map[node_id][1]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def flow_index(self, link_id: str) -> int:
        """Position of a link's flow inside ``q``; add ``n_h`` for ``x``."""
        try:
            return self._link_map[link_id][1]
        except KeyError:
            raise KeyError(f"unknown link {link_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._node_map

    def has_link(self, link_id: str) -> bool:
        return link_id in self._link_map

    def node(self, node_id: str):
        return self.nodes[self.head_index(node_id)]

    def link(self, link_id: str):
        return self.links[self.flow_index(link_id)]

    def state_index(self, state_id: str) -> int:
        """Resolve ``h:<node>`` / ``q:<link>`` (or a bare id) to a position in ``x``."""
        kind, _, name = state_id.partition(":")
        if name and kind == "h":
            return self.head_index(name)
        if name and kind == "q":
            return self.n_h + self.flow_index(name)
        if self.has_node(state_id):
            return self.head_index(state_id)
        if self.has_link(state_id):
            return self.n_h + self.flow_index(state_id)
        raise KeyError(f"unknown state {state_id!r}")

    def state_labels(self) -> list:
        return [f"h:{n.id}" for n in self.nodes] + [f"q:{l.id}" for l in self.links]

    def node_kind(self, node_id: str) -> NodeKind:
        return self.node_ref(node_id).kind

    def fixed_heads(self) -> dict:
        """Heads of reservoirs and tanks at their initial levels."""
        heads = {r.id: r.head for r in self.reservoirs}
        heads.update({t.id: t.initial_head for t in self.tanks})
        return heads

    def pattern_multiplier(self, pattern_id: Optional[str], step: int) -> float:
        """Multiplier for a 0-based hydraulic step (wraps like EPANET)."""
        pid = pattern_id if pattern_id is not None else self.default_pattern
        if pid is None or pid not in self.patterns:
            return 1.0
        mult = self.patterns[pid]
        if not mult:
            return 1.0
        t = step * self.hydraulic_step
        period = int(t // self.pattern_step) if self.pattern_step > 0 else 0
        return float(mult[period % len(mult)])

    def demands_at(self, step: int = 0) -> np.ndarray:
        return np.array(
            [j.base_demand * self.pattern_multiplier(j.pattern, step) for j in self.junctions],
            dtype=float,
        )

    def replace(self, **changes) -> "Network":
        """Return a copy with some fields replaced."""
        data = {
            "name": self.name,
            "junctions": self.junctions,
            "reservoirs": self.reservoirs,
            "tanks": self.tanks,
            "pipes": self.pipes,
            "pumps": self.pumps,
            "valves": self.valves,
            "patterns": dict(self.patterns),
            "duration": self.duration,
            "hydraulic_step": self.hydraulic_step,
            "pattern_step": self.pattern_step,
            "default_pattern": self.default_pattern,
        }
        data.update(changes)
        return Network(**data)

    def __repr__(self) -> str:
        return (
            f"Network({self.name!r}, n_j={self.n_j}, n_r={self.n_r}, n_t={self.n_t}, "
            f"n_p={self.n_p}, n_m={self.n_m}, n_l={self.n_l})"
        )


@dataclass(frozen=True)
class IncidenceMatrix:
    """Node-by-link incidence matrix with its row and column partitions.

    Entry ``(i, j)`` is +1 when link ``j`` delivers flow into node ``i``
    (its ``end`` node), -1 when it draws flow out of node ``i`` (its
    ``start`` node). With this sign a junction row times ``q`` is
    inflow minus outflow.
    """

    matrix: sp.csr_matrix
    n_j: int
    n_r: int
    n_t: int
    n_p: int
    n_m: int
    n_l: int

    @property
    def shape(self):
        return self.matrix.shape

    # row partitions
    @property
    def junction_rows(self) -> sp.csr_matrix:
        return self.matrix[: self.n_j, :]

    @property
    def reservoir_rows(self) -> sp.csr_matrix:
        return self.matrix[self.n_j : self.n_j + self.n_r, :]

    @property
    def tank_rows(self) -> sp.csr_matrix:
        return self.matrix[self.n_j + self.n_r :, :]

    # column partitions
    @property
    def pipe_columns(self) -> sp.csr_matrix:
        return self.matrix[:, : self.n_p]

    @property
    def pump_columns(self) -> sp.csr_matrix:
        return self.matrix[:, self.n_p : self.n_p + self.n_m]

    @property
    def valve_columns(self) -> sp.csr_matrix:
        return self.matrix[:, self.n_p + self.n_m :]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def build_incidence(net: Network) -> IncidenceMatrix:
    rows, cols, vals = [], [], []
    for j, link in enumerate(net.links):
        try:
            i_from = net.head_index(link.start)
            i_to = net.head_index(link.end)
        except KeyError as exc:
            raise TopologyError(f"link {link.id!r}: {exc.args[0]}") from None
        rows += [i_to, i_from]
        cols += [j, j]
        vals += [1.0, -1.0]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(net.n_h, net.n_q))
    mat.sort_indices()
    return IncidenceMatrix(mat, net.n_j, net.n_r, net.n_t, net.n_p, net.n_m, net.n_l)


@dataclass
class Finding:
    code: str
    message: str
    items: tuple = ()


@dataclass
class TopologyReport:
    findings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def codes(self) -> list:
        return [f.code for f in self.findings]

    def __bool__(self) -> bool:
        return bool(self.findings)

    def __str__(self) -> str:
        if not self.findings:
            return "topology ok"
        return "\n".join(f"{f.code}: {f.message}" for f in self.findings)


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def validate_topology(net: Network, valve_status: Optional[dict] = None) -> TopologyReport:
    """Collect structural findings; an empty report means the network passes.

    ``valve_status`` maps valve id to :class:`ValveStatus`; valves not
    listed use their own ``status`` field. Open valves are checked for
    cycles among themselves.
    """
    report = TopologyReport()
    if net.n_h == 0:
        return report

    degree = np.zeros(net.n_h, dtype=int)
    rows, cols = [], []
    for link in net.links:
        a, b = net.head_index(link.start), net.head_index(link.end)
        degree[a] += 1
        degree[b] += 1
        rows.append(a)
        cols.append(b)

    isolated = [net.nodes[i].id for i in np.flatnonzero(degree == 0)]
    if isolated:
        report.findings.append(
            Finding("isolated-node", f"nodes with no links: {', '.join(isolated)}", tuple(isolated))
        )

    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(net.n_h, net.n_h))
    n_comp, labels = connected_components(adj, directed=False)
    if n_comp > 1:
        groups = []
        for c in range(n_comp):
            groups.append(tuple(net.nodes[i].id for i in np.flatnonzero(labels == c)))
        report.findings.append(
            Finding("disconnected", f"network has {n_comp} separate components", tuple(groups))
        )
    fixed = {net.head_index(n.id) for n in net.reservoirs + net.tanks}
    for c in range(n_comp):
        members = set(np.flatnonzero(labels == c).tolist())
        if not members & fixed and any(degree[i] > 0 for i in members):
            ids = tuple(net.nodes[i].id for i in sorted(members))
            report.findings.append(
                Finding("no-fixed-head", "component without reservoir or tank", ids)
            )

    status = dict(valve_status or {})
    parent = list(range(net.n_h))
    loop_valves = []
    for v in net.valves:
        st = ValveStatus(status.get(v.id, v.status))
        if st is not ValveStatus.OPEN:
            continue
        a, b = _find(parent, net.head_index(v.start)), _find(parent, net.head_index(v.end))
        if a == b:
            loop_valves.append(v.id)
        else:
            parent[a] = b
    if loop_valves:
        report.findings.append(
            Finding(
                "open-valve-loop",
                f"open valves form a loop: {', '.join(loop_valves)}",
                tuple(loop_valves),
            )
        )
    return report
