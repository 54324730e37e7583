"""Scenario configuration: uncertainty of demands, roughness and sensors.

A scenario is a JSON document::

    {
      "confidence": 0.99,
      "horizon": 1,
      "timestep_hours": 1,
      "demand":    {"default": {"me_percent": 20, "distribution": "normal"},
                    "per_junction": {"J2": {"variance": 60.28}},
                    "means": {"J2": 100}},
      "roughness": {"default": {"me_percent": 20}, "per_pipe": {}},
      "noise":     {"default": {"me_percent": 1}},
      "measurements": [{"id": "J2", "kind": "head", "value": 910, "variance": 0.0241}],
      "weights":   {"mass": 10, "energy": 1, "valve": 1, "measurement": 1,
                    "rows": {"mass:J2": 10}},
      "valve_schedule": [{"step": 1, "valve_id": "FCV34", "status": "ACTIVE", "setting": 500}],
      "coupled_tank_rows": "all"
    }

Every uncertainty entry holds exactly one of ``variance``, ``sigma``,
``me_percent`` or ``half_width`` (a confidence-interval half width in
the unit of the quantity) plus an optional ``distribution``.
Margins of error are relative to the mean of the quantity: the demand
mean, the nominal roughness, or the gauge reading of a sensor (water
level above the node elevation for heads, ``|q|`` for flows).
Reservoir heads are always noise-free measurements and every tank head
is measured with the ``noise`` settings unless listed explicitly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ScenarioError
from .hydraulics import DemandSchedule, HydraulicState, ValveSchedule
from .linearization import Measurement
from .network import Network

FAMILIES = ("normal", "uniform", "laplace")
CONFIDENCE_Z = {0.80: 1.282, 0.95: 1.960, 0.99: 2.576}


def confidence_z(confidence: float) -> float:
    for lv, z in CONFIDENCE_Z.items():
        if abs(confidence - lv) < 1e-9:
            return z
    raise ScenarioError(f"unsupported confidence level {confidence}")


def me_to_sigma(me_percent: float, mean: float, confidence: float = 0.99) -> float:
    """Standard deviation for a margin of error ``me_percent`` around ``mean``."""
    if me_percent < 0:
        raise ScenarioError("margin of error must be non-negative")
    return me_percent / 100.0 * abs(mean) / confidence_z(confidence)


def sigma_to_me(sigma: float, mean: float, confidence: float = 0.99) -> float:
    if mean == 0:
        raise ScenarioError("margin of error is undefined for a zero mean")
    return confidence_z(confidence) * sigma / abs(mean) * 100.0


@dataclass(frozen=True)
class SourceSpec:
    """Uncertainty of one quantity, resolved against its mean on demand."""

    variance: Optional[float] = None
    sigma: Optional[float] = None
    me_percent: Optional[float] = None
    half_width: Optional[float] = None
    distribution: str = "normal"

    def __post_init__(self):
        given = [k for k in ("variance", "sigma", "me_percent", "half_width") if getattr(self, k) is not None]
        if len(given) > 1:
            raise ScenarioError(f"give only one of variance/sigma/me_percent/half_width, got {given}")
        for k in given:
            v = getattr(self, k)
            if not np.isfinite(v) or v < 0:
                raise ScenarioError(f"{k} must be finite and non-negative, got {v}")
        if self.distribution not in FAMILIES:
            raise ScenarioError(f"unknown distribution {self.distribution!r}; expected one of {FAMILIES}")

    @classmethod
    def from_obj(cls, obj, where: str) -> "SourceSpec":
        if obj is None:
            return cls(variance=0.0)
        if isinstance(obj, (int, float)):
            return cls(variance=float(obj))
        if not isinstance(obj, dict):
            raise ScenarioError(f"{where}: expected an object, got {type(obj).__name__}")
        unknown = set(obj) - {"variance", "sigma", "me_percent", "half_width", "distribution"}
        if unknown:
            raise ScenarioError(f"{where}: unknown keys {sorted(unknown)}")
        try:
            vals = {k: float(obj[k]) for k in ("variance", "sigma", "me_percent", "half_width") if k in obj}
        except (TypeError, ValueError):
            raise ScenarioError(f"{where}: values must be numbers") from None
        dist = str(obj.get("distribution", "normal")).lower()
        try:
            return cls(distribution=dist, **vals)
        except ScenarioError as exc:
            raise ScenarioError(f"{where}: {exc}") from None

    def resolve(self, mean: float, confidence: float) -> float:
        """Variance for a quantity with the given mean."""
        if self.variance is not None:
            return self.variance
        if self.sigma is not None:
            return self.sigma**2
        if self.half_width is not None:
            return (self.half_width / confidence_z(confidence)) ** 2
        if self.me_percent is not None:
            return me_to_sigma(self.me_percent, mean, confidence) ** 2
        return 0.0

    def to_obj(self) -> dict:
        out = {k: getattr(self, k) for k in ("variance", "sigma", "me_percent", "half_width")}
        out = {k: v for k, v in out.items() if v is not None}
        out["distribution"] = self.distribution
        return out


@dataclass(frozen=True)
class MeasurementSpec:
    id: str
    kind: str = "head"
    value: Optional[float] = None
    noise: SourceSpec = field(default_factory=lambda: SourceSpec(variance=0.0))

    @property
    def state(self) -> str:
        return ("h:" if self.kind == "head" else "q:") + self.id


@dataclass
class Scenario:
    confidence: float = 0.99
    horizon: int = 1
    timestep_hours: Optional[float] = None
    demand_default: SourceSpec = field(default_factory=SourceSpec)
    demand_per_junction: dict = field(default_factory=dict)
    demand_means: dict = field(default_factory=dict)
    roughness_default: SourceSpec = field(default_factory=SourceSpec)
    roughness_per_pipe: dict = field(default_factory=dict)
    noise_default: SourceSpec = field(default_factory=SourceSpec)
    measurement_specs: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    row_weights: dict = field(default_factory=dict)
    valve_schedule: ValveSchedule = field(default_factory=ValveSchedule)
    tank_measured: str = "all"
    source: dict = field(default_factory=dict, repr=False)

    # --- horizon -------------------------------------------------------
    @property
    def dt(self) -> Optional[float]:
        return None if self.timestep_hours is None else self.timestep_hours * 3600.0

    def demand_schedule(self, net: Network, T: Optional[int] = None) -> DemandSchedule:
        T = self.horizon if T is None else T
        base = DemandSchedule.from_network(net, T).values.copy()
        for jid, val in self.demand_means.items():
            i = net.head_index(jid)
            vals = np.atleast_1d(np.asarray(val, dtype=float))
            if vals.size == 1:
                base[i, :] = vals[0]
            else:
                if vals.size < T:
                    raise ScenarioError(f"demand means for {jid} cover {vals.size} steps, need {T}")
                base[i, :] = vals[:T]
        return DemandSchedule(base)

    # --- uncertainty ---------------------------------------------------
    def demand_spec(self, jid: str) -> SourceSpec:
        return self.demand_per_junction.get(jid, self.demand_default)

    def roughness_spec(self, pid: str) -> SourceSpec:
        return self.roughness_per_pipe.get(pid, self.roughness_default)

    def uncertainty(self, net: Network, state: HydraulicState):
        from .pse import UncertaintySpec

        d = state.demands if state.demands is not None else net.demands_at(state.step - 1)
        dv = np.array(
            [self.demand_spec(j.id).resolve(d[i], self.confidence) for i, j in enumerate(net.junctions)]
        )
        rv = np.array([self.roughness_spec(p.id).resolve(p.roughness, self.confidence) for p in net.pipes])
        fam = {
            "demand": self.demand_default.distribution,
            "roughness": self.roughness_default.distribution,
            "noise": self.noise_default.distribution,
        }
        return UncertaintySpec(dv, rv, fam)

    def _spec_for(self, state_label: str) -> Optional[MeasurementSpec]:
        for m in self.measurement_specs:
            if m.state == state_label:
                return m
        return None

    def gauge_reading(self, net: Network, state_label: str, value: float) -> float:
        kind, _, name = state_label.partition(":")
        if kind == "h":
            return value - net.node(name).elevation
        return abs(value)

    def measurements(self, net: Network, state: HydraulicState) -> list:
        """Measurement rows for one step: reservoirs, tanks, then extras."""
        out = [Measurement(f"h:{r.id}", state.head(r.id), 0.0) for r in net.reservoirs]
        for t in net.tanks:
            label = f"h:{t.id}"
            spec = self._spec_for(label)
            noise = spec.noise if spec is not None else self.noise_default
            val = state.head(t.id)
            var = noise.resolve(self.gauge_reading(net, label, val), self.confidence)
            out.append(Measurement(label, val, var))
        fixed = {f"h:{n.id}" for n in net.reservoirs + net.tanks}
        for m in self.measurement_specs:
            if m.state in fixed:
                continue
            val = state[m.state] if m.value is None else m.value
            var = m.noise.resolve(self.gauge_reading(net, m.state, val), self.confidence)
            out.append(Measurement(m.state, val, var))
        return out

    def extra_measurements(self, net: Network) -> list:
        fixed = {f"h:{n.id}" for n in net.reservoirs + net.tanks}
        return [m for m in self.measurement_specs if m.state not in fixed]

    def noise_spec(self, state_label: str) -> SourceSpec:
        spec = self._spec_for(state_label)
        return spec.noise if spec is not None else self.noise_default

    # --- weights -------------------------------------------------------
    def has_weights(self) -> bool:
        return bool(self.row_weights) or any(v != 1.0 for v in self.weights.values())

    def weight_vector(self, system) -> np.ndarray:
        kind_key = {"mass": "mass", "energy": "energy", "valve": "valve", "meas": "measurement", "tank": "tank"}
        w = np.empty(len(system.row_labels))
        for i, (lab, kind) in enumerate(zip(system.row_labels, system.row_kinds)):
            base = lab.rsplit("@", 1)[0]
            if base in self.row_weights:
                w[i] = self.row_weights[base]
            else:
                w[i] = self.weights.get(kind_key[kind], 1.0)
        return w

    # --- misc ----------------------------------------------------------
    def validate(self, net: Network) -> None:
        for jid in list(self.demand_per_junction) + list(self.demand_means):
            if not net.has_node(jid) or net.node_kind(jid).value != "junction":
                raise ScenarioError(f"demand entry for unknown junction {jid!r}")
        for pid in self.roughness_per_pipe:
            if not net.has_link(pid) or net.link_ref(pid).kind.value != "pipe":
                raise ScenarioError(f"roughness entry for unknown pipe {pid!r}")
        for m in self.measurement_specs:
            try:
                net.state_index(m.state)
            except KeyError:
                raise ScenarioError(f"measured id {m.id!r} ({m.kind}) is not in the network") from None
        for _, vid, _, _ in self.valve_schedule.entries:
            if not net.has_link(vid) or net.link_ref(vid).kind.value != "valve":
                raise ScenarioError(f"valve schedule names unknown valve {vid!r}")

    def is_sufficient(self, net: Network) -> bool:
        return not self.extra_measurements(net)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.source, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace

        return replace(self, **changes)


_TOP_KEYS = {
    "confidence", "horizon", "timestep_hours", "demand", "roughness", "noise",
    "measurements", "weights", "valve_schedule", "coupled_tank_rows", "name", "description",
}


def scenario_from_dict(obj: dict, net: Optional[Network] = None) -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")
    conf = float(obj.get("confidence", 0.99))
    confidence_z(conf)
    horizon = int(obj.get("horizon", 1))
    if horizon < 1:
        raise ScenarioError("horizon must be >= 1")
    ts = obj.get("timestep_hours")
    if ts is not None and not float(ts) > 0:
        raise ScenarioError("timestep_hours must be positive")

    dem = obj.get("demand", {}) or {}
    rough = obj.get("roughness", {}) or {}
    noise = obj.get("noise", {}) or {}
    meas = []
    for i, m in enumerate(obj.get("measurements", []) or []):
        if not isinstance(m, dict) or "id" not in m:
            raise ScenarioError(f"measurements[{i}]: need an object with an 'id'")
        kind = str(m.get("kind", "head")).lower()
        if kind not in ("head", "flow"):
            raise ScenarioError(f"measurements[{i}]: kind must be 'head' or 'flow'")
        nz = {k: m[k] for k in ("variance", "sigma", "me_percent", "half_width", "distribution") if k in m}
        meas.append(
            MeasurementSpec(
                str(m["id"]),
                kind,
                None if m.get("value") is None else float(m["value"]),
                SourceSpec.from_obj(nz, f"measurements[{i}]") if nz else SourceSpec.from_obj(
                    noise.get("default"), f"measurements[{i}]"
                ),
            )
        )
    weights = dict(obj.get("weights", {}) or {})
    row_w = weights.pop("rows", {}) or {}
    allw = list(weights.values()) + list(row_w.values())
    for v in allw:
        if not isinstance(v, (int, float)) or not v > 0:
            raise ScenarioError(f"weights must be positive numbers, got {v!r}")
    bad = set(weights) - {"mass", "energy", "valve", "measurement", "tank"}
    if bad:
        raise ScenarioError(f"unknown weight classes {sorted(bad)}")
    tank_rows = str(obj.get("coupled_tank_rows", "all"))
    if tank_rows not in ("all", "first"):
        raise ScenarioError("coupled_tank_rows must be 'all' or 'first'")
    sc = Scenario(
        confidence=conf,
        horizon=horizon,
        timestep_hours=None if ts is None else float(ts),
        demand_default=SourceSpec.from_obj(dem.get("default"), "demand.default"),
        demand_per_junction={
            k: SourceSpec.from_obj(v, f"demand.per_junction.{k}") for k, v in (dem.get("per_junction") or {}).items()
        },
        demand_means=dict(dem.get("means") or {}),
        roughness_default=SourceSpec.from_obj(rough.get("default"), "roughness.default"),
        roughness_per_pipe={
            k: SourceSpec.from_obj(v, f"roughness.per_pipe.{k}") for k, v in (rough.get("per_pipe") or {}).items()
        },
        noise_default=SourceSpec.from_obj(noise.get("default"), "noise.default"),
        measurement_specs=meas,
        weights={k: float(v) for k, v in weights.items()},
        row_weights={k: float(v) for k, v in row_w.items()},
        valve_schedule=ValveSchedule.from_records(obj.get("valve_schedule", []) or []),
        tank_measured=tank_rows,
        source=obj,
    )
    if net is not None:
        sc.validate(net)
    return sc


def load_scenario(text: str, net: Optional[Network] = None) -> Scenario:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario is not valid JSON: line {exc.lineno} col {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(obj, net)


def scenario_to_dict(sc: Scenario) -> dict:
    out = {
        "confidence": sc.confidence,
        "horizon": sc.horizon,
        "demand": {
            "default": sc.demand_default.to_obj(),
            "per_junction": {k: v.to_obj() for k, v in sc.demand_per_junction.items()},
            "means": sc.demand_means,
        },
        "roughness": {
            "default": sc.roughness_default.to_obj(),
            "per_pipe": {k: v.to_obj() for k, v in sc.roughness_per_pipe.items()},
        },
        "noise": {"default": sc.noise_default.to_obj()},
        "measurements": [
            dict({"id": m.id, "kind": m.kind}, **({"value": m.value} if m.value is not None else {}), **m.noise.to_obj())
            for m in sc.measurement_specs
        ],
        "weights": dict(sc.weights, rows=sc.row_weights),
        "valve_schedule": [
            dict({"step": k, "valve_id": v, "status": s.value}, **({"setting": st} if st is not None else {}))
            for k, v, s, st in sc.valve_schedule.entries
        ],
        "coupled_tank_rows": sc.tank_measured,
    }
    if sc.timestep_hours is not None:
        out["timestep_hours"] = sc.timestep_hours
    return out
