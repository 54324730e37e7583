"""Nonlinear component models and the deterministic operating-point solver.

Flows are in GPM and heads in ft throughout. Hazen-Williams resistance
is defined for flow in cfs, so pipe functions convert internally.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, DomainError, RankDeficiencyError, ScenarioError
from .network import (
    GPM_TO_CFS,
    HW_COEFFICIENT,
    HW_DIAMETER_EXPONENT,
    HW_EXPONENT,
    Network,
    Pipe,
    Pump,
    Tank,
    Valve,
    ValveKind,
    ValveStatus,
    build_incidence,
)

log = logging.getLogger(__name__)

SLOPE_FLOOR = 1e-8


class TankLimitWarning(UserWarning):
    """A tank head left its [min, max] band and was clamped."""


# component models -------------------------------------------------------

def pipe_resistance(pipe: Pipe, roughness: Optional[float] = None) -> float:
    """Hazen-Williams resistance R for flow in cfs and head in ft."""
    c = pipe.roughness if roughness is None else roughness
    return HW_COEFFICIENT * pipe.length * c ** (-HW_EXPONENT) * pipe.diameter ** (-HW_DIAMETER_EXPONENT)


def resistance_gpm(pipe: Pipe, roughness: Optional[float] = None) -> float:
    """Resistance rescaled so that head loss = R_gpm * q|q|^0.852 with q in GPM."""
    return pipe_resistance(pipe, roughness) * GPM_TO_CFS**HW_EXPONENT


def hw_headloss(R, q, alpha: float = HW_EXPONENT):
    """R q |q|^(alpha-1); works on scalars and arrays."""
    q = np.asarray(q, dtype=float)
    out = R * q * np.abs(q) ** (alpha - 1.0)
    return float(out) if out.ndim == 0 else out


def pipe_headloss(pipe: Pipe, q, roughness: Optional[float] = None):
    """Head loss h_from - h_to [ft] for flow q [GPM]."""
    return hw_headloss(resistance_gpm(pipe, roughness), q)


def pump_headgain(pump: Pump, q):
    """h_from - h_to across the pump, i.e. the negated head gain h0 - r q^beta."""
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise DomainError(f"pump {pump.id}: reverse flow {q.min():g} GPM is outside the curve")
    out = -(pump.h0 - pump.r * q**pump.beta)
    return float(out) if out.ndim == 0 else out


def _pump_dh_ext(pump: Pump, q):
    """Odd extension of the pump curve used while iterating (q may dip below 0)."""
    q = np.asarray(q, dtype=float)
    return -(pump.h0 - pump.r * np.sign(q) * np.abs(q) ** pump.beta)


@dataclass(frozen=True)
class ValveRow:
    """One linear equation ``sum(coef * x[state]) = rhs`` plus optional bound."""

    coefficients: tuple  # ((state label, coefficient), ...)
    rhs: float
    bound: Optional[tuple] = None  # (state label, ">=", value)


def valve_equations(valve: Valve, status: ValveStatus, setting: Optional[float] = None) -> ValveRow:
    s = valve.setting if setting is None else setting
    status = ValveStatus(status)
    bound = (f"q:{valve.id}", ">=", 0.0) if valve.kind is ValveKind.PRV else None
    if status is ValveStatus.OPEN:
        coef = ((f"h:{valve.start}", 1.0), (f"h:{valve.end}", -1.0))
        return ValveRow(coef, 0.0, bound)
    if valve.kind is ValveKind.FCV:
        return ValveRow(((f"q:{valve.id}", 1.0),), float(s), bound)
    return ValveRow(((f"h:{valve.end}", 1.0),), float(s), bound)


def mass_balance_residual(net: Network, x, d) -> np.ndarray:
    """Inflow minus outflow minus demand at every junction."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if x.shape != (net.n_x,) or d.shape != (net.n_j,):
        raise ValueError("state or demand vector has the wrong length")
    E = build_incidence(net).junction_rows
    return E @ x[net.n_h :] - d


def tank_update(tank: Tank, h_k: float, inflow, outflow, dt: float, units: str = "gpm") -> float:
    """Advance a tank head by one step of ``dt`` seconds.

    ``inflow``/``outflow`` may be scalars or sequences (summed). With
    ``units="gpm"`` they are converted to cfs before dividing by area.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    net_q = float(np.sum(inflow)) - float(np.sum(outflow))
    if units == "gpm":
        net_q *= GPM_TO_CFS
    elif units != "cfs":
        raise ValueError(f"unknown flow units {units!r}")
    h_next = h_k + dt / tank.area * net_q
    if h_next < tank.min_head or h_next > tank.max_head:
        clamped = min(max(h_next, tank.min_head), tank.max_head)
        warnings.warn(
            f"tank {tank.id}: head {h_next:.3f} ft outside [{tank.min_head}, {tank.max_head}], clamped",
            TankLimitWarning,
            stacklevel=2,
        )
        h_next = clamped
    return h_next


# state ------------------------------------------------------------------

@dataclass
class HydraulicState:
    """Operating point ``x = [h, q]`` for one step."""

    network: Network = field(repr=False)
    x: np.ndarray
    step: int = 1
    iterations: int = 0
    residual: float = 0.0
    demands: Optional[np.ndarray] = None
    valve_states: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.shape != (self.network.n_x,):
            raise ValueError(f"state length {self.x.shape} != n_x={self.network.n_x}")

    @property
    def h(self) -> np.ndarray:
        return self.x[: self.network.n_h]

    @property
    def q(self) -> np.ndarray:
        return self.x[self.network.n_h :]

    def head(self, node_id: str) -> float:
        return float(self.x[self.network.head_index(node_id)])

    def flow(self, link_id: str) -> float:
        return float(self.x[self.network.n_h + self.network.flow_index(link_id)])

    def __getitem__(self, state_id: str) -> float:
        return float(self.x[self.network.state_index(state_id)])

    def as_dict(self) -> dict:
        return dict(zip(self.network.state_labels(), self.x.tolist()))


@dataclass(frozen=True)
class DemandSchedule:
    """Demand means, one row per junction and one column per step."""

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(v)):
            raise ValueError("demand schedule contains non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_network(cls, net: Network, T: int) -> "DemandSchedule":
        return cls(np.column_stack([net.demands_at(k) for k in range(T)]) if T else np.zeros((net.n_j, 0)))

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def at(self, step: int) -> np.ndarray:
        """Demands for 1-based step ``step``."""
        return self.values[:, step - 1]


def resolve_valves(net: Network, overrides: Optional[Mapping] = None) -> dict:
    """Map every valve id to ``(status, setting)``, applying overrides.

    Override values may be a :class:`ValveStatus`, a status string, or a
    ``(status, setting)`` pair with ``setting=None`` meaning "keep".
    """
    out = {v.id: (v.status, v.setting) for v in net.valves}
    for vid, val in (overrides or {}).items():
        if vid not in out:
            raise ScenarioError(f"unknown valve {vid!r}")
        if isinstance(val, (tuple, list)):
            status, setting = val
        else:
            status, setting = val, None
        status = status if isinstance(status, ValveStatus) else ValveStatus(str(status).upper())
        out[vid] = (status, out[vid][1] if setting is None else float(setting))
    return out


# solver -----------------------------------------------------------------

class _Model:
    """Precomputed pieces of the hydraulic system, evaluated vectorially."""

    def __init__(self, net, Rg, fixed_idx, fixed_val, valve_states, d, meas_idx, meas_val, meas_w):
        self.net = net
        self.Rg = Rg
        self.fixed_idx = fixed_idx
        self.fixed_val = fixed_val
        self.valve_states = valve_states
        self.d = d
        self.meas_idx = meas_idx
        self.meas_val = meas_val
        self.meas_w = meas_w
        nh = net.n_h
        E = build_incidence(net).matrix
        self.EJ = E[: net.n_j, :].tocsr()
        links = net.pipes + net.pumps
        self.i_from = np.array([net.head_index(l.start) for l in links], dtype=int)
        self.i_to = np.array([net.head_index(l.end) for l in links], dtype=int)
        self.pump_h0 = np.array([p.h0 for p in net.pumps], dtype=float)
        self.pump_r = np.array([p.r for p in net.pumps], dtype=float)
        self.pump_beta = np.array([p.beta for p in net.pumps], dtype=float)

        # constant part of the Jacobian (everything except link slopes)
        rows, cols, vals = [], [], []
        EJ = self.EJ.tocoo()
        rows += EJ.row.tolist()
        cols += (EJ.col + nh).tolist()
        vals += EJ.data.tolist()
        r0 = net.n_j
        nl = len(links)
        rows += list(range(r0, r0 + nl)) * 2
        cols += self.i_from.tolist() + self.i_to.tolist()
        vals += [1.0] * nl + [-1.0] * nl
        r0 += nl
        vrows, vcols, vvals, vrhs = [], [], [], []
        for j, valve in enumerate(net.valves):
            status, setting = valve_states[valve.id]
            row = valve_equations(valve, status, setting)
            vrhs.append(row.rhs)
            for label, coef in row.coefficients:
                vrows.append(r0 + j)
                vcols.append(net.state_index(label))
                vvals.append(coef)
        rows += vrows
        cols += vcols
        vals += vvals
        self.valve_rhs = np.array(vrhs, dtype=float)
        r0 += net.n_l
        extra = np.concatenate([fixed_idx, meas_idx]).astype(int)
        rows += list(range(r0, r0 + len(extra)))
        cols += extra.tolist()
        vals += [1.0] * len(extra)
        self.n_rows = r0 + len(extra)
        self.J_const = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_rows, net.n_x))
        self.Vmat = sp.csr_matrix(
            (vvals, (np.array(vrows, dtype=int) - (net.n_j + nl), vcols)), shape=(net.n_l, net.n_x)
        )
        self.slope_rows = np.arange(net.n_j, net.n_j + nl)
        self.slope_cols = nh + np.arange(nl)

    def link_dh_slope(self, q):
        net = self.net
        qp, qm = q[: net.n_p], q[net.n_p : net.n_p + net.n_m]
        aq = np.abs(qp) ** (HW_EXPONENT - 1)
        dh_p = self.Rg * qp * aq
        s_p = np.maximum(HW_EXPONENT * self.Rg * aq, SLOPE_FLOOR)
        dh_m = -(self.pump_h0 - self.pump_r * np.sign(qm) * np.abs(qm) ** self.pump_beta)
        s_m = np.maximum(self.pump_r * self.pump_beta * np.abs(qm) ** (self.pump_beta - 1), SLOPE_FLOOR)
        return np.concatenate([dh_p, dh_m]), np.concatenate([s_p, s_m])

    def residual_jacobian(self, x):
        net = self.net
        h, q = x[: net.n_h], x[net.n_h :]
        dh, slope = self.link_dh_slope(q)
        F = np.concatenate(
            [
                self.EJ @ q - self.d,
                h[self.i_from] - h[self.i_to] - dh,
                self.Vmat @ x - self.valve_rhs,
                x[self.fixed_idx] - self.fixed_val,
                x[self.meas_idx] - self.meas_val,
            ]
        )
        Js = sp.csr_matrix((-slope, (self.slope_rows, self.slope_cols)), shape=self.J_const.shape)
        return F, self.J_const + Js


def _initial_guess(net: Network, fixed: dict, q0: float = 1.0) -> np.ndarray:
    x = np.zeros(net.n_x)
    href = float(np.mean(list(fixed.values()))) if fixed else 0.0
    x[: net.n_h] = href
    for nid, val in fixed.items():
        x[net.head_index(nid)] = val
    x[net.n_h :] = q0
    return x


def _check_limits(net: Network, x: np.ndarray, valve_states: dict, tol: float = 1e-6) -> list:
    out = []
    nh = net.n_h
    for j, pump in enumerate(net.pumps):
        qv = x[nh + net.n_p + j]
        if qv < -tol:
            out.append(f"pump {pump.id}: negative flow {qv:.4g} GPM")
    for j, valve in enumerate(net.valves):
        qv = x[nh + net.n_p + net.n_m + j]
        if valve.kind is ValveKind.PRV and qv < -tol:
            out.append(f"PRV {valve.id}: negative flow {qv:.4g} GPM")
        status, setting = valve_states[valve.id]
        if valve.kind is ValveKind.PRV and status is ValveStatus.ACTIVE:
            h_up = x[net.head_index(valve.start)]
            if h_up < setting - tol:
                out.append(f"PRV {valve.id}: upstream head {h_up:.2f} ft is below the setting {setting:g} ft")
    return out


def solve_operating_point(
    net: Network,
    d=None,
    fixed_heads: Optional[Mapping] = None,
    valve_states: Optional[Mapping] = None,
    *,
    roughness=None,
    measurements: Optional[Sequence] = None,
    x0=None,
    tol: float = 1e-6,
    max_iter: int = 100,
    step: int = 1,
) -> HydraulicState:
    """Solve the steady hydraulic equations for one step.

    ``fixed_heads`` defaults to reservoir heads and tank initial heads.
    ``measurements`` is an optional sequence of ``(state_id, value, weight)``
    extra observations; when given the problem is over-determined and is
    solved by weighted Gauss-Newton, otherwise by damped Newton.
    """
    d = net.demands_at(step - 1) if d is None else np.asarray(d, dtype=float)
    if d.shape != (net.n_j,):
        raise ScenarioError(f"demand vector has length {d.shape}, expected {net.n_j}")
    fixed = net.fixed_heads()
    if fixed_heads:
        for nid, val in fixed_heads.items():
            if nid not in fixed:
                raise ScenarioError(f"{nid!r} is not a reservoir or tank")
            fixed[nid] = float(val)
    vstates = resolve_valves(net, valve_states)
    if roughness is None:
        rough = np.array([p.roughness for p in net.pipes], dtype=float)
    else:
        rough = np.asarray(roughness, dtype=float)
    Rg = np.array(
        [resistance_gpm(p, c) for p, c in zip(net.pipes, rough)], dtype=float
    )
    fixed_ids = list(fixed)
    meas = list(measurements or [])
    model = _Model(
        net=net,
        Rg=Rg,
        fixed_idx=np.array([net.head_index(n) for n in fixed_ids], dtype=int),
        fixed_val=np.array([fixed[n] for n in fixed_ids], dtype=float),
        valve_states=vstates,
        d=d,
        meas_idx=np.array([net.state_index(m[0]) for m in meas], dtype=int),
        meas_val=np.array([m[1] for m in meas], dtype=float),
        meas_w=np.array([m[2] if len(m) > 2 else 1.0 for m in meas], dtype=float),
    )
    x = _initial_guess(net, fixed) if x0 is None else np.array(x0, dtype=float)
    if meas:
        # start from the square solution, then refine in least squares
        base = solve_operating_point(
            net, d, fixed_heads, valve_states, roughness=rough, x0=x0, tol=tol, max_iter=max_iter, step=step
        )
        x = _gauss_newton(model, base.x, tol, max_iter, step)
        it, res = -1, float("nan")
    else:
        x, it, res = _newton(model, x, tol, max_iter, step)
    state = HydraulicState(net, x, step=step, iterations=it, residual=res, demands=d.copy(), valve_states=vstates)
    state.violations = _check_limits(net, x, vstates)
    return state


def _solve_linear(J, rhs, step):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            dx = spla.spsolve(J.tocsc(), rhs)
    except (spla.MatrixRankWarning, RuntimeError) as exc:
        raise RankDeficiencyError(f"step {step}: singular hydraulic Jacobian ({exc})") from None
    if not np.all(np.isfinite(dx)):
        raise RankDeficiencyError(f"step {step}: singular hydraulic Jacobian")
    return dx


def _newton(model: _Model, x, tol, max_iter, step):
    F, J = model.residual_jacobian(x)
    if J.shape[0] != J.shape[1]:
        raise RankDeficiencyError(
            f"hydraulic system is {J.shape[0]}x{J.shape[1]}; expected square"
        )
    norm = float(np.linalg.norm(F))
    for it in range(1, max_iter + 1):
        if np.max(np.abs(F)) < tol:
            return x, it - 1, float(np.max(np.abs(F)))
        dx = _solve_linear(J, -F, step)
        lam = 1.0
        while True:
            x_new = x + lam * dx
            F_new, J_new = model.residual_jacobian(x_new)
            norm_new = float(np.linalg.norm(F_new))
            if norm_new < norm or lam < 1e-6:
                break
            lam *= 0.5
        x, F, J, norm = x_new, F_new, J_new, norm_new
    res = float(np.max(np.abs(F)))
    if res < tol:
        return x, max_iter, res
    raise ConvergenceError(
        f"step {step}: Newton did not converge in {max_iter} iterations (residual {res:.3g})",
        residual=res,
        iterations=max_iter,
        step=step,
    )


def _gauss_newton(model: _Model, x, tol, max_iter, step):
    n_eq = model.n_rows - len(model.meas_idx)
    w = np.concatenate([np.ones(n_eq), model.meas_w])
    for it in range(max_iter):
        F, J = model.residual_jacobian(x)
        Wj = sp.diags(w) @ J
        dx = _solve_linear((J.T @ Wj).tocsc(), -(J.T @ (w * F)), step)
        cost = float(F @ (w * F))
        lam = 1.0
        while lam > 1e-6:
            F_new, _ = model.residual_jacobian(x + lam * dx)
            if float(F_new @ (w * F_new)) <= cost:
                break
            lam *= 0.5
        x = x + lam * dx
        if np.max(np.abs(lam * dx)) < tol:
            return x
    raise ConvergenceError(
        f"step {step}: Gauss-Newton did not converge in {max_iter} iterations",
        iterations=max_iter,
        step=step,
    )


# extended period --------------------------------------------------------

@dataclass(frozen=True)
class ValveSchedule:
    """Per-step valve status/setting overrides (steps are 1-based)."""

    entries: tuple = ()  # ((step, valve_id, status, setting or None), ...)

    def at(self, step: int) -> dict:
        out = {}
        for k, vid, status, setting in self.entries:
            if k == step:
                out[vid] = (status, setting)
        return out

    @classmethod
    def from_records(cls, records) -> "ValveSchedule":
        entries = []
        for rec in records:
            try:
                k = int(rec["step"])
                vid = str(rec["valve_id"])
                status = ValveStatus(str(rec["status"]).upper())
            except (KeyError, ValueError, TypeError) as exc:
                raise ScenarioError(f"bad valve schedule entry {rec!r}: {exc}") from None
            setting = rec.get("setting")
            entries.append((k, vid, status, None if setting is None else float(setting)))
        return cls(tuple(entries))


def tank_net_inflow(net: Network, state: HydraulicState) -> dict:
    """Net inflow [GPM] into every tank at ``state``."""
    E = build_incidence(net).tank_rows
    qin = E @ state.q
    return {t.id: float(v) for t, v in zip(net.tanks, qin)}


def run_eps(
    net: Network,
    schedule: Optional[ValveSchedule] = None,
    T: int = 1,
    *,
    demands: Optional[DemandSchedule] = None,
    roughness=None,
    dt: Optional[float] = None,
    tol: float = 1e-6,
) -> list:
    """Chain steady solves over ``T`` steps, moving tank heads between them."""
    if T < 1:
        raise ValueError("T must be at least 1")
    demands = demands or DemandSchedule.from_network(net, T)
    if demands.T < T:
        raise ScenarioError(f"demand schedule has {demands.T} steps, need {T}")
    dt = net.hydraulic_step if dt is None else dt
    schedule = schedule or ValveSchedule()
    tank_heads = {t.id: t.initial_head for t in net.tanks}
    states = []
    x_prev = None
    for k in range(1, T + 1):
        try:
            st = solve_operating_point(
                net,
                demands.at(k),
                tank_heads,
                schedule.at(k),
                roughness=roughness,
                x0=x_prev,
                tol=tol,
                step=k,
            )
        except ConvergenceError as exc:
            exc.step = k
            raise
        states.append(st)
        x_prev = st.x
        inflow = tank_net_inflow(net, st)
        for tank in net.tanks:
            q_in = inflow[tank.id]
            tank_heads[tank.id] = tank_update(tank, tank_heads[tank.id], max(q_in, 0.0), max(-q_in, 0.0), dt)
    return states
