"""Monte-Carlo oracle over the nonlinear hydraulic model."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConvergenceError, DomainError, RankDeficiencyError, ScenarioError
from ..hydraulics import HydraulicState, run_eps, solve_operating_point
from ..linearization import assemble_system
from ..network import Network
from ..pse import _apply_pinv, kbb_diagonal
from .sampling import SourceGroup, sample_group

MAX_FAILURE_FRACTION = 0.01
THREADS_ENV = "WDNPSE_THREADS"


@dataclass
class SampleBatch:
    seed: int
    N: int
    labels: list
    X: np.ndarray  # (N, n_x); rows of failed samples are NaN
    converged: np.ndarray
    inputs: dict = field(default_factory=dict)
    base: Optional[np.ndarray] = None
    step: int = 1
    spec_hash: str = ""

    @property
    def excluded(self) -> list:
        return np.flatnonzero(~self.converged).tolist()

    @property
    def good(self) -> np.ndarray:
        return self.X[self.converged]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "N": self.N,
            "step": self.step,
            "spec_hash": self.spec_hash,
            "excluded": self.excluded,
        }


def source_groups(net: Network, scenario, state: HydraulicState) -> tuple:
    """Demand, roughness and sensor-noise groups of one step."""
    spec = scenario.uncertainty(net, state)
    d = state.demands if state.demands is not None else net.demands_at(state.step - 1)
    groups = [
        SourceGroup(
            "demand",
            tuple(j.id for j in net.junctions),
            d,
            spec.demand_var,
            tuple(scenario.demand_spec(j.id).distribution for j in net.junctions),
        ),
        SourceGroup(
            "roughness",
            tuple(p.id for p in net.pipes),
            np.array([p.roughness for p in net.pipes], dtype=float),
            spec.roughness_var,
            tuple(scenario.roughness_spec(p.id).distribution for p in net.pipes),
        ),
    ]
    meas = scenario.measurements(net, state)
    groups.append(
        SourceGroup(
            "noise",
            tuple(m.state for m in meas),
            np.zeros(len(meas)),
            np.array([m.variance for m in meas], dtype=float),
            tuple(scenario.noise_spec(m.state).distribution for m in meas),
        )
    )
    return groups, meas


def _thread_count(workers: Optional[int]) -> int:
    if workers is not None:
        return max(1, int(workers))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def base_state(net: Network, scenario, step: int = 1) -> HydraulicState:
    demands = scenario.demand_schedule(net, step)
    return run_eps(net, scenario.valve_schedule, step, demands=demands, dt=scenario.dt)[-1]


def run_mcs(
    net: Network,
    scenario,
    N: int,
    seed: int = 0,
    *,
    step: int = 1,
    state: Optional[HydraulicState] = None,
    workers: Optional[int] = None,
) -> SampleBatch:
    """Solve the nonlinear model for ``N`` perturbed inputs.

    Demands, pipe roughness and the measured fixed heads (reservoirs and
    tanks, each read with its sensor noise) are perturbed. Only the
    sufficient scenario is supported: extra measurements would make the
    nonlinear problem over-determined.
    """
    if N < 1:
        raise ScenarioError("need at least one sample")
    if not scenario.is_sufficient(net):
        raise ScenarioError(
            "Monte-Carlo simulation needs the sufficient scenario; extra measurements make "
            "the nonlinear problem over-determined and it has no unique solution per sample"
        )
    state = state or base_state(net, scenario, step)
    groups, meas = source_groups(net, scenario, state)
    draws = {g.name: sample_group(g, N, seed) for g in groups}
    fixed_labels = [m.state.split(":", 1)[1] for m in meas]
    fixed_vals = np.array([m.value for m in meas])
    X = np.full((N, net.n_x), np.nan)
    ok = np.zeros(N, dtype=bool)

    def solve(i):
        fixed = dict(zip(fixed_labels, fixed_vals - draws["noise"][i]))
        try:
            st = solve_operating_point(
                net,
                draws["demand"][i],
                fixed,
                state.valve_states,
                roughness=draws["roughness"][i],
                x0=state.x,
                step=state.step,
            )
        except (ConvergenceError, RankDeficiencyError, DomainError):
            return i, None
        return i, st.x

    nthreads = _thread_count(workers)
    if nthreads > 1:
        with ThreadPoolExecutor(nthreads) as pool:
            results = list(pool.map(solve, range(N)))
    else:
        results = [solve(i) for i in range(N)]
    for i, x in results:
        if x is not None:
            X[i] = x
            ok[i] = True
    n_fail = int(N - ok.sum())
    if n_fail > MAX_FAILURE_FRACTION * N:
        raise ConvergenceError(
            f"{n_fail} of {N} samples failed to converge; the scenario is probably infeasible",
            step=state.step,
        )
    spec_hash = hashlib.sha256(json.dumps(getattr(scenario, "source", {}), sort_keys=True).encode()).hexdigest()
    return SampleBatch(seed, N, net.state_labels(), X, ok, draws, state.x.copy(), state.step, spec_hash)


def empirical_covariance(batch) -> np.ndarray:
    """Unbiased sample covariance of the converged samples."""
    X = batch.good if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ScenarioError("need at least two samples for a covariance estimate")
    Xc = X - X.mean(axis=0)
    return (Xc.T @ Xc) / (X.shape[0] - 1)


def sample_linearized(net: Network, scenario, N: int, seed: int = 0, *, step: int = 1, state=None) -> SampleBatch:
    """Sample the tangent model: ``x = x0 + A^+ (b - b0)`` with perturbed sources."""
    state = state or base_state(net, scenario, step)
    groups, meas = source_groups(net, scenario, state)
    system = assemble_system(net, state, meas)
    draws = {g.name: sample_group(g, N, seed) for g in groups}
    g = {gr.name: gr for gr in groups}
    db = np.zeros((system.A.shape[0], N))
    n_j, n_p = net.n_j, net.n_p
    db[:n_j] = (draws["demand"] - g["demand"].mean).T
    db[n_j : n_j + n_p] = (system.row_scale[n_j : n_j + n_p, None]) * (draws["roughness"] - g["roughness"].mean).T
    r0 = n_j + net.n_q
    db[r0 : r0 + len(meas)] = -draws["noise"].T
    dx = _apply_pinv(system.A, db, "auto")
    X = state.x[None, :] + dx.T
    return SampleBatch(seed, N, net.state_labels(), X, np.ones(N, dtype=bool), draws, state.x.copy(), state.step)
