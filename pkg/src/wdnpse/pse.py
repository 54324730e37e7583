"""Probabilistic state estimation: covariance of all heads and flows.

Given ``A x = b`` with ``Cov(b) = K_bb`` and ``A`` of full column rank,
the least-squares estimate ``x = (A'A)^-1 A' b`` has covariance
``K_xx = (A'A)^-1 A' K_bb A (A'A)^-1``. With a diagonal weight ``W`` the
estimate becomes ``(A'WA)^-1 A'W b``.

Both are evaluated as ``K_xx = Y Y'`` where ``Y = A^+ S`` and ``S S' =
K_bb``; ``A^+`` is applied through an LU factorization (square ``A``),
a QR factorization (tall ``A``) or, on request, a sparse LU of the
normal matrix. No explicit inverse is formed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericError, RankDeficiencyError, ScenarioError
from .linearization import (
    SRC_DEMAND,
    SRC_NOISE,
    SRC_ROUGHNESS,
    LinearSystem,
    assemble_system,
    rank_check,
)

log = logging.getLogger(__name__)

Z_VALUES = {0.80: 1.282, 0.95: 1.960, 0.99: 2.576}
CLAMP_RTOL = 1e-10


def z_value(level: float) -> float:
    for lv, z in Z_VALUES.items():
        if abs(level - lv) < 1e-9:
            return z
    raise ValueError(f"unsupported confidence level {level}; use one of {sorted(Z_VALUES)}")


@dataclass
class UncertaintySpec:
    """Variances of the uncertainty sources of one or more steps.

    ``demand_var`` is ``(n_j,)`` or ``(T, n_j)``; ``roughness_var`` is
    ``(n_p,)`` or ``(T, n_p)``. Measurement noise variances live on the
    measurement rows themselves.
    """

    demand_var: np.ndarray
    roughness_var: np.ndarray
    families: dict = field(default_factory=lambda: {"demand": "normal", "roughness": "normal", "noise": "normal"})

    def __post_init__(self):
        self.demand_var = np.asarray(self.demand_var, dtype=float)
        self.roughness_var = np.asarray(self.roughness_var, dtype=float)
        for name in ("demand_var", "roughness_var"):
            v = getattr(self, name)
            if np.any(~np.isfinite(v)) or np.any(v < 0):
                raise ScenarioError(f"{name} must be finite and non-negative")

    @classmethod
    def zeros(cls, net) -> "UncertaintySpec":
        return cls(np.zeros(net.n_j), np.zeros(net.n_p))

    def _pick(self, arr, step, steps):
        if arr.ndim == 1:
            return arr
        if steps is None:
            return arr[step - 1]
        return arr[list(steps).index(step)]

    def demand(self, step: int, steps=None) -> np.ndarray:
        return self._pick(self.demand_var, step, steps)

    def roughness(self, step: int, steps=None) -> np.ndarray:
        return self._pick(self.roughness_var, step, steps)


def kbb_diagonal(system: LinearSystem, spec: UncertaintySpec) -> np.ndarray:
    """Per-row variance of ``b``; sources are independent so K_bb is diagonal."""
    out = np.zeros(system.A.shape[0])
    multi = spec.demand_var.ndim == 2 or spec.roughness_var.ndim == 2
    steps = system.steps if multi and len(system.steps) > 1 else None
    for i, src in enumerate(system.row_sources):
        if src is None:
            continue
        kind, step, idx = src
        if kind == SRC_DEMAND:
            dv = spec.demand(step, steps)
            if dv.shape[0] <= idx:
                raise ScenarioError("demand variance vector is shorter than the junction count")
            out[i] = dv[idx]
        elif kind == SRC_ROUGHNESS:
            rv = spec.roughness(step, steps)
            if rv.shape[0] <= idx:
                raise ScenarioError("roughness variance vector is shorter than the pipe count")
            out[i] = system.row_scale[i] ** 2 * rv[idx]
        elif kind == SRC_NOISE:
            out[i] = idx.variance
    return out


def assemble_Kbb(system: LinearSystem, spec: UncertaintySpec) -> sp.dia_matrix:
    """Block-diagonal K_bb; tank coupling rows get a zero block."""
    return sp.diags(kbb_diagonal(system, spec), format="dia")


@dataclass
class CovarianceResult:
    K: np.ndarray
    labels: list
    mean: np.ndarray
    steps: list
    system: Optional[LinearSystem] = field(default=None, repr=False)
    K_bb: Optional[np.ndarray] = field(default=None, repr=False)
    weights: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.K).copy()

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def index(self, label: str) -> int:
        if label in self._index:
            return self._index[label]
        for prefix in ("h:", "q:"):
            if prefix + label in self._index:
                return self._index[prefix + label]
        raise KeyError(f"unknown state {label!r}")

    def var(self, label: str) -> float:
        i = self.index(label)
        return float(self.K[i, i])

    def std(self, label: str) -> float:
        return float(np.sqrt(self.var(label)))

    def cov(self, a: str, b: str) -> float:
        return float(self.K[self.index(a), self.index(b)])

    def value(self, label: str) -> float:
        return float(self.mean[self.index(label)])

    def block(self, labels: Sequence[str]) -> np.ndarray:
        idx = [self.index(l) for l in labels]
        return self.K[np.ix_(idx, idx)]

    def step_result(self, step: int) -> "CovarianceResult":
        """Per-step slice of a coupled horizon result."""
        if len(self.steps) == 1:
            if step != self.steps[0]:
                raise KeyError(f"result holds step {self.steps[0]}, not {step}")
            return self
        k = self.steps.index(step)
        n = len(self.labels) // len(self.steps)
        sl = slice(k * n, (k + 1) * n)
        labels = [lab.rsplit("@", 1)[0] for lab in self.labels[sl]]
        return CovarianceResult(self.K[sl, sl].copy(), labels, self.mean[sl].copy(), [step])


def _factor_psd(K_bb) -> tuple:
    """Return (S, is_diag) with S S' = K_bb."""
    if sp.issparse(K_bb):
        dia = K_bb.todia() if not isinstance(K_bb, sp.dia_matrix) else K_bb
        if dia.offsets.size == 0 or (dia.offsets.size == 1 and dia.offsets[0] == 0):
            K_bb = dia.diagonal()
        else:
            K_bb = K_bb.toarray()
    K_bb = np.asarray(K_bb, dtype=float)
    if K_bb.ndim == 1:
        if np.any(K_bb < 0) or not np.all(np.isfinite(K_bb)):
            raise NumericError("K_bb has negative or non-finite diagonal entries")
        return np.sqrt(K_bb), True
    if not np.allclose(K_bb, K_bb.T, atol=1e-12 * max(1.0, np.abs(K_bb).max())):
        raise NumericError("K_bb is not symmetric")
    if np.count_nonzero(K_bb - np.diag(np.diag(K_bb))) == 0:
        return _factor_psd(np.diag(K_bb))
    w, V = np.linalg.eigh(K_bb)
    scale = max(np.abs(w).max(), 1e-300)
    if w.min() < -1e-10 * scale:
        raise NumericError(f"K_bb is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None)), False


def _apply_pinv(A: sp.csr_matrix, rhs: np.ndarray, method: str) -> np.ndarray:
    """Return (A'A)^-1 A' rhs."""
    m, n = A.shape
    if method == "auto":
        method = "lu" if m == n else "qr"
    if method == "lu":
        if m != n:
            raise ValueError("LU path needs a square system")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", spla.MatrixRankWarning)
                lu = spla.splu(sp.csc_matrix(A))
        except (RuntimeError, spla.MatrixRankWarning) as exc:
            raise RankDeficiencyError(f"singular system matrix ({exc})") from None
        return lu.solve(np.asfortranarray(rhs))
    if method == "qr":
        Q, R = sla.qr(A.toarray(), mode="economic")
        return sla.solve_triangular(R, Q.T @ rhs)
    if method == "normal":
        N = sp.csc_matrix(A.T @ A)
        try:
            lu = spla.splu(N)
        except RuntimeError as exc:
            raise RankDeficiencyError(f"singular normal matrix ({exc})") from None
        return lu.solve(np.asfortranarray(A.T @ rhs))
    raise ValueError(f"unknown method {method!r}")


def _finish(K: np.ndarray) -> np.ndarray:
    K = 0.5 * (K + K.T)
    dg = np.diag(K)
    if dg.size and dg.min() < 0:
        thresh = CLAMP_RTOL * max(dg.max(), 0.0)
        if dg.min() < -thresh:
            raise NumericError(f"negative variance {dg.min():.3g} in K_xx")
        idx = np.flatnonzero(dg < 0)
        log.warning("clamping %d tiny negative variances to zero", idx.size)
        K[idx, idx] = 0.0
    return K


def _covariance(A, K_bb, sqrt_w, method, check_rank, system):
    A = sp.csr_matrix(A)
    if check_rank:
        rep = rank_check(system if system is not None else A)
        rep.raise_if_deficient()
    S, is_diag = _factor_psd(K_bb)
    if S.shape[0] != A.shape[0]:
        raise ScenarioError(f"K_bb has {S.shape[0]} rows but A has {A.shape[0]}")
    if sqrt_w is not None:
        A = sp.diags(sqrt_w) @ A
        S = sqrt_w * S if is_diag else sqrt_w[:, None] * S
    rhs = S
    if is_diag:
        keep = np.flatnonzero(S)
        rhs = np.zeros((A.shape[0], keep.size))
        rhs[keep, np.arange(keep.size)] = S[keep]
    if rhs.shape[1] == 0:
        return np.zeros((A.shape[1], A.shape[1]))
    Y = _apply_pinv(A, rhs, method)
    return _finish(Y @ Y.T)


def _labels_and_mean(system: Optional[LinearSystem], mean, n):
    if system is not None:
        labels = list(system.col_labels)
        steps = list(system.steps)
    else:
        labels = [f"x{i}" for i in range(n)]
        steps = [1]
    if mean is None:
        mean = np.zeros(n)
    return labels, np.asarray(mean, dtype=float), steps


def solve_covariance(
    system, K_bb, *, mean=None, method: str = "auto", check_rank: bool = True
) -> CovarianceResult:
    """Unweighted covariance ``(A'A)^-1 A' K_bb A (A'A)^-1``.

    ``system`` is a :class:`LinearSystem` or a plain matrix. ``mean``
    defaults to the least-squares solution of the mean system.
    """
    ls = system if isinstance(system, LinearSystem) else None
    A = ls.A if ls is not None else sp.csr_matrix(system)
    K = _covariance(A, K_bb, None, method, check_rank, ls)
    if mean is None and ls is not None:
        mean = _apply_pinv(A, ls.b[:, None], method)[:, 0]
    labels, mean, steps = _labels_and_mean(ls, mean, A.shape[1])
    kbb = K_bb.diagonal() if sp.issparse(K_bb) else np.asarray(K_bb)
    return CovarianceResult(K, labels, mean, steps, ls, kbb)


def solve_weighted(
    system, K_bb, W, *, mean=None, method: str = "auto", check_rank: bool = True
) -> CovarianceResult:
    """Weighted covariance ``(A'WA)^-1 A'W K_bb W A (A'WA)^-1`` for diagonal ``W > 0``."""
    ls = system if isinstance(system, LinearSystem) else None
    A = ls.A if ls is not None else sp.csr_matrix(system)
    if sp.issparse(W):
        W = W.diagonal()
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        if np.count_nonzero(W - np.diag(np.diag(W))):
            raise ScenarioError("weight matrix must be diagonal")
        W = np.diag(W)
    if W.shape != (A.shape[0],):
        raise ScenarioError(f"weight vector has length {W.shape}, expected {A.shape[0]}")
    if np.any(~(W > 0)) or not np.all(np.isfinite(W)):
        raise ScenarioError("weights must be finite and strictly positive")
    sw = np.sqrt(W)
    K = _covariance(A, K_bb, sw, method, check_rank, ls)
    if mean is None and ls is not None:
        Aw = sp.diags(sw) @ A
        mean = _apply_pinv(sp.csr_matrix(Aw), (sw * ls.b)[:, None], method)[:, 0]
    labels, mean, steps = _labels_and_mean(ls, mean, A.shape[1])
    kbb = K_bb.diagonal() if sp.issparse(K_bb) else np.asarray(K_bb)
    return CovarianceResult(K, labels, mean, steps, ls, kbb, W)


def inverse_variance_weights(K_bb, floor: float = 1e-10) -> np.ndarray:
    """Diagonal weights ``1 / Var(b_i)``; noise-free rows get ``1 / (floor * max Var)``.

    With these weights the weighted solve is the minimum-variance linear
    estimator, so adding an observation can only shrink variances.
    """
    k = K_bb.diagonal() if sp.issparse(K_bb) else np.asarray(K_bb, dtype=float)
    if k.ndim == 2:
        k = np.diag(k)
    top = float(k.max()) if k.size and k.max() > 0 else 1.0
    return 1.0 / np.maximum(k, floor * top)


@dataclass(frozen=True)
class CIRow:
    state: str
    mean: float
    sigma: float
    lo: float
    hi: float


def confidence_intervals(result: CovarianceResult, level: float = 0.95) -> list:
    z = z_value(level)
    sig = result.sigma
    return [
        CIRow(lab, float(mu), float(s), float(mu - z * s), float(mu + z * s))
        for lab, mu, s in zip(result.labels, result.mean, sig)
    ]


def run_algorithm1(net, scenario, T: Optional[int] = None, *, coupled: bool = False, states=None) -> list:
    """Per-step (or coupled) PSE over the scenario horizon.

    Returns one :class:`CovarianceResult` per step. In coupled mode the
    full horizon covariance is available as ``results[0].horizon``.
    """
    from .hydraulics import run_eps, solve_operating_point

    T = scenario.horizon if T is None else T
    if T < 1:
        raise ScenarioError("horizon must be at least 1")
    demands = scenario.demand_schedule(net, T)
    if states is None:
        states = run_eps(net, scenario.valve_schedule, T, demands=demands, dt=scenario.dt)
    extra = scenario.extra_measurements(net)
    if extra:
        refined = []
        for st in states:
            fixed = {n.id: st.head(n.id) for n in net.reservoirs + net.tanks}
            meas = [(m.state, m.value if m.value is not None else st[m.state], 1.0) for m in extra]
            refined.append(
                solve_operating_point(
                    net, st.demands, fixed, st.valve_states, measurements=meas, x0=st.x, step=st.step
                )
            )
        states = refined
    meas_steps = [scenario.measurements(net, st) for st in states]
    specs = [scenario.uncertainty(net, st) for st in states]
    weighted = scenario.has_weights()
    if coupled and T > 1:
        system = assemble_system(net, states, meas_steps, coupled=True, dt=scenario.dt,
                                 tank_measured=scenario.tank_measured)
        spec = UncertaintySpec(
            np.vstack([s.demand_var for s in specs]), np.vstack([s.roughness_var for s in specs])
        )
        kbb = kbb_diagonal(system, spec)
        mean = np.concatenate([st.x for st in states])
        if weighted:
            res = solve_weighted(system, kbb, scenario.weight_vector(system), mean=mean)
        else:
            res = solve_covariance(system, kbb, mean=mean)
        out = []
        for st in states:
            r = res.step_result(st.step)
            r.horizon = res
            out.append(r)
        return out
    out = []
    for st, ms, spec in zip(states, meas_steps, specs):
        system = assemble_system(net, st, ms)
        kbb = kbb_diagonal(system, spec)
        if weighted:
            res = solve_weighted(system, kbb, scenario.weight_vector(system), mean=st.x)
        else:
            res = solve_covariance(system, kbb, mean=st.x)
        res.steps = [st.step]
        res.state = st
        out.append(res)
    return out
