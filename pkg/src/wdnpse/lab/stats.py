"""Error metrics between PSE and MCS and the KS normality test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import NumericError, ScenarioError


@dataclass
class MetricReport:
    labels: list
    sigma_mcs: np.ndarray
    sigma_pse: np.ndarray
    ae: np.ndarray
    re: np.ndarray  # percent; NaN where sigma_mcs == 0

    @property
    def mean_ae(self) -> float:
        return float(np.mean(self.ae)) if self.ae.size else 0.0

    @property
    def max_ae(self) -> float:
        return float(np.max(self.ae)) if self.ae.size else 0.0

    @property
    def mean_re(self) -> float:
        v = self.re[np.isfinite(self.re)]
        return float(np.mean(v)) if v.size else 0.0

    @property
    def max_re(self) -> float:
        v = self.re[np.isfinite(self.re)]
        return float(np.max(v)) if v.size else 0.0

    def rows(self):
        for i, lab in enumerate(self.labels):
            yield lab, float(self.sigma_mcs[i]), float(self.sigma_pse[i]), float(self.ae[i]), float(self.re[i])


def compare(pse, mcs, labels=None, *, zero_tol: float = 1e-12) -> MetricReport:
    """AE = |sigma_MCS - sigma_PSE| and RE = AE / sigma_MCS in percent.

    ``pse`` is a CovarianceResult (or a covariance matrix) and ``mcs`` a
    SampleBatch (or a covariance matrix). States whose MCS deviation is
    below ``zero_tol`` times the largest one get RE = NaN.
    """
    from ..pse import CovarianceResult
    from .mcs import SampleBatch, empirical_covariance

    if isinstance(pse, CovarianceResult):
        p_labels, Kp = list(pse.labels), pse.K
    else:
        Kp = np.asarray(pse, dtype=float)
        p_labels = None
    if isinstance(mcs, SampleBatch):
        m_labels, Km = list(mcs.labels), empirical_covariance(mcs)
    else:
        Km = np.asarray(mcs, dtype=float)
        m_labels = None
    if Kp.shape != Km.shape:
        raise ScenarioError(f"covariance shapes differ: {Kp.shape} vs {Km.shape}")
    if p_labels is not None and m_labels is not None and p_labels != m_labels:
        raise ScenarioError("PSE and MCS state orderings differ")
    all_labels = p_labels or m_labels
    if all_labels is None:
        # bare matrices: ``labels`` names the rows when it covers all of them
        if labels is not None and len(labels) == Kp.shape[0]:
            all_labels = list(labels)
        else:
            all_labels = [f"x{i}" for i in range(Kp.shape[0])]
    idx = list(range(len(all_labels))) if labels is None else [all_labels.index(l) for l in labels]
    sm = np.sqrt(np.clip(np.diag(Km)[idx], 0, None))
    sp_ = np.sqrt(np.clip(np.diag(Kp)[idx], 0, None))
    ae = np.abs(sm - sp_)
    floor = zero_tol * (sm.max() if sm.size else 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        re = np.where(sm > floor, ae / np.where(sm > 0, sm, 1.0) * 100.0, np.nan)
    return MetricReport([all_labels[i] for i in idx], sm, sp_, ae, re)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    critical: float
    pvalue: float
    passed: bool
    n: int


def ks_normality_test(samples, alpha: float = 0.01) -> KSResult:
    """One-sample KS test against a normal with moment-fitted parameters.

    The fitted parameters make the test conservative (it rejects less
    often than ``alpha`` under normality).
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 50:
        raise ScenarioError("KS normality test needs at least 50 samples")
    if not 0 < alpha < 1:
        raise ScenarioError("alpha must lie in (0, 1)")
    mu, sd = x.mean(), x.std(ddof=1)
    if not sd > 1e-12 * max(1.0, abs(mu)):
        raise NumericError("samples have (numerically) zero variance")
    res = stats.kstest(x, "norm", args=(mu, sd))
    crit = float(stats.kstwo.ppf(1.0 - alpha, n))
    return KSResult(float(res.statistic), crit, float(res.pvalue), bool(res.statistic < crit), n)
