"""Closed-form densities of pump head change and pipe head loss.

Both are change-of-variable densities of a monotone transform of the
flow ``Q``. ``flow`` is either a frozen ``scipy.stats`` distribution or a
``(mean, sd)`` pair for a normal flow.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate, stats


def _flow_pdf(flow):
    if hasattr(flow, "pdf"):
        return flow.pdf
    mu, sd = flow
    return stats.norm(mu, sd).pdf


def pump_headgain_pdf(pump, flow, dh):
    """Density of ``dh = -(h0 - r Q^beta)`` for ``Q >= 0``.

    ``pump`` is a :class:`~wdnpse.network.Pump` or an ``(h0, r, beta)``
    tuple. Outside ``dh > -h0`` the density is 0.
    """
    h0, r, beta = (pump.h0, pump.r, pump.beta) if hasattr(pump, "h0") else pump
    f = _flow_pdf(flow)
    dh = np.asarray(dh, dtype=float)
    u = (h0 + dh) / r
    out = np.zeros_like(dh)
    pos = u > 0
    up = u[pos]
    out[pos] = (1.0 / (r * beta)) * up ** (1.0 / beta - 1.0) * f(up ** (1.0 / beta))
    return float(out) if out.ndim == 0 else out


def pipe_headloss_pdf(R, alpha, flow, dh):
    """Density of ``dh = R Q^alpha`` on the positive-flow branch.

    Includes the ``1/alpha`` factor from differentiating ``(dh/R)^(1/alpha)``.
    """
    f = _flow_pdf(flow)
    dh = np.asarray(dh, dtype=float)
    out = np.zeros_like(dh)
    pos = dh > 0
    u = dh[pos] / R
    out[pos] = (1.0 / (alpha * R)) * u ** (1.0 / alpha - 1.0) * f(u ** (1.0 / alpha))
    return float(out) if out.ndim == 0 else out


def bin_average(pdf, edges) -> np.ndarray:
    """Average of ``pdf`` over each histogram bin (adaptive quadrature)."""
    out = np.empty(len(edges) - 1)
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        val, _ = integrate.quad(pdf, a, b, limit=200)
        out[i] = val / (b - a)
    return out


def histogram_sup_error(samples, pdf, edges) -> float:
    """Largest gap between the empirical histogram density and ``pdf``.

    The histogram is normalized by the total sample count, so mass
    outside ``edges`` counts against the match.
    """
    samples = np.asarray(samples, dtype=float)
    counts, _ = np.histogram(samples, bins=edges)
    widths = np.diff(edges)
    emp = counts / (samples.size * widths)
    return float(np.max(np.abs(emp - bin_average(pdf, edges))))


def total_mass(pdf, lo, hi, points=None) -> float:
    val, _ = integrate.quad(pdf, lo, hi, limit=500, points=points, epsabs=1e-12, epsrel=1e-10)
    return float(val)
