"""Deterministic CSV/JSON renderings of PSE and MCS results."""

from __future__ import annotations

import csv
import io
import json
from typing import Iterable, Optional

import numpy as np

from .pse import CovarianceResult, z_value

CSV_COLUMNS = (
    "state_id", "kind", "mean", "variance", "sigma",
    "ci80_lo", "ci80_hi", "ci95_lo", "ci95_hi", "step",
)
TRIPLET_COLUMNS = ("row", "col", "value", "step")
METRIC_COLUMNS = ("state_id", "sigma_mcs", "sigma_pse", "ae", "re_percent")


def _fmt(v: float) -> str:
    # repr round-trips exactly and is platform independent
    return repr(float(v))


def _kind(label: str) -> str:
    return {"h": "head", "q": "flow"}.get(label.split(":", 1)[0], "other")


def state_rows(results: Iterable[CovarianceResult]) -> list:
    """One dict per (step, state), in result order."""
    z80, z95 = z_value(0.80), z_value(0.95)
    rows = []
    for res in results:
        step = res.steps[0] if len(res.steps) == 1 else ""
        var = res.variance
        for lab, mu, v in zip(res.labels, res.mean, var):
            s = float(np.sqrt(max(v, 0.0)))
            rows.append({
                "state_id": lab.split(":", 1)[-1],
                "kind": _kind(lab),
                "mean": float(mu),
                "variance": float(v),
                "sigma": s,
                "ci80_lo": float(mu - z80 * s),
                "ci80_hi": float(mu + z80 * s),
                "ci95_lo": float(mu - z95 * s),
                "ci95_hi": float(mu + z95 * s),
                "step": step,
            })
    return rows


def _as_list(result) -> list:
    if result is None:
        return []
    if isinstance(result, CovarianceResult):
        return [result]
    return list(result)


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in header])
    return buf.getvalue().encode()


def covariance_triplets(result: CovarianceResult, *, tol: float = 0.0, upper: bool = True) -> list:
    """Nonzero entries as (row label, col label, value); upper triangle by default."""
    K = result.K
    out = []
    n = len(result.labels)
    for i in range(n):
        for j in range(i if upper else 0, n):
            v = float(K[i, j])
            if abs(v) > tol:
                out.append((result.labels[i], result.labels[j], v))
    return out


def write_report(result, fmt: str = "csv", *, covariance: bool = False) -> bytes:
    """Render PSE results as CSV or JSON bytes.

    ``result`` may be one CovarianceResult, a list of them (one per step)
    or None. With ``covariance=True`` the CSV holds the coordinate triplets
    of K_xx instead of the state table; JSON always carries both.
    """
    results = _as_list(result)
    if fmt == "csv":
        if covariance:
            rows = []
            for res in results:
                step = res.steps[0] if len(res.steps) == 1 else ""
                rows += [{"row": a, "col": b, "value": v, "step": step} for a, b, v in covariance_triplets(res)]
            return _csv(TRIPLET_COLUMNS, rows)
        return _csv(CSV_COLUMNS, state_rows(results))
    if fmt == "json":
        doc = {"states": state_rows(results), "covariance": []}
        for res in results:
            step = res.steps[0] if len(res.steps) == 1 else None
            doc["covariance"].append({
                "step": step,
                "triplets": [[a, b, v] for a, b, v in covariance_triplets(res)],
            })
        return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()
    raise ValueError(f"unknown report format {fmt!r}")


def read_report_json(data: bytes) -> dict:
    """Parse a JSON report; covariance blocks become dense matrices keyed by step."""
    doc = json.loads(data)
    blocks = {}
    for blk in doc["covariance"]:
        labels = sorted({t[0] for t in blk["triplets"]} | {t[1] for t in blk["triplets"]})
        idx = {l: i for i, l in enumerate(labels)}
        K = np.zeros((len(labels), len(labels)))
        for a, b, v in blk["triplets"]:
            K[idx[a], idx[b]] = K[idx[b], idx[a]] = v
        blocks[blk["step"]] = (labels, K)
    doc["blocks"] = blocks
    return doc


def write_metrics(report, fmt: str = "csv") -> bytes:
    """AE/RE table comparing MCS and PSE deviations."""
    rows = [
        {"state_id": lab, "sigma_mcs": sm, "sigma_pse": sp_, "ae": ae, "re_percent": re}
        for lab, sm, sp_, ae, re in report.rows()
    ]
    if fmt == "csv":
        return _csv(METRIC_COLUMNS, rows)
    if fmt == "json":
        clean = [{k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in r.items()} for r in rows]
        doc = {"rows": clean, "mean_ae": report.mean_ae, "max_ae": report.max_ae,
               "mean_re": report.mean_re, "max_re": report.max_re}
        return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()
    raise ValueError(f"unknown report format {fmt!r}")


def write_samples_sigma(batch) -> bytes:
    """Empirical deviation per state from an MCS batch."""
    from .lab.mcs import empirical_covariance

    K = empirical_covariance(batch)
    sig = np.sqrt(np.clip(np.diag(K), 0.0, None))
    mean = batch.good.mean(axis=0)
    rows = [
        {"state_id": lab.split(":", 1)[-1], "kind": _kind(lab), "mean": float(m), "sigma": float(s)}
        for lab, m, s in zip(batch.labels, mean, sig)
    ]
    return _csv(("state_id", "kind", "mean", "sigma"), rows)


def read_sigma_csv(data: bytes, step: Optional[int] = None) -> dict:
    """Map ``h:ID``/``q:ID`` to sigma from a state CSV written by :func:`write_report`."""
    out = {}
    for r in csv.DictReader(io.StringIO(data.decode())):
        if step is not None and r.get("step") not in ("", str(step)):
            continue
        prefix = "h:" if r["kind"] == "head" else "q:"
        out[prefix + r["state_id"]] = float(r["sigma"])
    return out
