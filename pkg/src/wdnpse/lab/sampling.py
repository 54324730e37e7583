"""Moment-matched samplers with per-sample, per-source random streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import ScenarioError

FAMILIES = ("normal", "uniform", "laplace")

# stream ids mixed into every seed so sources never share random numbers
SOURCE_IDS = {"demand": 0, "roughness": 1, "noise": 2}


def standard_variates(rng: np.random.Generator, family: str, size) -> np.ndarray:
    """Zero-mean, unit-variance draws from ``family``."""
    if family == "normal":
        return rng.standard_normal(size)
    if family == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
    if family == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), size)
    raise ScenarioError(f"unsupported distribution family {family!r}")


def sample_stream(seed: int, index: int, source: int) -> np.random.Generator:
    """Generator for sample ``index`` of stream ``source``; depends on nothing else."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(index), int(source)])))


@dataclass(frozen=True)
class SourceGroup:
    """One independent group of uncertain inputs (e.g. all junction demands)."""

    name: str
    labels: tuple
    mean: np.ndarray
    variance: np.ndarray
    families: tuple

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)
        fams = tuple(self.families) if not isinstance(self.families, str) else (self.families,) * mean.size
        object.__setattr__(self, "families", fams)
        if not (mean.shape == var.shape == (len(self.labels),) and len(fams) == mean.size):
            raise ScenarioError(f"source group {self.name}: inconsistent dimensions")
        if np.any(var < 0) or not np.all(np.isfinite(var)):
            raise ScenarioError(f"source group {self.name}: variances must be finite and >= 0")
        bad = set(fams) - set(FAMILIES)
        if bad:
            raise ScenarioError(f"source group {self.name}: unsupported families {sorted(bad)}")

    @property
    def size(self) -> int:
        return self.mean.size


def _draw_row(group: SourceGroup, rng: np.random.Generator) -> np.ndarray:
    z = np.empty(group.size)
    fams = group.families
    if len(set(fams)) == 1:
        z[:] = standard_variates(rng, fams[0], group.size)
    else:
        for j, f in enumerate(fams):
            z[j] = standard_variates(rng, f, 1)[0]
    return group.mean + np.sqrt(group.variance) * z


def sample_group(group: SourceGroup, N: int, seed: int, start: int = 0) -> np.ndarray:
    """``(N, size)`` realizations; row ``i`` uses only ``(seed, start + i, group)``."""
    if N < 1:
        raise ScenarioError("need N >= 1 samples")
    sid = SOURCE_IDS.get(group.name, zlib.crc32(group.name.encode()) + 16)
    out = np.empty((N, group.size))
    for i in range(N):
        out[i] = _draw_row(group, sample_stream(seed, start + i, sid))
    return out


def sample_sources(groups, N: int, seed: int) -> dict:
    """Independent realizations for every group, keyed by group name."""
    if isinstance(groups, SourceGroup):
        groups = [groups]
    return {g.name: sample_group(g, N, seed) for g in groups}
