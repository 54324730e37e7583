"""Minimal SVG line/band charts for confidence-interval series."""

from __future__ import annotations

from typing import Sequence

from xml.sax.saxutils import escape

WIDTH, HEIGHT, PAD = 640, 360, 48


def _scale(values, lo, hi, a, b):
    span = hi - lo or 1.0
    return [a + (v - lo) / span * (b - a) for v in values]


def band_chart(
    title: str,
    steps: Sequence[float],
    mean: Sequence[float],
    lo: Sequence[float],
    hi: Sequence[float],
    *,
    ylabel: str = "",
) -> str:
    """Mean line with a shaded [lo, hi] band; returns SVG text."""
    if not (len(steps) == len(mean) == len(lo) == len(hi)) or not steps:
        raise ValueError("series must be non-empty and of equal length")
    ymin, ymax = min(lo), max(hi)
    pad = 0.05 * (ymax - ymin or 1.0)
    ymin, ymax = ymin - pad, ymax + pad
    xs = _scale(steps, min(steps), max(steps), PAD, WIDTH - PAD)
    to_y = lambda vals: _scale(vals, ymin, ymax, HEIGHT - PAD, PAD)
    ym, yl, yh = to_y(mean), to_y(lo), to_y(hi)
    band = [f"{x:.2f},{y:.2f}" for x, y in zip(xs, yh)]
    band += [f"{x:.2f},{y:.2f}" for x, y in zip(reversed(xs), reversed(yl))]
    line = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ym))
    ticks = []
    for frac in (0.0, 0.5, 1.0):
        v = ymin + frac * (ymax - ymin)
        y = to_y([v])[0]
        ticks.append(f'<text x="{PAD - 4}" y="{y:.2f}" font-size="10" text-anchor="end">{v:.4g}</text>')
    return "\n".join([
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<text x="{WIDTH / 2}" y="20" font-size="14" text-anchor="middle">{escape(title)}</text>',
        f'<text x="12" y="{HEIGHT / 2}" font-size="11" transform="rotate(-90 12 {HEIGHT / 2})" text-anchor="middle">{escape(ylabel)}</text>',
        f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" fill="none" stroke="#999"/>',
        f'<polygon points="{" ".join(band)}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>',
        f'<polyline points="{line}" fill="none" stroke="#08519c" stroke-width="1.5"/>',
        *ticks,
        f'<text x="{PAD}" y="{HEIGHT - PAD + 16}" font-size="10">{steps[0]:g}</text>',
        f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 16}" font-size="10" text-anchor="end">{steps[-1]:g}</text>',
        "</svg>",
        "",
    ])


def state_band_chart(results, label: str, level: float = 0.95) -> str:
    """Band chart of one state's mean and CI across per-step results."""
    from .pse import z_value

    z = z_value(level)
    steps, mean, lo, hi = [], [], [], []
    for res in results:
        mu, s = res.value(label), res.std(label)
        steps.append(res.steps[0])
        mean.append(mu)
        lo.append(mu - z * s)
        hi.append(mu + z * s)
    unit = "ft" if label.startswith("h:") else "GPM"
    return band_chart(f"{label} ({int(level * 100)}% CI)", steps, mean, lo, hi, ylabel=unit)
