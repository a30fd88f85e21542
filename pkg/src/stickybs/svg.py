"""Minimal SVG line plots; enough to eyeball the CSV outputs without a plotting library."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def line_plot(
    series: dict[str, tuple[np.ndarray, np.ndarray]],
    xlabel: str,
    ylabel: str,
    width: int = 640,
    height: int = 400,
    hlines=(),
    vlines=(),
    max_points: int = 2000,
) -> str:
    pad = 50
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return pad + (np.asarray(x) - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (np.asarray(y) - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="#888"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="15" y="{height / 2}" text-anchor="middle" transform="rotate(-90 15 {height / 2})">'
        f"{escape(ylabel)}</text>",
        f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{pad - 4}" y="{pad + 10}" font-size="10" text-anchor="end">{y1:.4g}</text>',
    ]
    for h in hlines:
        if y0 <= h <= y1:
            parts.append(f'<line x1="{pad}" x2="{width - pad}" y1="{py(h):.2f}" y2="{py(h):.2f}" '
                         'stroke="#bbb" stroke-dasharray="4"/>')
    for v in vlines:
        if x0 <= v <= x1:
            parts.append(f'<line y1="{pad}" y2="{height - pad}" x1="{px(v):.2f}" x2="{px(v):.2f}" '
                         'stroke="#bbb" stroke-dasharray="4"/>')
    for i, (name, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        step = max(1, x.size // max_points)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(x[::step]), py(y[::step])))
        color = COLORS[i % len(COLORS)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{width - pad - 5}" y="{pad + 15 + 14 * i}" text-anchor="end" fill="{color}" '
                     f'font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
