"""Minimal static SVG charts: histograms and labelled bars."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H = 420, 300
PAD_L, PAD_R, PAD_T, PAD_B = 52, 16, 34, 44


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _frame(title, xlabel, ylabel, body, xticks, yticks):
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    x0, y0, x1, y1 = PAD_L, H - PAD_B, W - PAD_R, PAD_T
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    parts.extend(body)
    for px, label in xticks:
        parts.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{y0 + 16}" text-anchor="middle">{escape(label)}</text>')
    for py, label in yticks:
        parts.append(f'<line x1="{x0 - 4}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 6}" y="{py + 4:.2f}" text-anchor="end">{escape(label)}</text>')
    parts.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{H - 8}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(ylabel)}</text>')
    parts.append("</svg>\n")
    return "\n".join(parts)


def histogram_svg(values, bins: int = 20, title: str = "", xlabel: str = "", edges=None) -> str:
    values = np.asarray(values, dtype=float)
    if edges is None:
        lo, hi = (float(values.min()), float(values.max())) if values.size else (0.0, 1.0)
        if hi <= lo:
            hi = lo + 1.0
        edges = np.linspace(lo, hi, bins + 1)
    counts, edges = np.histogram(values, bins=edges)
    return bars_from_counts(counts, edges, title, xlabel)


def bars_from_counts(counts, edges, title="", xlabel="", ylabel="count") -> str:
    counts = np.asarray(counts)
    edges = np.asarray(edges, dtype=float)
    x0, y0, x1, y1 = PAD_L, H - PAD_B, W - PAD_R, PAD_T
    top = max(int(counts.max()) if counts.size else 1, 1)
    sx = (x1 - x0) / (edges[-1] - edges[0])
    sy = (y0 - y1) / top
    body = []
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        h = c * sy
        body.append(f'<rect x="{x0 + (a - edges[0]) * sx:.2f}" y="{y0 - h:.2f}" '
                    f'width="{max((b - a) * sx - 1, 0.5):.2f}" height="{h:.2f}" fill="#4a78b0"/>')
    xt = [(x0 + (e - edges[0]) * sx, _fmt(e)) for e in np.linspace(edges[0], edges[-1], 5)]
    yt = [(y0 - v * sy, str(int(v))) for v in np.linspace(0, top, 5).round()]
    return _frame(title, xlabel, ylabel, body, xt, yt)


def bar_chart_svg(labels, values, title: str = "", ylabel: str = "") -> str:
    values = np.asarray(values, dtype=float)
    x0, y0, x1, y1 = PAD_L, H - PAD_B, W - PAD_R, PAD_T
    top = float(values.max()) if values.size and values.max() > 0 else 1.0
    slot = (x1 - x0) / max(len(values), 1)
    body = []
    for i, v in enumerate(values):
        h = v / top * (y0 - y1)
        body.append(f'<rect x="{x0 + i * slot + slot * 0.15:.2f}" y="{y0 - h:.2f}" '
                    f'width="{slot * 0.7:.2f}" height="{h:.2f}" fill="#b0604a"/>')
        body.append(f'<text x="{x0 + (i + 0.5) * slot:.2f}" y="{y0 - h - 4:.2f}" '
                    f'text-anchor="middle">{_fmt(v)}</text>')
    xt = [(x0 + (i + 0.5) * slot, str(lab)) for i, lab in enumerate(labels)]
    yt = [(y0 - f * (y0 - y1), _fmt(f * top)) for f in (0, 0.5, 1)]
    return _frame(title, "", ylabel, body, xt, yt)
