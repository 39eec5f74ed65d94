"""Minimal SVG line plots: polylines, axes and labels, no dependencies."""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 30, 50


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (1, 2, 5, 10) if s * mag >= raw) * mag
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + step / 2, step)


def line_plot(series, title="", x_label="", y_label="", log_x=False) -> str:
    """Render named (x, y) series to an SVG document string.

    ``series`` is a list of (name, x_array, y_array).
    """
    xs = np.concatenate([np.asarray(s[1], dtype=float) for s in series])
    ys = np.concatenate([np.asarray(s[2], dtype=float) for s in series])
    if log_x:
        xs = np.log10(np.maximum(xs, 1e-300))
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(min(ys.min(), 0.0)), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_hi += pad

    def px(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * (_W - _ML - _MR)

    def py(y):
        return _H - _MB - (y - y_lo) / (y_hi - y_lo) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 12}" text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{(_MT + _H - _MB) / 2:.0f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(_MT + _H - _MB) / 2:.0f})">{y_label}</text>',
    ]
    for t in _ticks(x_lo, x_hi):
        label = f"1e{t:g}" if log_x else f"{t:g}"
        parts.append(f'<line x1="{px(t):.1f}" y1="{_H - _MB}" x2="{px(t):.1f}" '
                     f'y2="{_H - _MB + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.1f}" y="{_H - _MB + 18}" '
                     f'text-anchor="middle">{label}</text>')
    for t in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{_ML - 5}" y1="{py(t):.1f}" x2="{_ML}" '
                     f'y2="{py(t):.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{py(t):.1f}" text-anchor="end" '
                     f'dominant-baseline="middle">{t:g}</text>')
    for k, (name, sx, sy) in enumerate(series):
        sx = np.asarray(sx, dtype=float)
        if log_x:
            sx = np.log10(np.maximum(sx, 1e-300))
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(sx, np.asarray(sy)))
        color = _COLORS[k % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_W - _MR - 6}" y="{_MT + 16 + 15 * k}" text-anchor="end" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
