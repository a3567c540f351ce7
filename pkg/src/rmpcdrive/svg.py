"""Tiny direct-to-SVG line charts and heatmaps."""

from __future__ import annotations

from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, n)


def line_chart(series: dict, title: str = "", x_label: str = "", y_label: str = "", width=720, height=360) -> str:
    """``series`` maps a legend name to ``(x, y)`` arrays."""
    ml, mr, mt, mb = 70, 150, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.zeros(1)
    ys = ys[np.isfinite(ys)] if np.isfinite(ys).any() else np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else max(abs(y0), 1e-6)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return ml + (v - x0) / (x1 - x0) * pw

    def py(v):
        return mt + ph - (v - y0) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="white" stroke="#444"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2:.1f})">{escape(y_label)}</text>',
    ]
    for v in _ticks(x0, x1):
        out.append(f'<text x="{px(v):.1f}" y="{mt + ph + 15}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{py(v):.1f}" y2="{py(v):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for i, (name, (x, y)) in enumerate(series.items()):
        col = PALETTE[i % len(PALETTE)]
        x, y = np.asarray(x, float), np.asarray(y, float)
        stride = max(1, len(x) // 2000)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[::stride], y[::stride]) if np.isfinite(b))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.3" points="{pts}"/>')
        ly = mt + 14 + 16 * i
        out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color(v: float) -> str:
    # dark blue -> yellow
    v = min(max(v, 0.0), 1.0)
    r = int(30 + 225 * v)
    g = int(30 + 200 * v)
    b = int(120 * (1 - v) + 20)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(grid, xs, ys, title: str = "", overlay_y=(), width=800, height=300) -> str:
    """Cells colored by ``grid[i, j]`` at ``(xs[j], ys[i])``, with horizontal overlay lines."""
    grid = np.asarray(grid, float)
    ml, mr, mt, mb = 50, 20, 30, 35
    pw, ph = width - ml - mr, height - mt - mb
    lo, hi = float(np.nanmin(grid)), float(np.nanmax(grid))
    span = hi - lo if hi > lo else 1.0
    ny, nx = grid.shape
    cw, ch = pw / nx, ph / ny
    x0, x1, y0, y1 = float(xs[0]), float(xs[-1]), float(ys[0]), float(ys[-1])
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for i in range(ny):
        for j in range(nx):
            v = (grid[i, j] - lo) / span
            out.append(
                f'<rect x="{ml + j * cw:.2f}" y="{mt + (ny - 1 - i) * ch:.2f}" width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="{_color(v)}"/>'
            )
    for yv in overlay_y:
        yy = mt + ph - (yv - y0) / (y1 - y0 if y1 > y0 else 1.0) * ph
        out.append(f'<line x1="{ml}" x2="{ml + pw}" y1="{yy:.1f}" y2="{yy:.1f}" stroke="white" stroke-dasharray="6,4"/>')
    out.append(f'<text x="{ml}" y="{height - 10}">x = {x0:.3g} m</text>')
    out.append(f'<text x="{ml + pw}" y="{height - 10}" text-anchor="end">x = {x1:.3g} m</text>')
    out.append(f'<text x="{ml - 5}" y="{mt + ph}" text-anchor="end">{y0:.3g}</text>')
    out.append(f'<text x="{ml - 5}" y="{mt + 8}" text-anchor="end">{y1:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
