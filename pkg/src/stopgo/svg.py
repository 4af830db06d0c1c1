"""Minimal SVG heatmap writer for space-time fields."""
from __future__ import annotations

import numpy as np

# viridis-like stops
_STOPS = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)


def _color(u):
    u = float(np.clip(u, 0.0, 1.0)) * (len(_STOPS) - 1)
    k = min(int(u), len(_STOPS) - 2)
    c = _STOPS[k] + (u - k) * (_STOPS[k + 1] - _STOPS[k])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def heatmap(values, t, x, title, unit, max_cells=(120, 100)):
    """SVG text for ``values[t, x]`` with time on the horizontal axis."""
    values = np.asarray(values, dtype=float)
    ti = np.linspace(0, len(t) - 1, min(len(t), max_cells[0])).round().astype(int)
    xi = np.linspace(0, len(x) - 1, min(len(x), max_cells[1])).round().astype(int)
    sub = values[np.ix_(ti, xi)]
    lo, hi = float(np.nanmin(sub)), float(np.nanmax(sub))
    span = hi - lo if hi > lo else 1.0
    W, H, ml, mt = 480, 300, 60, 30
    cw, ch = W / len(ti), H / len(xi)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W + ml + 110}" height="{H + mt + 50}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{ml}" y="18" font-size="13">{title}</text>']
    for a, _ in enumerate(ti):
        for b, _ in enumerate(xi):
            y = mt + H - (b + 1) * ch
            out.append(f'<rect x="{ml + a * cw:.2f}" y="{y:.2f}" width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" '
                       f'fill="{_color((sub[a, b] - lo) / span)}"/>')
    out.append(f'<text x="{ml + W / 2 - 20}" y="{mt + H + 30}">t [s]</text>')
    out.append(f'<text x="12" y="{mt + H / 2}" transform="rotate(-90 12 {mt + H / 2})">x [m]</text>')
    out.append(f'<text x="{ml - 4}" y="{mt + H + 14}" text-anchor="end">{t[0]:g}</text>')
    out.append(f'<text x="{ml + W}" y="{mt + H + 14}" text-anchor="end">{t[-1]:g}</text>')
    out.append(f'<text x="{ml - 4}" y="{mt + 10}" text-anchor="end">{x[-1]:g}</text>')
    out.append(f'<text x="{ml - 4}" y="{mt + H}" text-anchor="end">{x[0]:g}</text>')
    bx = ml + W + 20
    for k in range(50):
        y = mt + H - (k + 1) * H / 50
        out.append(f'<rect x="{bx}" y="{y:.2f}" width="14" height="{H / 50 + 0.05:.2f}" fill="{_color(k / 49)}"/>')
    out.append(f'<text x="{bx + 18}" y="{mt + 10}">{hi:.4g}</text>')
    out.append(f'<text x="{bx + 18}" y="{mt + H}">{lo:.4g}</text>')
    out.append(f'<text x="{bx}" y="{mt - 8}">{unit}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
