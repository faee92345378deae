"""Minimal hand-written SVG plots.

Coordinates are formatted with a fixed number of decimals so that identical
data always produce byte-identical files.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 320
LEFT, RIGHT, TOP, BOTTOM = 56, 16, 28, 40
SERIES_COLORS = {"R": "#c03030", "G": "#30a030", "B": "#3050c0", "Y": "#202020"}


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    def __init__(self, xmin, xmax, ymin, ymax):
        if xmax <= xmin:
            xmax = xmin + 1
        if ymax - ymin < 1e-9:
            ymin, ymax = ymin - 0.5, ymax + 0.5
        self.xmin, self.xmax, self.ymin, self.ymax = xmin, xmax, ymin, ymax

    def x(self, v):
        return LEFT + (v - self.xmin) / (self.xmax - self.xmin) * (W - LEFT - RIGHT)

    def y(self, v):
        return H - BOTTOM - (v - self.ymin) / (self.ymax - self.ymin) * (H - TOP - BOTTOM)


def _header(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W // 2}" y="18" font-family="sans-serif" font-size="12" text-anchor="middle">{escape(title)}</text>',
    ]


def _axes(fr: _Frame, xlabel, ylabel):
    x0, x1, y0, y1 = fr.x(fr.xmin), fr.x(fr.xmax), fr.y(fr.ymin), fr.y(fr.ymax)
    out = [
        f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x1)}" y2="{_f(y0)}" stroke="black"/>',
        f'<line x1="{_f(x0)}" y1="{_f(y0)}" x2="{_f(x0)}" y2="{_f(y1)}" stroke="black"/>',
        f'<text x="{_f(x0)}" y="{_f(y0 + 14)}" font-family="sans-serif" font-size="10">{fr.xmin:g}</text>',
        f'<text x="{_f(x1)}" y="{_f(y0 + 14)}" font-family="sans-serif" font-size="10" text-anchor="end">{fr.xmax:g}</text>',
        f'<text x="{_f(x0 - 4)}" y="{_f(y0)}" font-family="sans-serif" font-size="10" text-anchor="end">{fr.ymin:.3g}</text>',
        f'<text x="{_f(x0 - 4)}" y="{_f(y1 + 8)}" font-family="sans-serif" font-size="10" text-anchor="end">{fr.ymax:.3g}</text>',
        f'<text x="{_f((x0 + x1) / 2)}" y="{H - 8}" font-family="sans-serif" font-size="11" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{_f((y0 + y1) / 2)}" font-family="sans-serif" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {_f((y0 + y1) / 2)})">{escape(ylabel)}</text>',
    ]
    return out


def _polyline(fr, xs, ys, color, dash=None, width=1.5):
    pts = " ".join(f"{_f(fr.x(x))},{_f(fr.y(y))}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} points="{pts}"/>'


def _legend(entries):
    out = []
    for i, (label, color, dash) in enumerate(entries):
        y = TOP + 4 + 14 * i
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="{W - 130}" y1="{y}" x2="{W - 110}" y2="{y}" stroke="{color}" stroke-width="1.5"{extra}/>')
        out.append(f'<text x="{W - 105}" y="{y + 4}" font-family="sans-serif" font-size="10">{escape(label)}</text>')
    return out


def profile_plot(prof, colored: bool = False, title: str = "") -> str:
    """Input (dashed) and output (solid) values along a probe; target spans shaded."""
    xs = np.arange(prof.probe.x0, prof.probe.x1)
    series = [("Y", prof.input_y, prof.output_y)]
    if colored:
        series += [(c, prof.input[i], prof.output[i]) for i, c in enumerate("RGB")]
    vals = np.concatenate([np.concatenate([a, b]) for _, a, b in series])
    fr = _Frame(float(xs[0]), float(xs[-1]), float(min(vals.min(), 0.0)), float(max(vals.max(), 1.0)))
    out = _header(title)
    for a, b in prof.target_spans:
        x0, x1 = fr.x(a - 0.5), fr.x(b - 0.5)
        out.append(f'<rect x="{_f(x0)}" y="{_f(fr.y(fr.ymax))}" width="{_f(x1 - x0)}" '
                   f'height="{_f(fr.y(fr.ymin) - fr.y(fr.ymax))}" fill="#f0d060" fill-opacity="0.35"/>')
    out += _axes(fr, "column", "value")
    legend = []
    for name, a, b in series:
        color = SERIES_COLORS[name]
        out.append(_polyline(fr, xs, a, color, dash="4 3", width=1.0))
        out.append(_polyline(fr, xs, b, color))
        legend += [(f"{name} input", color, "4 3"), (f"{name} output", color, None)]
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def line_plot(series: dict, xlabel: str = "x", ylabel: str = "y", title: str = "") -> str:
    """One marked polyline per named series of ``(x, y)`` points."""
    pts = [p for s in series.values() for p in s]
    out = _header(title)
    if not pts:
        out.append(f'<text x="{W // 2}" y="{H // 2}" font-family="sans-serif" font-size="12" '
                   f'text-anchor="middle">no data</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
    xs = [float(p[0]) for p in pts]
    ys = [float(p[1]) for p in pts]
    fr = _Frame(min(xs), max(xs), 0.0, max(ys))
    out += _axes(fr, xlabel, ylabel)
    legend = []
    for name, s in series.items():
        if not s:
            continue
        color = SERIES_COLORS.get(name, "#606060")
        sx, sy = [float(p[0]) for p in s], [float(p[1]) for p in s]
        out.append(_polyline(fr, sx, sy, color))
        for x, y in zip(sx, sy):
            out.append(f'<circle cx="{_f(fr.x(x))}" cy="{_f(fr.y(y))}" r="2.5" fill="{color}"/>')
        legend.append((name, color, None))
    out += _legend(legend)
    out.append("</svg>")
    return "\n".join(out) + "\n"
