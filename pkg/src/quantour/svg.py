"""
Minimal deterministic SVG charts for envelope plots.

Coordinates are log10 values; tick labels are printed on the natural scale.
Output depends only on the inputs, so reruns are byte-identical.
"""

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 800, 600
MARGIN = (70, 30, 40, 60)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def _f(x):
    return f"{x:.2f}"


def _nice_ticks(lo, hi, target=6):
    """Natural-scale tick values spanning ``[10**lo, 10**hi]``."""
    a, b = 10.0 ** lo, 10.0 ** hi
    raw = (b - a) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(a / step) * step
    ticks = []
    v = start
    while v <= b * (1 + 1e-12):
        if v > 0:
            ticks.append(v)
        v += step
    return ticks


def _label(v):
    return f"{v:g}"


class Canvas:
    def __init__(self, xlim, ylim, xlabel="", ylabel="", title=""):
        self.xlim, self.ylim = xlim, ylim
        self.items = []
        self.xlabel, self.ylabel, self.title = xlabel, ylabel, title

    def sx(self, x):
        l, r = MARGIN[0], WIDTH - MARGIN[1]
        return l + (x - self.xlim[0]) / (self.xlim[1] - self.xlim[0]) * (r - l)

    def sy(self, y):
        t, b = MARGIN[2], HEIGHT - MARGIN[3]
        return b - (y - self.ylim[0]) / (self.ylim[1] - self.ylim[0]) * (b - t)

    def polyline(self, xy, color, closed=False, dashed=False, label=None):
        xy = np.asarray(xy, dtype=float)
        if closed and len(xy):
            xy = np.vstack([xy, xy[:1]])
        pts = " ".join(f"{_f(self.sx(x))},{_f(self.sy(y))}" for x, y in xy)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        cls = f' class="{escape(label)}"' if label else ""
        self.items.append(f'<polyline{cls} points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')

    def line(self, intercept, slope, color, label=None):
        """Straight line ``y = intercept + slope x`` clipped to the x range."""
        x0, x1 = self.xlim
        self.polyline([(x0, intercept + slope * x0), (x1, intercept + slope * x1)], color,
                      dashed=True, label=label)

    def points(self, xy, color="#999999", r=1.0):
        for x, y in np.asarray(xy, dtype=float):
            self.items.append(f'<circle cx="{_f(self.sx(x))}" cy="{_f(self.sy(y))}" r="{r}" fill="{color}"/>')

    def legend(self, entries):
        for k, (text, color) in enumerate(entries):
            y = MARGIN[2] + 14 + 16 * k
            x = WIDTH - MARGIN[1] - 170
            self.items.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
            self.items.append(f'<text x="{x + 26}" y="{y}" font-size="11">{escape(text)}</text>')

    def _axes(self):
        l, r, t, b = MARGIN[0], WIDTH - MARGIN[1], MARGIN[2], HEIGHT - MARGIN[3]
        out = [f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" fill="none" stroke="#000000"/>']
        # clip-safe: ticks only where they fall inside the frame
        for v in _nice_ticks(*self.xlim):
            x = self.sx(math.log10(v))
            out.append(f'<line x1="{_f(x)}" y1="{b}" x2="{_f(x)}" y2="{b + 5}" stroke="#000000"/>')
            out.append(f'<text x="{_f(x)}" y="{b + 18}" font-size="11" text-anchor="middle">{_label(v)}</text>')
        for v in _nice_ticks(*self.ylim):
            y = self.sy(math.log10(v))
            out.append(f'<line x1="{l - 5}" y1="{_f(y)}" x2="{l}" y2="{_f(y)}" stroke="#000000"/>')
            out.append(f'<text x="{l - 8}" y="{_f(y + 4)}" font-size="11" text-anchor="end">{_label(v)}</text>')
        out.append(f'<text x="{(l + r) / 2}" y="{HEIGHT - 15}" font-size="13" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="18" y="{(t + b) / 2}" font-size="13" text-anchor="middle" '
                   f'transform="rotate(-90 18 {(t + b) / 2})">{escape(self.ylabel)}</text>')
        if self.title:
            out.append(f'<text x="{(l + r) / 2}" y="{t - 12}" font-size="14" text-anchor="middle">{escape(self.title)}</text>')
        return out

    def render(self):
        l, r, t, b = MARGIN[0], WIDTH - MARGIN[1], MARGIN[2], HEIGHT - MARGIN[3]
        head = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">',
            f'<defs><clipPath id="plot"><rect x="{l}" y="{t}" width="{r - l}" height="{b - t}"/></clipPath></defs>',
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        ]
        body = ['<g clip-path="url(#plot)">'] + self.items + ["</g>"]
        return "\n".join(head + self._axes() + body + ["</svg>", ""])


def _limits(arrays, pad=0.04):
    allxy = np.vstack([a for a in arrays if len(a)])
    lo, hi = allxy.min(axis=0), allxy.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (lo[0] - pad * span[0], hi[0] + pad * span[0]), (lo[1] - pad * span[1], hi[1] + pad * span[1])


def envelope_chart(polygons, lines=(), points=None, xlabel="BW (g)", ylabel="HC (cm)", title=""):
    """SVG text for envelope polygons on log10 axes.

    ``polygons`` is a list of ``(label, vertices)`` with log10 vertices;
    ``lines`` a list of ``(label, intercept, slope)`` drawn dashed.
    """
    arrays = [np.asarray(v, dtype=float) for _, v in polygons]
    if points is not None and len(points):
        arrays.append(np.asarray(points, dtype=float))
    if not any(len(a) for a in arrays):
        arrays = [np.array([[0.0, 0.0], [1.0, 1.0]])]
    xlim, ylim = _limits(arrays)
    c = Canvas(xlim, ylim, xlabel, ylabel, title)
    if points is not None and len(points):
        c.points(points)
    legend = []
    for k, (label, verts) in enumerate(polygons):
        color = PALETTE[k % len(PALETTE)]
        if len(verts):
            c.polyline(verts, color, closed=True, label=label)
        legend.append((label, color))
    for k, (label, a, b) in enumerate(lines):
        color = PALETTE[k % len(PALETTE)]
        c.line(a, b, color, label=label)
    c.legend(legend)
    return c.render()
