"""Hand-written SVG regret plots: mean curves with shaded +-SD bands."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

LINEAR = "linear"
LOGLOG = "loglog"
PANELS = (LINEAR, LOGLOG)

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")
_W, _H = 460, 340
_LEFT, _RIGHT, _TOP, _BOTTOM = 70, 20, 30, 50


@dataclass(frozen=True)
class PlotSpec:
    summaries: dict
    panels: tuple = PANELS
    labels: dict | None = None
    title: str = ""

    def __post_init__(self):
        if not self.panels:
            raise ValueError("at least one panel is required")
        for p in self.panels:
            if p not in PANELS:
                raise ValueError(f"unknown panel {p!r}")
        if not self.summaries:
            raise ValueError("nothing to plot")


def _ticks(lo, hi, log):
    if log:
        a, b = math.floor(lo), math.ceil(hi)
        return [float(k) for k in range(a, b + 1) if lo - 1e-9 <= k <= hi + 1e-9]
    span = hi - lo
    raw = span / 5 if span > 0 else 1.0
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    x = start
    while x <= hi + 1e-9 * step:
        out.append(x)
        x += step
    return out


def _tick_label(v, log):
    if log:
        return f"1e{int(v)}"
    if v != 0 and (abs(v) >= 1e5 or abs(v) < 1e-3):
        return f"{v:.0e}"
    return f"{v:g}"


def _panel_series(summaries, mode):
    """Per policy: (x, y, lower, upper) in plot coordinates before scaling."""
    out = {}
    for name, s in summaries.items():
        t = np.asarray(s.t, dtype=float)
        mean = np.asarray(s.mean, dtype=float)
        sd = np.asarray(s.sd, dtype=float)
        lo, hi = mean - sd, mean + sd
        if mode == LOGLOG:
            keep = (t > 0) & (mean > 0)
            t, mean, lo, hi = t[keep], mean[keep], lo[keep], hi[keep]
            # the band's lower edge may dip below zero; clip it to the curve
            lo = np.where(lo > 0, lo, mean)
            t, mean, lo, hi = np.log10(t), np.log10(mean), np.log10(lo), np.log10(hi)
        out[name] = (t, mean, lo, hi)
    return out


def _panel_svg(summaries, mode, labels, x0):
    series = _panel_series(summaries, mode)
    xs = [v for x, *_ in series.values() for v in x]
    ys = [v for _, y, lo, hi in series.values() for v in (*y, *lo, *hi)]
    parts = [f'<g transform="translate({x0},0)">']
    parts.append(f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>')
    title = "linear scale" if mode == LINEAR else "log-log scale"
    parts.append(f'<text x="{_W / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    if not xs:
        parts.append(f'<text x="{_W / 2}" y="{_H / 2}" text-anchor="middle" '
                     'font-size="12">no positive data</text></g>')
        return "\n".join(parts)
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    if mode == LINEAR:
        ymin = min(ymin, 0.0)
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    pw = _W - _LEFT - _RIGHT
    ph = _H - _TOP - _BOTTOM

    def sx(v):
        return _LEFT + (v - xmin) / (xmax - xmin) * pw

    def sy(v):
        return _TOP + ph - (v - ymin) / (ymax - ymin) * ph

    log = mode == LOGLOG
    parts.append(f'<rect x="{_LEFT}" y="{_TOP}" width="{pw}" height="{ph}" '
                 'fill="none" stroke="black"/>')
    for v in _ticks(xmin, xmax, log):
        x = sx(v)
        parts.append(f'<line x1="{x:.2f}" y1="{_TOP + ph}" x2="{x:.2f}" y2="{_TOP + ph + 4}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{x:.2f}" y="{_TOP + ph + 16}" text-anchor="middle" '
                     f'font-size="10">{_tick_label(v, log)}</text>')
    for v in _ticks(ymin, ymax, log):
        y = sy(v)
        parts.append(f'<line x1="{_LEFT - 4}" y1="{y:.2f}" x2="{_LEFT}" y2="{y:.2f}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{_LEFT - 6}" y="{y + 3:.2f}" text-anchor="end" '
                     f'font-size="10">{_tick_label(v, log)}</text>')
    parts.append(f'<text x="{_LEFT + pw / 2}" y="{_H - 12}" text-anchor="middle" '
                 'font-size="11">round t</text>')
    parts.append(f'<text x="14" y="{_TOP + ph / 2}" text-anchor="middle" font-size="11" '
                 f'transform="rotate(-90 14 {_TOP + ph / 2})">pseudo-regret</text>')

    for k, (name, (x, y, lo, hi)) in enumerate(series.items()):
        color = _COLORS[k % len(_COLORS)]
        label = escape(labels.get(name, name))
        if x.size == 0:
            continue
        band = [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, hi)]
        band += [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[::-1], lo[::-1])]
        parts.append(f'<polygon class="band" points="{" ".join(band)}" fill="{color}" '
                     'fill-opacity="0.2" stroke="none"/>')
        line = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline class="series" data-policy="{label}" points="{line}" '
                     f'fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _TOP + 14 + 14 * k
        parts.append(f'<line x1="{_LEFT + 8}" y1="{ly}" x2="{_LEFT + 26}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_LEFT + 30}" y="{ly + 4}" font-size="10">{label}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def render_svg(spec):
    """SVG document with one panel per entry of ``spec.panels``, side by side."""
    labels = spec.labels or {}
    width = _W * len(spec.panels)
    top = 20 if spec.title else 0
    body = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{_H + top}" '
        f'viewBox="0 0 {width} {_H + top}" font-family="sans-serif">'
    ]
    if spec.title:
        body.append(f'<text x="{width / 2}" y="15" text-anchor="middle" '
                    f'font-size="14">{escape(spec.title)}</text>')
    body.append(f'<g transform="translate(0,{top})">')
    for k, mode in enumerate(spec.panels):
        body.append(_panel_svg(spec.summaries, mode, labels, k * _W))
    body.append("</g>\n</svg>\n")
    return "\n".join(body)


def write_svg(path, spec):
    with open(path, "w") as fh:
        fh.write(render_svg(spec))
