"""Hand-rolled SVG line charts.

Figures are diagnostics, so the writer is deliberately tiny: one panel,
linear or log axes, an optional shaded band, deterministic text output.
"""

from __future__ import annotations

import math

_W, _H = 720, 480
_ML, _MR, _MT, _MB = 70, 20, 40, 55


def _ticks(lo: float, hi: float, n: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if mag * mult >= raw:
            step = mag * mult
            break
    first = math.ceil(lo / step) * step
    out = []
    t = first
    while t <= hi + 1e-12 * abs(hi):
        out.append(round(t, 12))
        t += step
    return out or [lo, hi]


def _fmt_tick(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e5 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:g}"


class Chart:
    def __init__(self, title: str, xlabel: str, ylabel: str,
                 logx: bool = False, logy: bool = False):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.logx, self.logy = logx, logy
        self.bands: list[tuple[list, list, list, str]] = []
        self.lines: list[tuple[list, list, str, str]] = []
        self.markers: list[tuple[float, float, str]] = []

    def band(self, x, lo, hi, color: str = "#9ecae1"):
        self.bands.append((list(x), list(lo), list(hi), color))

    def line(self, x, y, color: str = "#08519c", label: str = ""):
        self.lines.append((list(x), list(y), color, label))

    def marker(self, x, y, color: str = "#d62728"):
        self.markers.append((x, y, color))

    def _tx(self, v: float) -> float:
        return math.log10(v) if self.logx else v

    def _ty(self, v: float) -> float:
        return math.log10(v) if self.logy else v

    def render(self) -> str:
        xs, ys = [], []
        for x, lo, hi, _ in self.bands:
            xs += x
            ys += lo + hi
        for x, y, _, _ in self.lines:
            xs += x
            ys += y
        for x, y, _ in self.markers:
            xs.append(x)
            ys.append(y)
        if self.logx:
            xs = [v for v in xs if v > 0]
        if self.logy:
            ys = [v for v in ys if v > 0]
        if not xs or not ys:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x0, x1 = self._tx(min(xs)), self._tx(max(xs))
        y0, y1 = self._ty(min(ys)), self._ty(max(ys))
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y1 = y0 + 1.0
        pad = 0.04 * (y1 - y0)
        y0, y1 = y0 - pad, y1 + pad

        def px(v: float) -> float:
            return _ML + (self._tx(v) - x0) / (x1 - x0) * (_W - _ML - _MR)

        def py(v: float) -> float:
            return _H - _MB - (self._ty(v) - y0) / (y1 - y0) * (_H - _MT - _MB)

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{self.title}</text>',
        ]
        # axes box
        parts.append(
            f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" height="{_H - _MT - _MB}" '
            'fill="none" stroke="#333" stroke-width="1"/>')
        xtv = [10 ** t for t in _ticks(x0, x1)] if self.logx else _ticks(x0, x1)
        ytv = [10 ** t for t in _ticks(y0, y1)] if self.logy else _ticks(y0, y1)
        for t in xtv:
            if not (x0 - 1e-12 <= self._tx(t) <= x1 + 1e-12):
                continue
            x = px(t)
            parts.append(f'<line x1="{x:.2f}" y1="{_H - _MB}" x2="{x:.2f}" y2="{_H - _MB + 5}" stroke="#333"/>')
            parts.append(f'<text x="{x:.2f}" y="{_H - _MB + 18}" text-anchor="middle">{_fmt_tick(t)}</text>')
        for t in ytv:
            if not (y0 - 1e-12 <= self._ty(t) <= y1 + 1e-12):
                continue
            y = py(t)
            parts.append(f'<line x1="{_ML - 5}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="#333"/>')
            parts.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end">{_fmt_tick(t)}</text>')
        parts.append(f'<text x="{_W / 2:.1f}" y="{_H - 12}" text-anchor="middle">{self.xlabel}</text>')
        parts.append(
            f'<text x="18" y="{_H / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 18 {_H / 2:.1f})">{self.ylabel}</text>')

        for x, lo, hi, color in self.bands:
            pts = [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, lo)]
            pts += [f"{px(a):.2f},{py(b):.2f}" for a, b in zip(reversed(x), reversed(hi))]
            parts.append(f'<polygon points="{" ".join(pts)}" fill="{color}" fill-opacity="0.45" stroke="none"/>')
        for x, y, color, _ in self.lines:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        for x, y, color in self.markers:
            parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="4.5" fill="{color}"/>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"
