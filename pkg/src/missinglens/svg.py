"""Static SVG rendering of shape functions with a density strip."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .gam import ShapeFunction
from .tabular import CATEGORICAL, format_number

WIDTH, HEIGHT = 640, 380
MARGIN_L, MARGIN_R, MARGIN_T = 64, 24, 36
PLOT_H, STRIP_H, GAP = 220, 60, 28
MISSING_W = 56  # width of the separate missing-bin panel

SHAPE_COLOUR = "#1f5fa8"
MISSING_COLOUR = "#d9822b"
FLAG_COLOUR = "#c62828"


def _f(v: float) -> str:
    return f"{v:.2f}"


def _value_extent(shape: ShapeFunction) -> tuple[float, float]:
    e = shape.layout.edges
    lo, hi = float(e[0]), float(e[-1])
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def shape_svg(
    shape: ShapeFunction,
    title: str | None = None,
    mean_value: float | None = None,
    flagged_bins: Sequence[int] = (),
) -> str:
    """One feature's step-function shape over a bar strip of bin counts.

    The missing bin, if any, is drawn in its own panel on the right.
    ``mean_value`` adds a vertical rule and ``flagged_bins`` (value-bin
    indices) are shaded, for audit output.
    """
    lay = shape.layout
    nv = lay.n_value_bins
    has_missing = lay.missing_bin is not None
    x0 = MARGIN_L
    x1 = WIDTH - MARGIN_R - (MISSING_W + 12 if has_missing else 0)
    y_top = MARGIN_T
    y_bot = MARGIN_T + PLOT_H
    s_top = y_bot + GAP
    s_bot = s_top + STRIP_H

    scores = np.asarray(shape.scores, dtype=np.float64)
    smin, smax = float(scores.min()), float(scores.max())
    smin, smax = min(smin, 0.0), max(smax, 0.0)
    if smax - smin < 1e-12:
        smin, smax = smin - 1.0, smax + 1.0
    pad = 0.05 * (smax - smin)
    smin, smax = smin - pad, smax + pad

    def sy(v: float) -> float:
        return y_bot - (v - smin) / (smax - smin) * PLOT_H

    categorical = lay.kind == CATEGORICAL
    if categorical:
        step = (x1 - x0) / max(nv, 1)
        lefts = [x0 + k * step for k in range(nv)]
        rights = [x0 + (k + 1) * step for k in range(nv)]
    else:
        lo, hi = _value_extent(shape)

        def sx(v: float) -> float:
            return x0 + (min(max(v, lo), hi) - lo) / (hi - lo) * (x1 - x0)

        lefts = [sx(lay.edges[k]) for k in range(nv)]
        rights = [sx(lay.edges[k + 1]) for k in range(nv)]

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    label = title if title is not None else shape.feature
    out.append(f'<text x="{MARGIN_L}" y="20" font-size="14">{escape(label)}</text>')

    for k in sorted(set(int(b) for b in flagged_bins)):
        if 0 <= k < nv:
            out.append(f'<rect class="flagged" x="{_f(lefts[k])}" y="{y_top}" '
                       f'width="{_f(max(rights[k] - lefts[k], 1.0))}" height="{PLOT_H}" '
                       f'fill="{FLAG_COLOUR}" fill-opacity="0.18"/>')

    # axes and zero line
    out.append(f'<line x1="{x0}" y1="{y_bot}" x2="{x1}" y2="{y_bot}" stroke="#444"/>')
    out.append(f'<line x1="{x0}" y1="{y_top}" x2="{x0}" y2="{y_bot}" stroke="#444"/>')
    out.append(f'<line class="zero" x1="{x0}" y1="{_f(sy(0.0))}" x2="{x1}" y2="{_f(sy(0.0))}" '
               f'stroke="#999" stroke-dasharray="3,3"/>')
    for v in (smin + pad, 0.0, smax - pad):
        out.append(f'<text x="{x0 - 6}" y="{_f(sy(v) + 4)}" text-anchor="end">{format_number(round(v, 3))}</text>')

    # shape step path
    if nv:
        d = [f"M {_f(lefts[0])} {_f(sy(scores[0]))}"]
        for k in range(nv):
            d.append(f"L {_f(rights[k])} {_f(sy(scores[k]))}")
            if k + 1 < nv:
                d.append(f"L {_f(lefts[k + 1])} {_f(sy(scores[k + 1]))}")
        out.append(f'<path class="shape" d="{" ".join(d)}" fill="none" stroke="{SHAPE_COLOUR}" '
                   f'stroke-width="2"/>')

    # density strip
    counts = np.asarray(lay.counts, dtype=np.float64)
    cmax = float(counts.max()) if counts.size and counts.max() > 0 else 1.0
    out.append(f'<text x="{x0 - 6}" y="{s_top + 10}" text-anchor="end">n</text>')
    for k in range(nv):
        h = counts[k] / cmax * STRIP_H
        out.append(f'<rect class="density" data-bin="{k}" data-count="{format_number(counts[k])}" '
                   f'x="{_f(lefts[k])}" y="{_f(s_bot - h)}" width="{_f(max(rights[k] - lefts[k], 0.5))}" '
                   f'height="{_f(h)}" fill="#9bb7d4"/>')
    out.append(f'<line x1="{x0}" y1="{s_bot}" x2="{x1}" y2="{s_bot}" stroke="#444"/>')

    # x tick labels
    if categorical:
        for k, name in enumerate(lay.categories):
            out.append(f'<text x="{_f((lefts[k] + rights[k]) / 2)}" y="{s_bot + 14}" '
                       f'text-anchor="middle">{escape(str(name))}</text>')
    else:
        for v in np.linspace(lo, hi, 5):
            out.append(f'<text x="{_f(sx(v))}" y="{s_bot + 14}" text-anchor="middle">'
                       f'{format_number(round(float(v), 3))}</text>')

    if mean_value is not None and not categorical and math.isfinite(mean_value):
        xm = sx(mean_value)
        out.append(f'<line class="mean" x1="{_f(xm)}" y1="{y_top}" x2="{_f(xm)}" y2="{s_bot}" '
                   f'stroke="{FLAG_COLOUR}" stroke-width="1.5"/>')

    if has_missing:
        mb = lay.missing_bin
        mx0 = WIDTH - MARGIN_R - MISSING_W
        mx1 = WIDTH - MARGIN_R
        out.append(f'<line x1="{mx0}" y1="{y_bot}" x2="{mx1}" y2="{y_bot}" stroke="#444"/>')
        out.append(f'<line class="missing" x1="{mx0 + 6}" y1="{_f(sy(scores[mb]))}" x2="{mx1 - 6}" '
                   f'y2="{_f(sy(scores[mb]))}" stroke="{MISSING_COLOUR}" stroke-width="3"/>')
        h = counts[mb] / cmax * STRIP_H
        out.append(f'<rect class="density missing" data-bin="{mb}" data-count="{format_number(counts[mb])}" '
                   f'x="{mx0 + 6}" y="{_f(s_bot - h)}" width="{MISSING_W - 12}" height="{_f(h)}" '
                   f'fill="{MISSING_COLOUR}" fill-opacity="0.6"/>')
        out.append(f'<text x="{(mx0 + mx1) / 2}" y="{s_bot + 14}" text-anchor="middle">missing</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, svg: str) -> Path:
    path = Path(path)
    path.write_text(svg, encoding="utf-8")
    return path
