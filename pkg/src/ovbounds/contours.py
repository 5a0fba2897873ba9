"""Iso-contour extraction (marching squares) and a minimal SVG emitter."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


def _interp(p1, p2, v1, v2, level):
    t = 0.5 if v2 == v1 else (level - v1) / (v2 - v1)
    return (p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1]))


def iso_segments(xs, ys, values, level) -> list:
    """Line segments of the ``values == level`` contour.

    ``values[i, j]`` sits at ``(xs[j], ys[i])``. Saddle cells are resolved
    by the cell-center average.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values, dtype=float)
    segments = []
    for i in range(len(ys) - 1):
        for j in range(len(xs) - 1):
            corners = [
                ((xs[j], ys[i]), values[i, j]),
                ((xs[j + 1], ys[i]), values[i, j + 1]),
                ((xs[j + 1], ys[i + 1]), values[i + 1, j + 1]),
                ((xs[j], ys[i + 1]), values[i + 1, j]),
            ]
            crossings = []
            for k in range(4):
                (p1, v1), (p2, v2) = corners[k], corners[(k + 1) % 4]
                if (v1 >= level) != (v2 >= level):
                    crossings.append((k, _interp(p1, p2, v1, v2, level)))
            if len(crossings) == 2:
                segments.append((crossings[0][1], crossings[1][1]))
            elif len(crossings) == 4:
                center_high = np.mean([v for _, v in corners]) >= level
                first_high = corners[0][1] >= level
                by_edge = dict(crossings)
                if center_high == first_high:
                    segments.append((by_edge[0], by_edge[1]))
                    segments.append((by_edge[2], by_edge[3]))
                else:
                    segments.append((by_edge[3], by_edge[0]))
                    segments.append((by_edge[1], by_edge[2]))
    return segments


def chain_segments(segments, tol=1e-9) -> list:
    """Greedily join segments sharing endpoints into polylines."""

    def key(point):
        return (round(point[0] / tol), round(point[1] / tol))

    remaining = list(segments)
    polylines = []
    while remaining:
        a, b = remaining.pop()
        line = [a, b]
        grown = True
        while grown:
            grown = False
            for idx, (p, q) in enumerate(remaining):
                if key(p) == key(line[-1]):
                    line.append(q)
                elif key(q) == key(line[-1]):
                    line.append(p)
                elif key(p) == key(line[0]):
                    line.insert(0, q)
                elif key(q) == key(line[0]):
                    line.insert(0, p)
                else:
                    continue
                remaining.pop(idx)
                grown = True
                break
        polylines.append(line)
    return polylines


def _ticks(limit: float, count: int = 5) -> list:
    if limit <= 0:
        return [0.0]
    step = limit / (count - 1)
    return [k * step for k in range(count)]


def render_contour_svg(
    eta_d2_axis,
    eta_y2_axis,
    values,
    critical_threshold: Optional[float] = None,
    levels: Optional[Sequence[float]] = None,
    reference_points: Optional[Sequence[tuple]] = None,
    title: str = "",
    width: int = 560,
    height: int = 480,
) -> str:
    """Render iso-contours of a sensitivity grid as a standalone SVG.

    ``reference_points`` are (eta_d2, eta_y2, label) triples plotted as
    markers (covariate benchmarks, posited scenarios). The critical contour
    is drawn dashed in red; the equal-strength diagonal is dotted.
    """
    xs = np.asarray(eta_d2_axis, dtype=float)
    ys = np.asarray(eta_y2_axis, dtype=float)
    values = np.asarray(values, dtype=float)
    margin = 62
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    x_max = float(xs.max()) or 1.0
    y_max = float(ys.max()) or 1.0

    def to_px(x, y):
        px = margin + x / x_max * plot_w
        py = height - margin - y / y_max * plot_h
        return px, py

    if levels is None:
        lo, hi = float(values.min()), float(values.max())
        span = hi - lo
        levels = [lo + span * k / 9.0 for k in range(1, 9)] if span > 0 else []

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#333" stroke-width="1"/>',
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="{margin - 22}" text-anchor="middle" '
            f'font-size="14" font-family="sans-serif">{title}</text>'
        )

    for tx in _ticks(x_max):
        px, _ = to_px(tx, 0)
        out.append(
            f'<line x1="{px:.1f}" y1="{height - margin}" x2="{px:.1f}" '
            f'y2="{height - margin + 5}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{px:.1f}" y="{height - margin + 18}" text-anchor="middle" '
            f'font-size="10" font-family="sans-serif">{tx:.3g}</text>'
        )
    for ty in _ticks(y_max):
        _, py = to_px(0, ty)
        out.append(
            f'<line x1="{margin - 5}" y1="{py:.1f}" x2="{margin}" y2="{py:.1f}" stroke="#333"/>'
        )
        out.append(
            f'<text x="{margin - 8}" y="{py + 3:.1f}" text-anchor="end" '
            f'font-size="10" font-family="sans-serif">{ty:.3g}</text>'
        )
    out.append(
        f'<text x="{width / 2:.1f}" y="{height - 14}" text-anchor="middle" font-size="12" '
        'font-family="sans-serif">share of treatment variation from latent variables</text>'
    )
    out.append(
        f'<text x="16" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
        f'font-family="sans-serif" transform="rotate(-90 16 {height / 2:.1f})">'
        "share of outcome variation from latent variables</text>"
    )

    # equal-strength diagonal
    dmax = min(x_max, y_max)
    x0, y0 = to_px(0, 0)
    x1, y1 = to_px(dmax, dmax)
    out.append(
        f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y1:.1f}" '
        'stroke="#999" stroke-width="0.8" stroke-dasharray="2,3"/>'
    )

    def emit_level(level, color, dash, label):
        for line in chain_segments(iso_segments(xs, ys, values, level)):
            points = " ".join(f"{to_px(x, y)[0]:.2f},{to_px(x, y)[1]:.2f}" for x, y in line)
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            out.append(
                f'<polyline points="{points}" fill="none" stroke="{color}" '
                f'stroke-width="1"{dash_attr}/>'
            )
            if label and line:
                lx, ly = to_px(*line[len(line) // 2])
                out.append(
                    f'<text x="{lx:.1f}" y="{ly - 3:.1f}" font-size="9" '
                    f'font-family="sans-serif" fill="{color}">{level:.4g}</text>'
                )

    for level in levels:
        if critical_threshold is not None and level == critical_threshold:
            continue
        emit_level(level, "#4878a8", None, True)
    if critical_threshold is not None and values.min() <= critical_threshold <= values.max():
        emit_level(critical_threshold, "#c03030", "5,4", True)

    for point in reference_points or []:
        ex, ey, label = point
        px, py = to_px(ex, ey)
        out.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="3.5" fill="#b0542c"/>')
        out.append(
            f'<text x="{px + 6:.1f}" y="{py - 5:.1f}" font-size="10" '
            f'font-family="sans-serif" fill="#b0542c">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
