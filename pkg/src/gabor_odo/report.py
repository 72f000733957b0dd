"""Summary tables and hand-written SVG plots for experiment outputs."""

from __future__ import annotations

import csv
import io
from xml.sax.saxutils import escape

import numpy as np

from .trajectory import PlanarPath


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def table_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def table_markdown(rows: list[dict], columns: list[str]) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(c, "")) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def _polyline(xy: np.ndarray, color: str, width: float = 1.5, dash: str | None = None) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def trajectory_svg(est: PlanarPath, ref: PlanarPath, title: str = "", size: int = 480,
                   max_points: int = 2000) -> str:
    """Estimated (solid) over reference (dashed) path, equal axis scaling."""
    margin = 40
    xs = np.concatenate([est.x_m, ref.x_m])
    ys = np.concatenate([est.y_m, ref.y_m])
    span = max(float(np.ptp(xs)), float(np.ptp(ys)), 1e-6)
    scale = (size - 2 * margin) / span
    cx = 0.5 * (xs.min() + xs.max())
    cy = 0.5 * (ys.min() + ys.max())

    def to_px(p: PlanarPath):
        step = max(1, len(p) // max_points)
        x = p.x_m[::step]
        y = p.y_m[::step]
        if len(p) and (len(p) - 1) % step:
            x = np.append(x, p.x_m[-1])
            y = np.append(y, p.y_m[-1])
        return np.column_stack([size / 2 + (x - cx) * scale, size / 2 - (y - cy) * scale])

    bar_m = 10 ** np.floor(np.log10(span / 2))
    bar_px = bar_m * scale
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        _polyline(to_px(ref), "#555555", 1.5, "6,4"),
        _polyline(to_px(est), "#c0392b", 1.8),
        f'<circle cx="{size / 2 - cx * scale:.2f}" cy="{size / 2 + cy * scale:.2f}" r="3" fill="black"/>',
        f'<text x="{margin}" y="24" font-family="sans-serif" font-size="14">{escape(title)}</text>',
        f'<line x1="{margin}" y1="{size - 20}" x2="{margin + bar_px:.2f}" y2="{size - 20}" stroke="black"/>',
        f'<text x="{margin}" y="{size - 6}" font-family="sans-serif" font-size="11">{bar_m:g} m</text>',
        f'<text x="{size - 150}" y="{size - 24}" font-family="sans-serif" font-size="11" fill="#555555">'
        'reference (dashed)</text>',
        f'<text x="{size - 150}" y="{size - 8}" font-family="sans-serif" font-size="11" fill="#c0392b">'
        'estimate</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
