"""Dependency-free SVG plots on a fixed 800x600 canvas.

Trajectory overlays are top views: world ``x`` runs right and world ``z``
runs up. Data are scaled uniformly (equal aspect) to fit the canvas inside
a 40 px margin and centred.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH = 800
HEIGHT = 600
MARGIN = 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _num(v: float) -> str:
    return f"{v:.3f}"


def trajectory_svg(named_positions: list[tuple[str, np.ndarray]]) -> str:
    """One ``<polyline>`` per trajectory; the first is drawn in black (ground truth)."""
    allp = np.vstack([p[:, [0, 2]] for _, p in named_positions if len(p)])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    scale = min((WIDTH - 2 * MARGIN) / span[0], (HEIGHT - 2 * MARGIN) / span[1])
    mid = 0.5 * (lo + hi)

    def to_px(xz):
        x = WIDTH / 2 + (xz[:, 0] - mid[0]) * scale
        y = HEIGHT / 2 - (xz[:, 1] - mid[1]) * scale
        return x, y

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    for k, (name, pos) in enumerate(named_positions):
        color = "#000000" if k == 0 else PALETTE[(k - 1) % len(PALETTE)]
        x, y = to_px(pos[:, [0, 2]])
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(x, y))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5">'
            f"<title>{escape(name)}</title></polyline>"
        )
        parts.append(
            f'<text x="{MARGIN}" y="{MARGIN - 20 + 14 * k}" font-size="12" fill="{color}">{escape(name)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _color(t: float) -> str:
    # white -> red ramp
    g = int(round(255 * (1.0 - t)))
    return f"#ff{g:02x}{g:02x}"


def heatmap_svg(row_names: list[str], col_names: list[str], values: np.ndarray) -> str:
    """Grid of cells (rows = metrics, columns = runs), colour-scaled per row."""
    values = np.asarray(values, dtype=float)
    nr, nc = values.shape
    label_w = 120
    cw = (WIDTH - 2 * MARGIN - label_w) / max(nc, 1)
    ch = (HEIGHT - 2 * MARGIN - 20) / max(nr, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]
    for i in range(nr):
        row = values[i]
        lo, hi = float(row.min()), float(row.max())
        y = MARGIN + 20 + i * ch
        parts.append(
            f'<text x="{MARGIN}" y="{_num(y + ch / 2)}" font-size="12">{escape(row_names[i])}</text>'
        )
        for j in range(nc):
            t = 0.0 if hi == lo else (row[j] - lo) / (hi - lo)
            x = MARGIN + label_w + j * cw
            parts.append(
                f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(cw)}" height="{_num(ch)}" '
                f'fill="{_color(t)}" stroke="#888888"><title>{escape(col_names[j])}: {row[j]:.6g}</title></rect>'
            )
    for j in range(nc):
        x = MARGIN + label_w + (j + 0.5) * cw
        parts.append(
            f'<text x="{_num(x)}" y="{MARGIN + 12}" font-size="10" text-anchor="middle">{escape(col_names[j])}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
