"""Top-down schematic SVG of a layout and a plain-text render for the judge prompt."""

from __future__ import annotations

import hashlib
from xml.sax.saxutils import escape

from .corpus import base_category
from .geometry import Boundary, Layout

PALETTE = ("#8dd3c7", "#ffffb3", "#bebada", "#fb8072", "#80b1d3", "#fdb462", "#b3de69", "#fccde5", "#d9d9d9", "#bc80bd")
MARGIN = 10.0


def _color(name: str) -> str:
    digest = hashlib.sha256(base_category(name).encode("utf-8")).digest()
    return PALETTE[digest[0] % len(PALETTE)]


def _f(v: float) -> str:
    return f"{v:.2f}"


def draw_order(layout: Layout) -> list[str]:
    """Bottom-most first, so supported objects are drawn over their supporters."""
    return sorted(layout.names, key=lambda n: (layout.boxes[n].min.z, n))


def render_svg(layout: Layout, boundary: Boundary, scale: float = 5.0) -> str:
    W, D = boundary.width * scale, boundary.depth * scale
    ox, oy = boundary.origin_x, boundary.origin_y
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(W + 2 * MARGIN)}" height="{_f(D + 2 * MARGIN)}" '
        f'viewBox="0 0 {_f(W + 2 * MARGIN)} {_f(D + 2 * MARGIN)}">',
        f'<rect id="boundary" x="{_f(MARGIN)}" y="{_f(MARGIN)}" width="{_f(W)}" height="{_f(D)}" '
        f'fill="#f7f3ea" stroke="#333333" stroke-width="2"/>',
    ]
    for name in draw_order(layout):
        b = layout.boxes[name]
        x = MARGIN + (b.min.x - ox) * scale
        # the front edge (small y) is drawn at the bottom of the image
        y = MARGIN + (oy + boundary.depth - b.max.y) * scale
        w, h = (b.max.x - b.min.x) * scale, (b.max.y - b.min.y) * scale
        stacked = b.min.z > boundary.surface_z
        stroke = 'stroke="#1f1f1f" stroke-width="3" stroke-dasharray="4 2"' if stacked else \
            'stroke="#555555" stroke-width="1"'
        out.append(f'<rect data-name="{escape(name)}" x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                   f'fill="{_color(name)}" fill-opacity="0.85" {stroke}/>')
        out.append(f'<text x="{_f(x + w / 2)}" y="{_f(y + h / 2)}" font-size="9" font-family="monospace" '
                   f'text-anchor="middle" dominant-baseline="middle">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_text(layout: Layout, boundary: Boundary) -> str:
    """Box listing used as the scene render inside the judge prompt."""
    lines = [f"table: x [0, {boundary.width:g}] cm (left to right), y [0, {boundary.depth:g}] cm (front to back)"]
    for name in draw_order(layout):
        b = layout.boxes[name]
        lines.append(
            f"{name}: x [{b.min.x - boundary.origin_x:.1f}, {b.max.x - boundary.origin_x:.1f}], "
            f"y [{b.min.y - boundary.origin_y:.1f}, {b.max.y - boundary.origin_y:.1f}], "
            f"z [{b.min.z:.1f}, {b.max.z:.1f}]"
        )
    return "\n".join(lines)
