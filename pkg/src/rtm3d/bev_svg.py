"""Deterministic bird's-eye-view SVG rendering.

Ground-truth boxes are drawn green, results blue, each with a heading
tick from the footprint center toward the box front.  The plot uses
x right, z up, origin at the camera, 10 px per meter by default; all
coordinates are formatted with two decimals so reruns are byte-identical.
"""

from __future__ import annotations

import math

from .evaluation import bev_corners
from .geometry import Box3D

__all__ = ["render_bev_svg"]

GT_COLOR = "#2e8b2e"
RESULT_COLOR = "#2e5bd7"
GRID_COLOR = "#d0d0d0"


def _fmt(v: float) -> str:
    return f"{v + 0.0:.2f}"  # +0.0 normalizes -0.0


def _to_svg(x: float, z: float, width: float, height: float, scale: float):
    return width / 2.0 + x * scale, height - z * scale


def _box_svg(box: Box3D, color: str, width: float, height: float, scale: float) -> str:
    corners = bev_corners(box)
    pts = " ".join(
        f"{_fmt(sx)},{_fmt(sy)}"
        for sx, sy in (_to_svg(x, z, width, height, scale) for x, z in corners)
    )
    cx, cz = box.t[0], box.t[2]
    # Heading tick: footprint center toward the front face (+length axis).
    hx = cx + (box.l / 2.0) * math.cos(box.yaw)
    hz = cz - (box.l / 2.0) * math.sin(box.yaw)
    sx0, sy0 = _to_svg(cx, cz, width, height, scale)
    sx1, sy1 = _to_svg(hx, hz, width, height, scale)
    return (
        f'<polygon points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        f'<line x1="{_fmt(sx0)}" y1="{_fmt(sy0)}" x2="{_fmt(sx1)}" y2="{_fmt(sy1)}" '
        f'stroke="{color}" stroke-width="1.5"/>'
    )


def render_bev_svg(
    results: list[Box3D],
    ground_truths: list[Box3D],
    width: int = 800,
    height: int = 800,
    scale: float = 10.0,
    grid_step_m: float = 10.0,
) -> str:
    """Standalone SVG text for one frame's boxes."""
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    step = grid_step_m * scale
    x = width / 2.0 % step
    while x <= width:
        parts.append(
            f'<line x1="{_fmt(x)}" y1="0" x2="{_fmt(x)}" y2="{height}" '
            f'stroke="{GRID_COLOR}" stroke-width="0.5"/>'
        )
        x += step
    y = height % step
    while y <= height:
        parts.append(
            f'<line x1="0" y1="{_fmt(y)}" x2="{width}" y2="{_fmt(y)}" '
            f'stroke="{GRID_COLOR}" stroke-width="0.5"/>'
        )
        y += step
    for box in ground_truths:
        parts.append(_box_svg(box, GT_COLOR, width, height, scale))
    for box in results:
        parts.append(_box_svg(box, RESULT_COLOR, width, height, scale))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
