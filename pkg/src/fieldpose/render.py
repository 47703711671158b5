"""SVG skeleton overlays for scenes and decoded poses; PGM dumps of fused maps."""

from __future__ import annotations

import colorsys
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

from .core import SkeletonSpec
from .fusion import HighResMap


def connection_colors(n: int) -> list[str]:
    """One evenly spaced hue per connection, as #rrggbb."""
    out = []
    for i in range(n):
        r, g, b = colorsys.hsv_to_rgb(i / max(n, 1), 0.85, 0.9)
        out.append(f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}")
    return out


def render_svg(poses: Sequence[tuple[np.ndarray, np.ndarray]], skeleton: SkeletonSpec,
               width: int, height: int, stroke_width: float = 2.0) -> str:
    """Render ``(joints (K, >=2), present (K,))`` pairs as an SVG document.

    A segment is drawn only when both of its joints are present; present
    joints get a small dot. Output is byte-deterministic.
    """
    colors = connection_colors(skeleton.n_connections)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    for pi, (joints, present) in enumerate(poses):
        lines.append(f'<g class="pose" id={quoteattr(f"pose-{pi}")}>')
        for ci, (a, b) in enumerate(skeleton.connections):
            if not (present[a] and present[b]):
                continue
            lines.append(
                f'<line class="segment" x1="{joints[a, 0]:.2f}" y1="{joints[a, 1]:.2f}" '
                f'x2="{joints[b, 0]:.2f}" y2="{joints[b, 1]:.2f}" stroke="{colors[ci]}" '
                f'stroke-width="{stroke_width:g}" stroke-linecap="round"/>'
            )
        for k in np.nonzero(present)[0]:
            lines.append(f'<circle class="joint" cx="{joints[k, 0]:.2f}" cy="{joints[k, 1]:.2f}" '
                         f'r="{stroke_width:g}" fill="#ffffff"/>')
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(path: str | Path, svg: str) -> None:
    Path(path).write_text(svg)


def render_pgm(highres: HighResMap, keypoint_type: int | None = None) -> bytes:
    """Binary PGM (P5) of one fused plane, or the max over all types.

    Confidences are capped at 1 and mapped linearly to 0..255; one pixel
    per raster point.
    """
    plane = highres.values.max(axis=0) if keypoint_type is None else highres.values[keypoint_type]
    gray = np.rint(np.clip(plane, 0.0, 1.0) * 255).astype(np.uint8)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes()
