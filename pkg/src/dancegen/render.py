"""Deterministic SVG skeleton rendering, one file per frame.

Joints are circles with radius scaled by confidence; invisible joints
(s == 0) and bones touching them are omitted. Output bytes are a pure
function of the pose data and skeleton, so renders are diffable.
"""

from __future__ import annotations

from pathlib import Path

from .pose import PoseSequence, SkeletonSpec

CANVAS = 512


def frame_svg(frame, edges: tuple[tuple[int, int], ...], size: int = CANVAS) -> str:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    pts = [(x * size, y * size, s) for x, y, s in frame]
    for a, b in edges:
        xa, ya, sa = pts[a]
        xb, yb, sb = pts[b]
        if sa > 0 and sb > 0:
            parts.append(
                f'<line x1="{xa:.2f}" y1="{ya:.2f}" x2="{xb:.2f}" y2="{yb:.2f}" '
                f'stroke="black" stroke-width="2"/>'
            )
    for x, y, s in pts:
        if s > 0:
            parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{2 + 6 * s:.2f}" fill="crimson"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_sequence(
    seq: PoseSequence,
    out_dir,
    skeleton: SkeletonSpec | None = None,
    size: int = CANVAS,
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    edges = skeleton.edge_list if skeleton is not None else ()
    paths = []
    for t in range(seq.T):
        path = out_dir / f"frame_{t:05d}.svg"
        path.write_text(frame_svg(seq.data[t], edges, size=size))
        paths.append(path)
    return paths
