"""Deterministic SVG route maps."""

from __future__ import annotations

from numbers import Integral
from typing import Sequence
from xml.sax.saxutils import escape

from .instance import Instance

PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_svg(instance: Instance, routes: Sequence[Sequence[int]], size: int = 600, margin: int = 30, title: str | None = None) -> str:
    """One closed path per non-empty route through the depot, over labelled nodes.

    Colours cycle through a fixed 10-colour palette by route index. Output
    bytes depend only on the inputs.
    """
    n = instance.n
    for r in routes:
        for c in r:
            if not (isinstance(c, Integral) and not isinstance(c, bool) and 0 <= c < n):
                raise ValueError(f"route references unknown node {c!r}")
    xs = [node.x for node in instance.nodes]
    ys = [node.y for node in instance.nodes]
    x0, y0 = min(xs), min(ys)
    span = max(max(xs) - x0, max(ys) - y0, 1e-9)
    scale = (size - 2 * margin) / span

    def at(k: int) -> tuple[str, str]:
        node = instance.nodes[k]
        # SVG y grows downward
        return _fmt(margin + (node.x - x0) * scale), _fmt(size - margin - (node.y - y0) * scale)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<title>{escape(title)}</title>')
    for idx, route in enumerate(routes):
        if not route:
            continue
        pts = [at(k) for k in (0, *route)]
        d = "M " + " L ".join(f"{x} {y}" for x, y in pts) + " Z"
        color = PALETTE[idx % len(PALETTE)]
        out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="2" data-truck="{idx}"/>')
    for k in range(n):
        x, y = at(k)
        if k == 0:
            out.append(f'<rect x="{_fmt(float(x) - 6)}" y="{_fmt(float(y) - 6)}" width="12" height="12" fill="black"/>')
        else:
            out.append(f'<circle cx="{x}" cy="{y}" r="4" fill="white" stroke="black"/>')
        out.append(f'<text x="{_fmt(float(x) + 6)}" y="{_fmt(float(y) - 6)}" font-size="10" font-family="sans-serif">{k}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
