"""SVG renderings of measures, embeddings, paths and equidistance lines.

Output is plain SVG 1.1 text with fixed number formatting, so the same
inputs always produce the same bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .contours import marching_squares
from .errors import InputError
from .grid import EmbeddingSet, MeasureField

LAYERS = ("heatmap", "contours", "paths", "scatter")

RAMPS = {
    "red": (200, 0, 0),
    "black": (0, 0, 0),
    "blue": (20, 60, 200),
    "green": (0, 120, 40),
}

PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)

PATH_COLORS = ("#000000", "#d00000", "#0050c0", "#008040")


@dataclass(frozen=True)
class RenderSpec:
    width: int = 800
    height: int = 800
    contrast: str = "linear"
    colormap: str = "red"
    layers: tuple = LAYERS
    contour_levels: tuple = ()

    def __post_init__(self):
        if self.width < 64 or self.height < 64:
            raise InputError(f"canvas must be at least 64x64, got {self.width}x{self.height}")
        if self.contrast not in ("linear", "sqrt"):
            raise InputError(f"contrast must be 'linear' or 'sqrt', got {self.contrast!r}")
        if self.colormap not in RAMPS:
            raise InputError(f"unknown colormap {self.colormap!r}; choose from {', '.join(RAMPS)}")
        bad = [name for name in self.layers if name not in LAYERS]
        if bad:
            raise InputError(f"unknown layers {bad}")
        levels = tuple(float(v) for v in self.contour_levels)
        if any(v <= 0 for v in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
            raise InputError("contour levels must be positive and strictly increasing")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "contour_levels", levels)


def contrast_map(values: np.ndarray, contrast: str) -> np.ndarray:
    """Normalise to ``[0, 1]`` by the maximum, then apply the contrast curve."""
    vmax = float(values.max()) if values.size else 0.0
    if vmax <= 0:
        return np.zeros_like(values, dtype=np.float64)
    v = np.clip(values / vmax, 0.0, 1.0)
    return np.sqrt(v) if contrast == "sqrt" else v


def ramp_color(level: float, colormap: str) -> str:
    r, g, b = RAMPS[colormap]
    c = [int(round(255 + (t - 255) * level)) for t in (r, g, b)]
    return "#{:02x}{:02x}{:02x}".format(*c)


def label_colors(labels) -> dict:
    return {lbl: PALETTE[k % len(PALETTE)] for k, lbl in enumerate(sorted(set(labels)))}


def _fmt(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Canvas:
    def __init__(self, bounds, width: int, height: int):
        (self.x0, self.x1), (self.y0, self.y1) = bounds
        self.w = width
        self.h = height

    def px(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        x = (pts[:, 0] - self.x0) / (self.x1 - self.x0) * self.w
        y = (self.y1 - pts[:, 1]) / (self.y1 - self.y0) * self.h
        return np.stack([x, y], axis=1)


def _block_mean(values: np.ndarray, b1: int, b2: int) -> np.ndarray:
    n1, n2 = values.shape
    m1, m2 = -(-n1 // b1), -(-n2 // b2)
    padded = np.full((m1 * b1, m2 * b2), np.nan)
    padded[:n1, :n2] = values
    return np.nanmean(padded.reshape(m1, b1, m2, b2), axis=(1, 3))


def _heatmap(measure: MeasureField, canvas: _Canvas, spec: RenderSpec) -> list[str]:
    g = measure.spec
    b1 = max(1, -(-g.n_1 // canvas.w))
    b2 = max(1, -(-g.n_2 // canvas.h))
    vals = _block_mean(measure.values, b1, b2) if (b1 > 1 or b2 > 1) else measure.values
    levels = contrast_map(vals, spec.contrast)
    out = ['<g id="heatmap" shape-rendering="crispEdges">']
    for i in range(vals.shape[0]):
        x0 = g.min_1 + i * b1 * g.dz_1
        x1 = min(g.min_1 + (i + 1) * b1 * g.dz_1, g.max_1)
        for j in range(vals.shape[1]):
            y0 = g.min_2 + j * b2 * g.dz_2
            y1 = min(g.min_2 + (j + 1) * b2 * g.dz_2, g.max_2)
            (px0, py1), (px1, py0) = canvas.px(np.array([[x0, y1], [x1, y0]]))
            out.append(
                f'<rect x="{_fmt(px0)}" y="{_fmt(py1)}" width="{_fmt(px1 - px0)}" '
                f'height="{_fmt(py0 - py1)}" fill="{ramp_color(levels[i, j], spec.colormap)}"/>'
            )
    out.append("</g>")
    return out


def _polyline(pts: np.ndarray, stroke: str, width: float, closed: bool = False) -> str:
    coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
    tag = "polygon" if closed else "polyline"
    return f'<{tag} points="{coords}" fill="none" stroke="{stroke}" stroke-width="{_fmt(width)}"/>'


def _contours(dist: MeasureField, canvas: _Canvas, spec: RenderSpec) -> list[str]:
    out = ['<g id="contours">']
    for level in spec.contour_levels:
        for pts, closed in marching_squares(dist.spec, dist.values, level):
            if len(pts) < 2:
                continue
            ring = pts[:-1] if closed else pts
            out.append(_polyline(canvas.px(ring), "#404040", 0.8, closed))
    out.append("</g>")
    return out


def _paths(paths, canvas: _Canvas) -> list[str]:
    out = ['<g id="paths">']
    for k, p in enumerate(paths):
        out.append(_polyline(canvas.px(p.points), PATH_COLORS[k % len(PATH_COLORS)], 2.0))
    out.append("</g>")
    return out


def _scatter(E: EmbeddingSet, canvas: _Canvas) -> list[str]:
    xy = canvas.px(E.points)
    colors = label_colors(E.labels) if E.has_labels else None
    out = ['<g id="scatter">']
    for k, (x, y) in enumerate(xy):
        fill = colors[E.labels[k]] if colors else "#303030"
        out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="1.5" fill="{fill}"/>')
    out.append("</g>")
    return out


def _view_bounds(measure, embeddings, paths, dist):
    for fld in (measure, dist):
        if fld is not None:
            return fld.spec.bounds
    pts = []
    if embeddings is not None and len(embeddings):
        pts.append(embeddings.points)
    for p in paths or ():
        pts.append(p.points)
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - 0.05 * span, hi + 0.05 * span
    return ((float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1])))


def render_scene(
    measure: MeasureField | None = None,
    embeddings: EmbeddingSet | None = None,
    paths=None,
    dist: MeasureField | None = None,
    spec: RenderSpec | None = None,
) -> str:
    """Compose the requested layers into one SVG document.

    Layers without data are skipped; at least one must be drawable.
    """
    spec = spec or RenderSpec()
    if measure is not None and dist is not None and measure.spec != dist.spec:
        raise InputError("measure and distance field live on different grids")
    available = {
        "heatmap": measure is not None,
        "contours": dist is not None and bool(spec.contour_levels),
        "paths": bool(paths),
        "scatter": embeddings is not None and len(embeddings) > 0,
    }
    drawn = [name for name in spec.layers if available[name]]
    if not drawn:
        raise InputError("nothing to render: no requested layer has data")
    canvas = _Canvas(_view_bounds(measure, embeddings, paths, dist), spec.width, spec.height)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{spec.width}" '
        f'height="{spec.height}" viewBox="0 0 {spec.width} {spec.height}">',
        f'<rect x="0" y="0" width="{spec.width}" height="{spec.height}" fill="#ffffff"/>',
        f"<desc>{escape('layers: ' + ', '.join(drawn))}</desc>",
    ]
    for name in drawn:
        if name == "heatmap":
            lines += _heatmap(measure, canvas, spec)
        elif name == "contours":
            lines += _contours(dist, canvas, spec)
        elif name == "paths":
            lines += _paths(paths, canvas)
        else:
            lines += _scatter(embeddings, canvas)
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
