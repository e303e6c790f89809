"""Marching squares over a field sampled at grid cell centers.

Segments are stitched into polylines through shared lattice edges, so no
floating-point point matching is involved. Ambiguous saddle squares are
resolved by comparing the mean of the four corners with the level.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .grid import GridSpec


def _edge_point(spec: GridSpec, values: np.ndarray, key, level: float) -> tuple[float, float]:
    kind, i, j = key
    i2, j2 = (i + 1, j) if kind == "a" else (i, j + 1)
    va, vb = values[i, j], values[i2, j2]
    f = 0.5 if vb == va else (level - va) / (vb - va)
    x = spec.min_1 + (i + 0.5 + f * (i2 - i)) * spec.dz_1
    y = spec.min_2 + (j + 0.5 + f * (j2 - j)) * spec.dz_2
    return (x, y)


def _segments(values: np.ndarray, level: float):
    n1, n2 = values.shape
    above = values > level
    segs = []
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            b0, b1, b2, b3 = above[i, j], above[i + 1, j], above[i + 1, j + 1], above[i, j + 1]
            if b0 == b1 == b2 == b3:
                continue
            e0 = ("a", i, j)
            e1 = ("b", i + 1, j)
            e2 = ("a", i, j + 1)
            e3 = ("b", i, j)
            crossing = [e for e, hit in ((e0, b0 != b1), (e1, b1 != b2), (e2, b2 != b3), (e3, b3 != b0)) if hit]
            if len(crossing) == 2:
                segs.append((crossing[0], crossing[1]))
                continue
            # saddle: b0 == b2 != b1 == b3
            mean = 0.25 * (values[i, j] + values[i + 1, j] + values[i + 1, j + 1] + values[i, j + 1])
            if (mean > level) == b0:
                segs.append((e0, e1))
                segs.append((e2, e3))
            else:
                segs.append((e3, e0))
                segs.append((e1, e2))
    return segs


def marching_squares(spec: GridSpec, values: np.ndarray, level: float) -> list[tuple[np.ndarray, bool]]:
    """Iso-lines of ``values`` at ``level`` in latent coordinates.

    Returns ``(points, closed)`` pairs; open polylines end on the boundary
    of the center lattice.
    """
    values = np.asarray(values, dtype=np.float64)
    segs = _segments(values, level)
    adj = defaultdict(list)
    for k, (a, b) in enumerate(segs):
        adj[a].append(k)
        adj[b].append(k)
    used = np.zeros(len(segs), dtype=bool)

    def walk(start_edge, first_seg):
        chain = [start_edge]
        edge, seg = start_edge, first_seg
        while seg is not None:
            used[seg] = True
            a, b = segs[seg]
            edge = b if a == edge else a
            chain.append(edge)
            seg = next((s for s in adj[edge] if not used[s]), None)
        return chain

    lines = []
    # open chains start at edges touched by a single segment
    for edge in sorted(adj):
        if len(adj[edge]) == 1 and not used[adj[edge][0]]:
            lines.append((walk(edge, adj[edge][0]), False))
    for k in range(len(segs)):
        if not used[k]:
            chain = walk(segs[k][0], k)
            lines.append((chain, chain[0] == chain[-1]))
    out = []
    for chain, closed in lines:
        pts = np.array([_edge_point(spec, values, e, level) for e in chain])
        out.append((pts, closed))
    return out
