"""Grid geometry, field containers and interpolation primitives.

Every field in the library lives on a :class:`GridSpec`: an axis-aligned,
uniform rectangular grid over the 2-D latent space. Cell ``(i, j)`` is
0-based with axis 1 outermost (row-major), and its center sits at
``(min_1 + (i + 0.5) * dz_1, min_2 + (j + 0.5) * dz_2)``.

Interpolation happens between cell *centers*. In the half-cell margin
between the outermost centers and the grid edge the lattice is clamped,
so values are extrapolated as constants toward the edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputError, OutOfDomainError

#: smallest allowed cell count per axis
MIN_CELLS = 2

#: tolerance for the probability-vector checks on distribution fields
DIST_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GridSpec:
    """Uniform rectangular grid over latent space."""

    min_1: float
    max_1: float
    min_2: float
    max_2: float
    n_1: int
    n_2: int

    def __post_init__(self):
        for name in ("min_1", "max_1", "min_2", "max_2"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InputError(f"grid bound {name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        for name in ("n_1", "n_2"):
            n = getattr(self, name)
            if int(n) != n or int(n) < MIN_CELLS:
                raise InputError(f"{name} must be an integer >= {MIN_CELLS}, got {n}")
            object.__setattr__(self, name, int(n))
        if not self.max_1 > self.min_1 or not self.max_2 > self.min_2:
            raise InputError(
                f"grid bounds must satisfy max > min, got "
                f"[{self.min_1}, {self.max_1}] x [{self.min_2}, {self.max_2}]"
            )

    @classmethod
    def from_bounds(cls, bounds, shape) -> "GridSpec":
        (a1, b1), (a2, b2) = bounds
        return cls(a1, b1, a2, b2, shape[0], shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_1, self.n_2)

    @property
    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return ((self.min_1, self.max_1), (self.min_2, self.max_2))

    @property
    def dz_1(self) -> float:
        return (self.max_1 - self.min_1) / self.n_1

    @property
    def dz_2(self) -> float:
        return (self.max_2 - self.min_2) / self.n_2

    @property
    def cell_widths(self) -> np.ndarray:
        return np.array([self.dz_1, self.dz_2])

    @property
    def mins(self) -> np.ndarray:
        return np.array([self.min_1, self.min_2])

    @property
    def cell_area(self) -> float:
        return self.dz_1 * self.dz_2

    def axis_centers(self) -> tuple[np.ndarray, np.ndarray]:
        c1 = self.min_1 + (np.arange(self.n_1) + 0.5) * self.dz_1
        c2 = self.min_2 + (np.arange(self.n_2) + 0.5) * self.dz_2
        return c1, c2

    def cell_centers(self) -> np.ndarray:
        """All cell centers as an ``(n_1, n_2, 2)`` array."""
        c1, c2 = self.axis_centers()
        out = np.empty((self.n_1, self.n_2, 2))
        out[..., 0] = c1[:, None]
        out[..., 1] = c2[None, :]
        return out

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return (
            (pts[:, 0] >= self.min_1)
            & (pts[:, 0] <= self.max_1)
            & (pts[:, 1] >= self.min_2)
            & (pts[:, 1] <= self.max_2)
        )

    def cell_index(self, pts) -> np.ndarray:
        """Integer ``(i, j)`` of the cell containing each point.

        Points on the upper edge belong to the last cell.
        """
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        _check_inside(self, pts)
        u = np.floor((pts - self.mins) / self.cell_widths).astype(np.int64)
        u[:, 0] = np.clip(u[:, 0], 0, self.n_1 - 1)
        u[:, 1] = np.clip(u[:, 1], 0, self.n_2 - 1)
        return u


@dataclass(frozen=True)
class MeaningField:
    """Per-cell meaning vectors ``H`` with shape ``(n_1, n_2, dh)``."""

    spec: GridSpec
    values: np.ndarray
    is_distribution: bool = False

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim == 2:
            vals = _frozen(vals[..., None])
        if vals.ndim != 3 or vals.shape[:2] != self.spec.shape or vals.shape[2] < 1:
            raise InputError(
                f"meaning values must have shape {self.spec.shape + ('dh',)}, got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InputError("meaning values must be finite")
        if self.is_distribution:
            check_distributions(vals)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "is_distribution", bool(self.is_distribution))

    @property
    def dh(self) -> int:
        return self.values.shape[2]


def check_distributions(vals: np.ndarray) -> None:
    """Raise unless every vector along the last axis is a probability vector."""
    if vals.min(initial=0.0) < -DIST_TOL:
        raise InputError("distribution vectors must be entrywise non-negative")
    sums = vals.sum(axis=-1)
    bad = np.abs(sums - 1.0) > DIST_TOL
    if np.any(bad):
        where = tuple(int(k) for k in np.argwhere(bad)[0])
        raise InputError(
            f"distribution vectors must sum to 1 within {DIST_TOL}; "
            f"cell {where} sums to {sums[where]!r}"
        )


@dataclass(frozen=True)
class MeasureField:
    """Non-negative scalar field with shape ``(n_1, n_2)``."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != self.spec.shape:
            raise InputError(f"measure values must have shape {self.spec.shape}, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InputError("measure values must be finite")
        if vals.min() < 0:
            raise InputError(f"measure values must be >= 0, min is {vals.min()!r}")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class EmbeddingSet:
    """Latent points ``(N, 2)`` with optional per-point class labels."""

    points: np.ndarray
    labels: tuple | None = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InputError(f"points must have shape (N, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != len(pts):
                raise InputError(
                    f"got {len(labels)} labels for {len(pts)} points; need exactly one per point"
                )
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def classes(self) -> list:
        if self.labels is None:
            raise InputError("embedding set has no labels")
        return sorted(set(self.labels))


def build_grid(embeddings: EmbeddingSet, n_1: int, n_2: int, pad_fraction: float = 0.0) -> GridSpec:
    """Grid covering the bounding box of ``embeddings``.

    Each side is pushed out by ``pad_fraction`` times the box side length.
    A zero-width side is first widened to 1, centered on the data.
    """
    if len(embeddings) == 0:
        raise InputError("cannot build a grid from an empty embedding set")
    if not pad_fraction >= 0:
        raise InputError(f"pad_fraction must be >= 0, got {pad_fraction}")
    lo = embeddings.points.min(axis=0)
    hi = embeddings.points.max(axis=0)
    bounds = []
    for a, b in zip(lo, hi):
        a, b = float(a), float(b)
        if b - a == 0:
            a, b = a - 0.5, b + 0.5
        side = b - a
        bounds.append((a - pad_fraction * side, b + pad_fraction * side))
    return GridSpec.from_bounds(bounds, (n_1, n_2))


def cell_center(spec: GridSpec, i: int, j: int) -> tuple[float, float]:
    if not (0 <= i < spec.n_1 and 0 <= j < spec.n_2):
        raise InputError(f"cell index ({i}, {j}) out of range for grid {spec.shape}")
    return (spec.min_1 + (i + 0.5) * spec.dz_1, spec.min_2 + (j + 0.5) * spec.dz_2)


def _check_inside(spec: GridSpec, pts: np.ndarray) -> None:
    inside = spec.contains(pts)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)
        raise OutOfDomainError(
            f"{len(bad)} point(s) outside grid bounds {spec.bounds}, "
            f"first at index {bad[0]}: {tuple(pts[bad[0]])}",
            indices=bad,
        )


def lattice_coords(spec: GridSpec, pts: np.ndarray):
    """Base lattice index and fractional offsets for bilinear weights.

    Returns ``(i0, j0, s, t)`` so that the point interpolates between
    centers ``(i0, j0)`` and ``(i0 + 1, j0 + 1)`` with weights from
    ``s, t`` in ``[0, 1]``; the half-cell margin is clamped.
    """
    u = (pts[:, 0] - spec.min_1) / spec.dz_1 - 0.5
    v = (pts[:, 1] - spec.min_2) / spec.dz_2 - 0.5
    u = np.clip(u, 0.0, spec.n_1 - 1)
    v = np.clip(v, 0.0, spec.n_2 - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), spec.n_1 - 2)
    j0 = np.minimum(np.floor(v).astype(np.int64), spec.n_2 - 2)
    return i0, j0, u - i0, v - j0


def interpolate(values: np.ndarray, spec: GridSpec, pts) -> np.ndarray:
    """Bilinear interpolation of a ``(n_1, n_2[, d])`` array at ``(N, 2)`` points."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    _check_inside(spec, pts)
    i0, j0, s, t = lattice_coords(spec, pts)
    if values.ndim == 3:
        s = s[:, None]
        t = t[:, None]
    return (
        (1 - s) * (1 - t) * values[i0, j0]
        + s * (1 - t) * values[i0 + 1, j0]
        + (1 - s) * t * values[i0, j0 + 1]
        + s * t * values[i0 + 1, j0 + 1]
    )


def bilinear_sample(fld, z) -> np.ndarray:
    """Sample any grid field (measure, meaning or transform) at latent point(s).

    ``z`` may be a single point ``(2,)`` or an array ``(N, 2)``; the leading
    shape of the result follows ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    out = interpolate(fld.values, fld.spec, z.reshape(-1, 2))
    return out[0] if single else out


def aggregate_samples_to_grid(
    samples: Iterable[tuple[Sequence[float], Sequence[float]]],
    spec: GridSpec,
    distribution: bool = False,
) -> tuple[MeaningField, np.ndarray]:
    """Average sampled meaning vectors per cell.

    Returns the field and a boolean ``(n_1, n_2)`` mask that is True where
    a cell had no samples and was filled from its nearest sampled cell
    (index-space Euclidean distance, ties to the smallest ``(i, j)``).
    """
    samples = list(samples)
    if not samples:
        raise InputError("no samples to aggregate")
    zs = np.array([np.asarray(z, dtype=np.float64) for z, _ in samples]).reshape(-1, 2)
    dims = {len(np.atleast_1d(h)) for _, h in samples}
    if len(dims) != 1:
        raise InputError(f"samples have mixed meaning dimensions {sorted(dims)}")
    hs = np.array([np.atleast_1d(np.asarray(h, dtype=np.float64)) for _, h in samples])
    idx = spec.cell_index(zs)
    flat = idx[:, 0] * spec.n_2 + idx[:, 1]

    # canonical summation order makes the result independent of sample order
    order = np.lexsort(tuple(hs.T[::-1]) + (flat,))
    flat, hs = flat[order], hs[order]
    ncell = spec.n_1 * spec.n_2
    sums = np.zeros((ncell, hs.shape[1]))
    np.add.at(sums, flat, hs)
    counts = np.bincount(flat, minlength=ncell)
    filled = counts > 0
    sums[filled] /= counts[filled][:, None]

    empty = np.flatnonzero(~filled)
    if empty.size:
        src = _nearest_filled(spec, np.flatnonzero(filled), empty)
        sums[empty] = sums[src]
    values = sums.reshape(spec.n_1, spec.n_2, -1)
    mask = (~filled).reshape(spec.shape)
    return MeaningField(spec, values, is_distribution=distribution), mask


def _nearest_filled(spec: GridSpec, filled: np.ndarray, empty: np.ndarray) -> np.ndarray:
    n2 = spec.n_2
    fij = np.stack([filled // n2, filled % n2], axis=1)
    eij = np.stack([empty // n2, empty % n2], axis=1)
    tree = cKDTree(fij)
    k = min(16, len(filled))
    _, cand = tree.query(eij, k=k)
    cand = cand.reshape(len(empty), k)
    d2 = ((fij[cand] - eij[:, None, :]) ** 2).sum(axis=2)
    best = d2.min(axis=1)
    # candidates sorted by distance only; break exact ties by row-major index
    tie_idx = np.where(d2 == best[:, None], filled[cand], np.iinfo(np.int64).max)
    out = tie_idx.min(axis=1)
    overflow = (d2[:, -1] == best) & (k < len(filled))
    for r in np.flatnonzero(overflow):
        d2_all = ((fij - eij[r]) ** 2).sum(axis=1)
        out[r] = filled[np.flatnonzero(d2_all == d2_all.min())[0]]
    return out
