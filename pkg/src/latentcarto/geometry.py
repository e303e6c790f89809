"""Paths, lengths and distance fields in the transformed latent space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cartogram import TransformField, forward_map, inverse_map
from .errors import InputError, OutOfDomainError
from .grid import EmbeddingSet, MeasureField


@dataclass(frozen=True)
class LatentPath:
    """A path given by its latent points and their transformed images."""

    points: np.ndarray
    images: np.ndarray
    length: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        imgs = np.array(self.images, dtype=np.float64)
        if pts.shape != imgs.shape or pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise InputError("a path needs >= 2 points with one image per point")
        pts.setflags(write=False)
        imgs.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "length", float(self.length))

    @property
    def cumulative(self) -> np.ndarray:
        """Cumulative Euclidean length along the images, starting at 0."""
        seg = np.sqrt((np.diff(self.images, axis=0) ** 2).sum(axis=1))
        return np.concatenate([[0.0], np.cumsum(seg)])


def _point(z, name: str) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise InputError(f"{name} must be a finite 2-D point")
    return z


def pseudo_geodesic(T: TransformField, z_a, z_b, n_points: int = 64) -> LatentPath:
    """Straight segment between the images of ``z_a`` and ``z_b``, pulled back.

    Samples are evenly spaced in the transformed space. The first and last
    latent points are the exact inputs rather than their reconstructions.
    """
    if int(n_points) != n_points or n_points < 2:
        raise InputError(f"n_points must be an integer >= 2, got {n_points}")
    z_a = _point(z_a, "z_a")
    z_b = _point(z_b, "z_b")
    ends = forward_map(T, np.stack([z_a, z_b]))
    u = np.linspace(0.0, 1.0, int(n_points))[:, None]
    images = ends[0] + (ends[1] - ends[0]) * u
    images[0] = ends[0]
    images[-1] = ends[1]
    try:
        pts = inverse_map(T, images)
    except OutOfDomainError as exc:
        raise OutOfDomainError(
            f"pseudo-geodesic sample {exc.indices[0]} of {n_points} leaves the transformed mesh",
            indices=exc.indices,
        ) from exc
    pts[0] = z_a
    pts[-1] = z_b
    return LatentPath(pts, images, float(np.linalg.norm(ends[1] - ends[0])))


def straight_path(T: TransformField, z_a, z_b, n_points: int = 64) -> LatentPath:
    """Straight segment in latent space, with its (curved) image."""
    z_a = _point(z_a, "z_a")
    z_b = _point(z_b, "z_b")
    u = np.linspace(0.0, 1.0, int(n_points))[:, None]
    pts = z_a + (z_b - z_a) * u
    pts[-1] = z_b
    images = forward_map(T, pts)
    path = LatentPath(pts, images, 0.0)
    return LatentPath(pts, images, float(path.cumulative[-1]))


def transformed_path_length(T: TransformField, pts) -> float:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    img = forward_map(T, pts)
    return float(np.sqrt((np.diff(img, axis=0) ** 2).sum(axis=1)).sum())


def distance_field(T: TransformField, z_0) -> MeasureField:
    """Distance in the transformed space from ``z_0`` to every cell center."""
    z_0 = _point(z_0, "z_0")
    origin = forward_map(T, z_0)
    d = np.sqrt(((T.positions - origin) ** 2).sum(axis=-1))
    return MeasureField(T.spec, d)


def transform_embeddings(T: TransformField, E: EmbeddingSet) -> EmbeddingSet:
    inside = T.spec.contains(E.points)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)
        shown = ", ".join(str(k) for k in bad[:10])
        more = "" if len(bad) <= 10 else f" and {len(bad) - 10} more"
        raise OutOfDomainError(f"points outside the transform grid at indices {shown}{more}", indices=bad)
    if len(E) == 0:
        return E
    return EmbeddingSet(forward_map(T, E.points), E.labels)


def inverse_transform_embeddings(T: TransformField, E: EmbeddingSet) -> EmbeddingSet:
    if len(E) == 0:
        return E
    return EmbeddingSet(inverse_map(T, E.points), E.labels)
