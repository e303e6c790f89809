"""Deterministic synthetic data for tests and demos.

Random draws come from a Philox (counter-based) generator keyed by the
seed, so fixtures are reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .grid import EmbeddingSet, GridSpec, MeaningField, MeasureField, build_grid

AFFINE_A = np.array([[3.0, 0.0], [0.0, 2.0]])

ANALYTIC_NAMES = ("identity", "affine", "parabola", "sine")


def make_analytic_meaning(name: str, spec: GridSpec) -> MeaningField:
    """Closed-form meaning maps sampled at cell centers.

    identity: ``h = z``; affine: ``h = A z`` with ``A = diag(3, 2)``;
    parabola: ``h = (z1, z2, z1^2)``; sine: ``h = (sin z1, cos z2)``.
    """
    z = spec.cell_centers()
    z1, z2 = z[..., 0], z[..., 1]
    if name == "identity":
        h = z
    elif name == "affine":
        h = z @ AFFINE_A.T
    elif name == "parabola":
        h = np.stack([z1, z2, z1 * z1], axis=-1)
    elif name == "sine":
        h = np.stack([np.sin(z1), np.cos(z2)], axis=-1)
    else:
        raise InputError(f"unknown analytic map {name!r}; choose from {', '.join(ANALYTIC_NAMES)}")
    return MeaningField(spec, h)


def squash_map(z: np.ndarray, a: float) -> np.ndarray:
    """Radial squashing ``z / (1 + a |z|)``; maps the plane into the disk of radius ``1/a``."""
    z = np.asarray(z, dtype=np.float64)
    r = np.sqrt((z * z).sum(axis=-1, keepdims=True))
    return z / (1.0 + a * r)


def unsquash_map(w: np.ndarray, a: float) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    r = np.sqrt((w * w).sum(axis=-1, keepdims=True))
    return w / (1.0 - a * r)


def inverse_squash_measure(w: np.ndarray, a: float, r_cap: float | None = None) -> np.ndarray:
    """Magnification factor of the inverse squash at points ``w``.

    The inverse stretches radially by ``(1 - a r)^-2`` and tangentially by
    ``(1 - a r)^-1``, so the area factor is ``(1 - a r)^-3``. Radii are
    clamped to ``r_cap`` (default: just inside the disk edge).
    """
    w = np.asarray(w, dtype=np.float64)
    r = np.sqrt((w * w).sum(axis=-1))
    cap = (1.0 - 1e-6) / a if r_cap is None else r_cap
    r = np.minimum(r, cap)
    return (1.0 - a * r) ** -3


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))


def mixture_centers(classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Blob centers and widths of the undistorted mixture.

    Blobs sit evenly spaced on a line through the origin, 3 units apart
    with width 0.5. Squashing compresses the outer blobs toward the rim
    much more than the inner ones, so their separation shrinks unevenly.
    """
    k = np.arange(classes, dtype=np.float64)
    x = 3.0 * (k - (classes - 1) / 2.0)
    centers = np.stack([x, np.zeros_like(x)], axis=1)
    sigmas = np.full(classes, 0.5)
    return centers, sigmas


def make_distorted_mixture(
    n_per_class: int,
    classes: int,
    squash: float,
    seed: int,
    grid_n: int = 128,
    pad_fraction: float = 0.05,
) -> tuple[EmbeddingSet, MeasureField, GridSpec]:
    """Squashed Gaussian blobs plus the measure that undoes the squash.

    Returns the squashed, labelled embeddings, the analytic magnification
    factor of the inverse squash sampled on a ``grid_n x grid_n`` grid over
    the data (radii beyond the outermost point are clamped to it), and that
    grid.
    """
    if not 2 <= classes <= 8:
        raise InputError(f"classes must be in [2, 8], got {classes}")
    if not squash > 1:
        raise InputError(f"squash must be > 1, got {squash}")
    if int(n_per_class) != n_per_class or n_per_class < 1:
        raise InputError(f"n_per_class must be a positive integer, got {n_per_class}")
    rng = _rng(seed)
    centers, sigmas = mixture_centers(classes)
    raw = []
    labels = []
    for c in range(classes):
        raw.append(centers[c] + sigmas[c] * rng.standard_normal((n_per_class, 2)))
        labels += [str(c)] * n_per_class
    pts = squash_map(np.concatenate(raw), squash)
    E = EmbeddingSet(pts, tuple(labels))
    spec = build_grid(E, grid_n, grid_n, pad_fraction)
    r_cap = float(np.sqrt((pts * pts).sum(axis=1)).max())
    m = inverse_squash_measure(spec.cell_centers(), squash, r_cap)
    return E, MeasureField(spec, m), spec


def make_bump_density(spec: GridSpec, centers, sigmas, amplitudes, background: float = 1.0) -> MeasureField:
    """``background + sum_k a_k exp(-|z - c_k|^2 / (2 s_k^2))`` at cell centers."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    sigmas = np.asarray(sigmas, dtype=np.float64).reshape(-1)
    amplitudes = np.asarray(amplitudes, dtype=np.float64).reshape(-1)
    if not (len(centers) == len(sigmas) == len(amplitudes)):
        raise InputError("centers, sigmas and amplitudes must have the same length")
    if np.any(sigmas <= 0):
        raise InputError("bump widths must be positive")
    z = spec.cell_centers()
    out = np.full(spec.shape, float(background))
    for c, s, a in zip(centers, sigmas, amplitudes):
        out = out + a * np.exp(-((z - c) ** 2).sum(axis=-1) / (2.0 * s * s))
    return MeasureField(spec, out)


def make_peaked_bump(spec: GridSpec, peak_to_mean: float = 5.0, sigma_frac: float = 0.1, center=None) -> MeasureField:
    """Single Gaussian bump on a unit background, scaled so ``max / mean == peak_to_mean``.

    ``sigma_frac`` is the bump width as a fraction of the grid's longer side.
    """
    if center is None:
        center = ((spec.min_1 + spec.max_1) / 2, (spec.min_2 + spec.max_2) / 2)
    sigma = sigma_frac * max(spec.max_1 - spec.min_1, spec.max_2 - spec.min_2)
    unit = make_bump_density(spec, [center], [sigma], [1.0], background=0.0).values
    denom = unit.max() - peak_to_mean * unit.mean()
    if not peak_to_mean > 1 or denom <= 0:
        raise InputError(f"peak_to_mean={peak_to_mean} is not reachable with this bump width")
    amp = (peak_to_mean - 1.0) / denom
    return make_bump_density(spec, [center], [sigma], [amp], background=1.0)
