"""Distortion measures over a meaning tensor, and their post-processing.

Two families are provided:

* the approximate Riemannian measure ``sqrt(det(J^T J))`` from a
  finite-difference Jacobian of the meaning field, and
* heuristic measures: the mean dissimilarity between a cell's meaning
  vector and those of its 4-connected neighbours, for a choice of
  dissimilarity (Jensen-Shannon distance, Euclidean, cosine).

All logarithms are natural, so the Jensen-Shannon distance is bounded by
``sqrt(ln 2)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.spatial import cKDTree
from scipy.special import rel_entr

from .errors import InputError
from .grid import DIST_TOL, EmbeddingSet, MeaningField, MeasureField

JSD_MAX = float(np.sqrt(np.log(2.0)))


class DissimilarityKind(str, enum.Enum):
    JSD = "jsd"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


@dataclass(frozen=True)
class JacobianAtCell:
    i: int
    j: int
    J: np.ndarray  # (dh, 2); columns are d/dz_1, d/dz_2
    M: np.ndarray  # (2, 2) metric tensor J^T J


def jacobian_field(H: MeaningField) -> np.ndarray:
    """Finite-difference Jacobian at every cell, shape ``(n_1, n_2, dh, 2)``.

    Central differences in the interior, first-order one-sided differences
    on the boundary rows/columns.
    """
    spec = H.spec
    d1 = np.gradient(H.values, spec.dz_1, axis=0, edge_order=1)
    d2 = np.gradient(H.values, spec.dz_2, axis=1, edge_order=1)
    return np.stack([d1, d2], axis=-1)


def finite_diff_jacobian(H: MeaningField, i: int, j: int) -> JacobianAtCell:
    spec = H.spec
    if not (0 <= i < spec.n_1 and 0 <= j < spec.n_2):
        raise InputError(f"cell index ({i}, {j}) out of range for grid {spec.shape}")
    cols = []
    for axis, (k, n, dz) in enumerate(((i, spec.n_1, spec.dz_1), (j, spec.n_2, spec.dz_2))):
        lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        if axis == 0:
            a, b = H.values[lo, j], H.values[hi, j]
        else:
            a, b = H.values[i, lo], H.values[i, hi]
        cols.append((b - a) / ((hi - lo) * dz))
    J = np.stack(cols, axis=1)
    M = J.T @ J
    M = 0.5 * (M + M.T)
    return JacobianAtCell(i, j, J, M)


def riemannian_measure(H: MeaningField) -> MeasureField:
    """Per-cell ``sqrt(det(J^T J))``; round-off negative determinants clamp to 0.

    For ``dh == 1`` the metric has rank at most one and the measure is 0.
    """
    J = jacobian_field(H)
    a = J[..., 0]
    b = J[..., 1]
    m11 = np.einsum("ijk,ijk->ij", a, a)
    m22 = np.einsum("ijk,ijk->ij", b, b)
    m12 = np.einsum("ijk,ijk->ij", a, b)
    det = m11 * m22 - m12 * m12
    return MeasureField(H.spec, np.sqrt(np.maximum(det, 0.0)))


def _as_distributions(p: np.ndarray) -> np.ndarray:
    if p.min(initial=0.0) < -DIST_TOL:
        raise InputError("probability vectors must be entrywise non-negative")
    s = p.sum(axis=-1, keepdims=True)
    if np.any(np.abs(s - 1.0) > DIST_TOL):
        raise InputError(f"probability vectors must sum to 1 within {DIST_TOL}")
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


def _jsd(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    m = 0.5 * (p + q)
    div = 0.5 * rel_entr(p, m).sum(axis=-1) + 0.5 * rel_entr(q, m).sum(axis=-1)
    return np.minimum(np.sqrt(np.maximum(div, 0.0)), JSD_MAX)


def jsd_distance(p, q) -> float:
    """Jensen-Shannon distance between two probability vectors (natural log)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise InputError(f"jsd_distance needs two vectors of equal length, got {p.shape} and {q.shape}")
    return float(_jsd(_as_distributions(p), _as_distributions(q)))


def _euclidean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a - b) ** 2).sum(axis=-1))


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # zero vectors: distance 0 to another zero vector, 1 to anything else
    na = np.sqrt((a * a).sum(axis=-1))
    nb = np.sqrt((b * b).sum(axis=-1))
    dot = (a * b).sum(axis=-1)
    both = (na > 0) & (nb > 0)
    out = np.where((na == 0) & (nb == 0), 0.0, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.clip(dot / (na * nb), -1.0, 1.0)
    return np.where(both, np.maximum(1.0 - sim, 0.0), out)


def pairwise_dissimilarity(a: np.ndarray, b: np.ndarray, kind) -> np.ndarray:
    kind = DissimilarityKind(kind)
    if kind is DissimilarityKind.JSD:
        return _jsd(a, b)
    if kind is DissimilarityKind.EUCLIDEAN:
        return _euclidean(a, b)
    return _cosine(a, b)


def heuristic_measure(H: MeaningField, d="jsd") -> MeasureField:
    """Mean dissimilarity of each cell to its 4-connected neighbours."""
    kind = DissimilarityKind(d)
    vals = H.values
    if kind is DissimilarityKind.JSD:
        if not H.is_distribution:
            raise InputError("jsd dissimilarity needs a distribution meaning field")
        vals = vals / vals.sum(axis=-1, keepdims=True)
    along1 = pairwise_dissimilarity(vals[:-1], vals[1:], kind)
    along2 = pairwise_dissimilarity(vals[:, :-1], vals[:, 1:], kind)
    total = np.zeros(H.spec.shape)
    count = np.zeros(H.spec.shape)
    total[:-1] += along1
    total[1:] += along1
    total[:, :-1] += along2
    total[:, 1:] += along2
    count[:-1] += 1
    count[1:] += 1
    count[:, :-1] += 1
    count[:, 1:] += 1
    return MeasureField(H.spec, total / count)


def classifier_measure(P: MeaningField) -> MeasureField:
    """Jensen-Shannon measure over a field of class probabilities ``p(c|z)``."""
    return heuristic_measure(P, DissimilarityKind.JSD)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.floor(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(m: MeasureField, sigma_cells: float) -> MeasureField:
    """Separable Gaussian blur truncated at 4 sigma.

    Near the boundary the kernel is renormalised over the in-bounds taps,
    so constant fields pass through unchanged.
    """
    if not sigma_cells >= 0:
        raise InputError(f"blur sigma must be >= 0, got {sigma_cells}")
    if sigma_cells == 0:
        return m
    k = gaussian_kernel(sigma_cells)
    out = np.array(m.values)
    weight = np.ones_like(out)
    for axis in (0, 1):
        out = correlate1d(out, k, axis=axis, mode="constant", cval=0.0)
        weight = correlate1d(weight, k, axis=axis, mode="constant", cval=0.0)
    return MeasureField(m.spec, np.maximum(out / weight, 0.0))


def relax_to_mean(m: MeasureField, embeddings: EmbeddingSet, sigma_relax: float) -> MeasureField:
    """Blend the measure toward its grid mean with distance from the data.

    The weight on the original value is ``exp(-d^2 / (2 sigma^2))`` where
    ``d`` is the distance from the cell center to the nearest embedding.
    """
    if len(embeddings) == 0:
        raise InputError("relaxation needs a non-empty embedding set")
    if not sigma_relax > 0:
        raise InputError(f"relaxation sigma must be > 0, got {sigma_relax}")
    centers = m.spec.cell_centers().reshape(-1, 2)
    d, _ = cKDTree(embeddings.points).query(centers, k=1)
    w = np.exp(-0.5 * (d / sigma_relax) ** 2).reshape(m.spec.shape)
    mean = m.values.mean()
    out = w * m.values + (1.0 - w) * mean
    out = np.clip(out, np.minimum(m.values, mean), np.maximum(m.values, mean))
    return MeasureField(m.spec, out)
