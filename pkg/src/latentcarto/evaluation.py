"""Quantitative evaluation: embedding entropy, clustering F1, classifier fields."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import log_softmax

from .cartogram import (
    DiffusionParams,
    TransformField,
    cell_density_after,
    floored_density,
    transformed_cell_areas,
    weighted_cv,
)
from .errors import InputError
from .grid import EmbeddingSet, GridSpec, MeaningField, MeasureField


class ConvergenceWarning(UserWarning):
    pass


def histogram_entropy(E: EmbeddingSet, bins_per_axis: int = 64) -> float:
    """Shannon entropy (nats) of a square histogram over the data bounding box."""
    if len(E) == 0:
        raise InputError("entropy of an empty embedding set is undefined")
    if int(bins_per_axis) != bins_per_axis or bins_per_axis < 1:
        raise InputError(f"bins_per_axis must be a positive integer, got {bins_per_axis}")
    pts = E.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0) + 1e-9
    counts, _, _ = np.histogram2d(
        pts[:, 0], pts[:, 1], bins=int(bins_per_axis), range=[[lo[0], hi[0]], [lo[1], hi[1]]]
    )
    p = counts[counts > 0] / len(pts)
    return float(-(p * np.log(p)).sum())


# k-means ---------------------------------------------------------------------


def _stream(seed: int, restart: int) -> np.random.Generator:
    # counter-based generator keyed by (seed, restart): restarts are independent
    key = np.array([seed, restart], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(x: np.ndarray, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300):
    """Lloyd's k-means with k-means++ seeding; best inertia over restarts.

    Returns ``(assignments, centers, inertia)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if k < 1 or k > len(x):
        raise InputError(f"k must be in [1, {len(x)}], got {k}")
    if restarts < 1:
        raise InputError(f"restarts must be >= 1, got {restarts}")
    best = None
    for r in range(restarts):
        centers = _kmeans_pp(x, k, _stream(seed, r))
        assign = np.argmin(_sq_dists(x, centers), axis=1)
        for _ in range(max_iter):
            new_centers = centers.copy()
            for c in range(k):
                members = assign == c
                if members.any():
                    new_centers[c] = x[members].mean(axis=0)
            centers = new_centers
            new_assign = np.argmin(_sq_dists(x, centers), axis=1)
            if np.array_equal(new_assign, assign):
                break
            assign = new_assign
        inertia = float(((x - centers[assign]) ** 2).sum())
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia)
    return best


def macro_f1(true_labels, predicted_labels) -> float:
    """Macro-averaged F1 over the classes present in ``true_labels``."""
    true_labels = list(true_labels)
    predicted_labels = list(predicted_labels)
    scores = []
    for c in sorted(set(true_labels)):
        tp = sum(1 for t, p in zip(true_labels, predicted_labels) if t == c and p == c)
        n_pred = sum(1 for p in predicted_labels if p == c)
        n_true = sum(1 for t in true_labels if t == c)
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / n_pred
        recall = tp / n_true
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def kmeans_f1(E: EmbeddingSet, k: int | None = None, seed: int = 0, restarts: int = 10):
    """Cluster, label each cluster by its majority class, and score macro F1.

    Majority ties go to the lexicographically smallest label. Returns
    ``(f1, assignments)``.
    """
    if not E.has_labels:
        raise InputError("kmeans_f1 needs labelled embeddings")
    classes = E.classes()
    k = len(classes) if k is None else int(k)
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if k > len(E):
        raise InputError(f"k={k} exceeds the number of points ({len(E)})")
    assign, _, _ = kmeans(E.points, k, seed=seed, restarts=restarts)
    lab_idx = np.array([classes.index(lbl) for lbl in E.labels])
    cluster_label = {}
    for c in range(k):
        members = lab_idx[assign == c]
        if len(members):
            counts = np.bincount(members, minlength=len(classes))
            cluster_label[c] = classes[int(np.argmax(counts))]
    predicted = [cluster_label[c] for c in assign]
    return macro_f1(E.labels, predicted), assign


# classifier field ------------------------------------------------------------


def quadratic_features(u: np.ndarray) -> np.ndarray:
    """``(1, u1, u2, u1^2, u1 u2, u2^2)`` per row."""
    u1, u2 = u[:, 0], u[:, 1]
    return np.stack([np.ones_like(u1), u1, u2, u1 * u1, u1 * u2, u2 * u2], axis=1)


@dataclass
class QuadraticSoftmax:
    """Multinomial logistic regression on quadratic features of grid-normalised coordinates.

    Coordinates are mapped to ``[-1, 1]`` over the grid bounds before the
    feature map; the L2 penalty applies to all but the intercept row.
    """

    classes: list
    center: np.ndarray
    scale: np.ndarray
    weights: np.ndarray
    iterations: int = 0
    converged: bool = False
    loss_history: list = field(default_factory=list)

    def features(self, z: np.ndarray) -> np.ndarray:
        return quadratic_features((np.asarray(z, dtype=np.float64) - self.center) / self.scale)

    def predict_proba(self, z: np.ndarray) -> np.ndarray:
        return np.exp(log_softmax(self.features(z) @ self.weights, axis=1))


def _loss_grad(W, X, Y, l2):
    logp = log_softmax(X @ W, axis=1)
    reg = W.copy()
    reg[0] = 0.0
    loss = -(Y * logp).sum() + 0.5 * l2 * (reg * reg).sum()
    grad = X.T @ (np.exp(logp) - Y) + l2 * reg
    return loss, grad


def fit_classifier(
    E: EmbeddingSet, spec: GridSpec, l2_penalty: float = 1.0, max_iters: int = 5000, grad_tol: float = 1e-6
) -> QuadraticSoftmax:
    """Full-batch gradient descent with Armijo backtracking."""
    if not E.has_labels:
        raise InputError("the classifier needs labelled embeddings")
    classes = E.classes()
    if len(classes) < 2:
        raise InputError("the classifier needs at least two classes")
    if not l2_penalty >= 0:
        raise InputError(f"l2_penalty must be >= 0, got {l2_penalty}")
    center = np.array([(spec.min_1 + spec.max_1) / 2, (spec.min_2 + spec.max_2) / 2])
    scale = np.array([(spec.max_1 - spec.min_1) / 2, (spec.max_2 - spec.min_2) / 2])
    model = QuadraticSoftmax(classes, center, scale, np.zeros((6, len(classes))))
    X = model.features(E.points)
    Y = np.zeros((len(E), len(classes)))
    Y[np.arange(len(E)), [classes.index(lbl) for lbl in E.labels]] = 1.0

    W = model.weights
    loss, grad = _loss_grad(W, X, Y, l2_penalty)
    model.loss_history.append(loss)
    step = 1.0
    it = 0
    while True:
        gnorm2 = float((grad * grad).sum())
        if np.sqrt(gnorm2) <= grad_tol:
            model.converged = True
            break
        if it >= max_iters:
            break
        # Armijo backtracking; a stalled search means we are at round-off level
        while step > 1e-300:
            W_try = W - step * grad
            loss_try, grad_try = _loss_grad(W_try, X, Y, l2_penalty)
            if loss_try <= loss - 1e-4 * step * gnorm2:
                break
            step *= 0.5
        else:
            break
        W, loss, grad = W_try, loss_try, grad_try
        model.loss_history.append(loss)
        it += 1
        step *= 2.0
    model.weights = W
    model.iterations = it
    if not model.converged:
        warnings.warn(
            f"classifier did not reach gradient norm {grad_tol} in {max_iters} iterations "
            f"(final {np.sqrt((grad * grad).sum()):.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return model


def fit_classifier_field(
    E: EmbeddingSet, spec: GridSpec, l2_penalty: float = 1.0, max_iters: int = 5000
) -> MeaningField:
    """Class probabilities ``p(c|z)`` at every cell center (classes in sorted order)."""
    model = fit_classifier(E, spec, l2_penalty, max_iters)
    probs = model.predict_proba(spec.cell_centers().reshape(-1, 2))
    return MeaningField(spec, probs.reshape(spec.n_1, spec.n_2, -1), is_distribution=True)


# report ----------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    entropy_before: float
    entropy_after: float
    f1_before: float | None
    f1_after: float | None
    cv_before: float
    cv_after: float
    area_ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


def equalization_report(
    m: MeasureField,
    T: TransformField,
    E_before: EmbeddingSet,
    E_after: EmbeddingSet,
    bins: int = 64,
    seed: int = 0,
    restarts: int = 10,
    k: int | None = None,
    floor_rel: float = DiffusionParams.density_floor_rel,
) -> EvalReport:
    """Before/after comparison of embedding spread, clustering and density uniformity.

    F1 entries are None when the embeddings carry no labels.
    """
    if m.spec != T.spec:
        raise InputError("measure and transform live on different grids")
    areas = transformed_cell_areas(T)
    after = cell_density_after(m, T, floor_rel)
    f1_before = f1_after = None
    if E_before.has_labels and E_after.has_labels:
        f1_before, _ = kmeans_f1(E_before, k=k, seed=seed, restarts=restarts)
        f1_after, _ = kmeans_f1(E_after, k=k, seed=seed, restarts=restarts)
    return EvalReport(
        entropy_before=histogram_entropy(E_before, bins),
        entropy_after=histogram_entropy(E_after, bins),
        f1_before=f1_before,
        f1_after=f1_after,
        cv_before=weighted_cv(floored_density(m, floor_rel)),
        cv_after=weighted_cv(after.values, areas),
        area_ratio=float(areas.sum() / (m.spec.cell_area * m.spec.n_1 * m.spec.n_2)),
    )
