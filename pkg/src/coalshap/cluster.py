"""Clustering and 2-D projection of subject-wise Shapley vectors.

Estimators follow the scikit-learn fit/predict/transform convention so they
compose with sklearn pipelines; thin functional wrappers are provided for the
rest of the toolkit. K-means seeding hashes point coordinates so results do
not depend on input row order.
"""

from __future__ import annotations

import hashlib

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin

from .errors import SingleCluster, TooFewPoints


def check_points(X, min_points=1, name="points"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n_points, n_dims), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} must be finite")
    if X.shape[0] < min_points:
        raise TooFewPoints(f"need >= {min_points} {name}, got {X.shape[0]}")
    return X


def _canonical_order(X):
    """Order independent of how the rows were supplied: sort by coordinate hash."""
    digests = [hashlib.sha256(np.ascontiguousarray(row).tobytes()).digest() for row in X]
    return sorted(range(X.shape[0]), key=lambda i: (digests[i], i))


def _sq_dist_to_centers(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


class ShapleyKMeans(ClusterMixin, BaseEstimator):
    """Lloyd's k-means with k-means++ seeding over hash-ordered points.

    Empty clusters are re-seeded to the point farthest from its assigned
    center. Inertia is non-increasing across iterations.
    """

    def __init__(self, k=2, seed=0, max_iter=300, tol=1e-9):
        self.k = k
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def _init_centers(self, Xc, rng):
        n = Xc.shape[0]
        centers = np.empty((self.k, Xc.shape[1]))
        centers[0] = Xc[rng.integers(n)]
        for c in range(1, self.k):
            d2 = _sq_dist_to_centers(Xc, centers[:c]).min(axis=1)
            total = d2.sum()
            if total == 0:
                centers[c] = Xc[rng.integers(n)]
                continue
            target = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
            centers[c] = Xc[min(idx, n - 1)]
        return centers

    def fit(self, X, y=None):
        if self.k < 1 or self.max_iter < 1:
            raise ValueError("k and max_iter must be >= 1")
        X = check_points(X, min_points=self.k)
        order = _canonical_order(X)
        Xc = X[order]  # canonical view used for all seeding decisions
        rng = np.random.default_rng(self.seed)
        centers = self._init_centers(Xc, rng)
        inertia = np.inf
        for _ in range(self.max_iter):
            d2 = _sq_dist_to_centers(Xc, centers)
            labels = d2.argmin(axis=1)
            new_centers = centers.copy()
            for c in range(self.k):
                assigned = Xc[labels == c]
                if assigned.shape[0] == 0:
                    farthest = int(d2[np.arange(Xc.shape[0]), labels].argmax())
                    new_centers[c] = Xc[farthest]
                else:
                    new_centers[c] = assigned.mean(axis=0)
            shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
            centers = new_centers
            if shift < self.tol:
                break
        d2 = _sq_dist_to_centers(Xc, centers)
        labels_canonical = d2.argmin(axis=1)
        inertia = float(d2[np.arange(Xc.shape[0]), labels_canonical].sum())
        labels = np.empty(X.shape[0], dtype=int)
        labels[order] = labels_canonical
        self.cluster_centers_ = centers
        self.labels_ = labels
        self.inertia_ = inertia
        return self

    def predict(self, X):
        X = check_points(X)
        return _sq_dist_to_centers(X, self.cluster_centers_).argmin(axis=1)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_


class PlanarProjection(TransformerMixin, BaseEstimator):
    """Deterministic 2-D PCA: top-2 covariance eigenvectors with a fixed sign rule."""

    def fit(self, X, y=None):
        X = check_points(X, min_points=2)
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / (X.shape[0] - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        top = np.argsort(eigvals)[::-1][:2]
        components = []
        variances = []
        for idx in top:
            vec = eigvecs[:, idx]
            pivot = int(np.argmax(np.abs(vec)))
            if vec[pivot] < 0:
                vec = -vec
            components.append(vec)
            variances.append(max(float(eigvals[idx]), 0.0))
        while len(components) < 2:  # 1-D input edge case
            components.append(np.zeros(X.shape[1]))
            variances.append(0.0)
        self.components_ = np.vstack(components)
        self.explained_variance_ = np.array(variances)
        total = float(np.clip(eigvals, 0.0, None).sum())
        self.explained_variance_ratio_ = (
            self.explained_variance_ / total if total > 0 else np.zeros(2)
        )
        if total == 0:
            self.components_ = np.zeros_like(self.components_)  # rank-0: all to origin
        return self

    def transform(self, X):
        X = check_points(X)
        return (X - self.mean_) @ self.components_.T


def kmeans(points, k, seed=0, max_iter=300, tol=1e-9):
    est = ShapleyKMeans(k=k, seed=seed, max_iter=max_iter, tol=tol).fit(points)
    return est.labels_, est.cluster_centers_, est.inertia_


def silhouette(points, labels) -> float:
    """Mean Euclidean silhouette; identical a==b==0 pairs score 0."""
    X = check_points(points, min_points=2)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise SingleCluster(f"silhouette needs >= 2 clusters, got {uniq.size}")
    dist = np.sqrt(_sq_dist_to_centers(X, X))
    scores = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        same = labels == labels[i]
        n_same = same.sum()
        if n_same == 1:
            scores[i] = 0.0
            continue
        a = dist[i, same].sum() / (n_same - 1)
        b = min(dist[i, labels == other].mean() for other in uniq if other != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def pca2(points) -> np.ndarray:
    est = PlanarProjection().fit(points)
    return est.transform(np.asarray(points, dtype=float))
