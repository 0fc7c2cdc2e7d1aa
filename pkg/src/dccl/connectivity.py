"""Intra-class connectivity scoring of embedding dumps.

Per class we treat embeddings as nodes of a proximity graph whose edges
appear once the pairwise distance falls at or below a threshold.  The
smallest threshold that connects the graph equals the maximum edge of
the Euclidean minimum spanning tree, and the reported score is
(tau - mu) / sigma over the pairwise-distance multiset: lower means the
class is better connected relative to its own spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EmbeddingRecord:
    sample_id: int
    class_id: int
    domain_id: int
    vector: np.ndarray


@dataclass(frozen=True)
class GroupScore:
    """Connectivity row for one class (or one class/domain pair)."""

    class_id: int
    domain_id: int | None
    count: int
    tau: float | None
    mu: float | None
    sigma: float | None
    score: float | None

    @property
    def defined(self):
        return self.score is not None


@dataclass(frozen=True)
class ConnectivityReport:
    mode: str
    rows: tuple
    mean_score: float | None
    max_score: float | None


def _distance_matrix(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def pairwise_stats(points):
    """Mean and population std of the k(k-1)/2 pairwise Euclidean distances."""
    points = np.asarray(points, dtype=np.float64)
    k = len(points)
    if k < 2:
        raise ValueError("pairwise_stats needs at least 2 points")
    dm = _distance_matrix(points)
    iu = np.triu_indices(k, 1)
    dists = dm[iu]
    return float(dists.mean()), float(dists.std()), len(dists)


def connecting_threshold(points):
    """Smallest threshold connecting the proximity graph (edges at distance
    <= threshold), computed as the maximum edge of the dense-graph MST."""
    points = np.asarray(points, dtype=np.float64)
    k = len(points)
    if k < 2:
        raise ValueError("connecting_threshold needs at least 2 points")
    dm = _distance_matrix(points)
    # Prim's algorithm on the dense distance matrix, O(k^2).
    visited = np.zeros(k, dtype=bool)
    visited[0] = True
    best = dm[0].copy()
    best[0] = np.inf
    tau = 0.0
    for _ in range(k - 1):
        best_masked = np.where(visited, np.inf, best)
        j = int(np.argmin(best_masked))
        tau = max(tau, float(best_masked[j]))
        visited[j] = True
        best = np.minimum(best, dm[j])
    return tau


def _score_group(class_id, domain_id, points):
    count = len(points)
    if count < 2:
        return GroupScore(class_id, domain_id, count, None, None, None, None)
    mu, sigma, _ = pairwise_stats(points)
    tau = connecting_threshold(points)
    if sigma == 0.0:
        return GroupScore(class_id, domain_id, count, tau, mu, sigma, None)
    return GroupScore(class_id, domain_id, count, tau, mu, sigma, (tau - mu) / sigma)


def connectivity_report(records, mode="pooled"):
    """Score every class of an embedding dump.

    mode "pooled" gathers each class across all domains (the default:
    cross-domain connectivity is exactly what the score is after);
    mode "per-domain" scores each class/domain pair separately.
    Groups with fewer than 2 points, or zero distance spread, are marked
    undefined and excluded from the mean/max aggregates.
    """
    records = list(records)
    if not records:
        raise ValueError("empty embedding dump")
    if mode not in ("pooled", "per-domain"):
        raise ValueError(f"unknown connectivity mode {mode!r}")
    dims = {r.vector.shape for r in records}
    if len(dims) != 1:
        raise ValueError(f"embedding dump mixes dimensions: {sorted(dims)}")
    rows = []
    if mode == "pooled":
        for class_id in sorted({r.class_id for r in records}):
            pts = np.array([r.vector for r in records if r.class_id == class_id])
            rows.append(_score_group(class_id, None, pts))
    else:
        keys = sorted({(r.class_id, r.domain_id) for r in records})
        for class_id, domain_id in keys:
            pts = np.array([
                r.vector for r in records
                if r.class_id == class_id and r.domain_id == domain_id
            ])
            rows.append(_score_group(class_id, domain_id, pts))
    defined = [r.score for r in rows if r.defined]
    mean_score = float(np.mean(defined)) if defined else None
    max_score = float(np.max(defined)) if defined else None
    return ConnectivityReport(mode=mode, rows=tuple(rows),
                              mean_score=mean_score, max_score=max_score)


def intra_class_variance(vectors, class_ids):
    """Mean over classes of the total within-class variance (trace of the
    class covariance); the quantity contrastive alignment should shrink."""
    vectors = np.asarray(vectors, dtype=np.float64)
    class_ids = np.asarray(class_ids)
    variances = []
    for c in np.unique(class_ids):
        pts = vectors[class_ids == c]
        if len(pts) < 2:
            continue
        centered = pts - pts.mean(axis=0)
        variances.append(float(np.mean(np.sum(centered * centered, axis=1))))
    if not variances:
        raise ValueError("no class with at least 2 samples")
    return float(np.mean(variances))
