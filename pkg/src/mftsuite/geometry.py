"""Dimension reduction and k-means clustering of embedding matrices.

The built-in reducer is plain PCA (mean-centered SVD with a fixed sign
convention). Externally computed coordinates (e.g. from a manifold
projection run elsewhere) can be imported from CSV instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import LabeledCorpus
from .embedding import EmbeddingMatrix

log = logging.getLogger(__name__)

REDUCE_METHODS = ("pca", "external_import")


@dataclass
class ReducedMatrix:
    ids: list[str]
    coords: np.ndarray  # (n, r) float64
    method: str
    seed: int = 0
    explained_variance: np.ndarray | None = None

    @property
    def r(self) -> int:
        return int(self.coords.shape[1])

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, r)
    assignments: dict[str, int]
    inertia: float
    seed: int
    iterations_run: int
    inertia_trace: list[float] = field(default_factory=list)

    def members(self, cluster: int) -> list[str]:
        return [i for i, c in self.assignments.items() if c == cluster]


@dataclass
class ClusterStat:
    cluster: int
    size: int
    label_counts: dict[int, int]
    majority_label: int
    majority_label_count: int
    majority_category: str
    majority_category_count: int
    majority_category_share: float

    def label_share(self, label: int) -> float:
        return self.label_counts.get(label, 0) / self.size


@dataclass
class ClusterStats:
    clusters: list[ClusterStat]

    def total(self) -> int:
        return sum(c.size for c in self.clusters)


def reduce(m: EmbeddingMatrix, target_dims: int, method: str = "pca",
           seed: int = 0, source: str | Path | None = None) -> ReducedMatrix:
    """Project an embedding matrix down to target_dims coordinates.

    pca: projection onto the top principal components of the mean-centered
    data, components ordered by descending explained variance, sign fixed so
    each component's largest-magnitude entry is positive. external_import:
    coordinates loaded verbatim from a CSV and dimension-checked against
    target_dims.
    """
    if method not in REDUCE_METHODS:
        raise ValueError(f"unknown reduction method: {method}")
    if method == "external_import":
        if source is None:
            raise ValueError("external_import requires a coordinates file")
        rm = import_coords(source)
        if rm.r != target_dims:
            raise ValueError(
                f"imported coordinates have {rm.r} dims, expected {target_dims}")
        if set(rm.ids) != set(m.ids):
            raise ValueError("imported coordinate ids do not match matrix ids")
        rm.seed = seed
        return rm

    if target_dims < 1 or target_dims > m.dim:
        raise ValueError(f"target_dims must be in [1, {m.dim}]")
    if len(m) < 2:
        raise ValueError("pca needs at least 2 points")

    x = np.asarray(m.vectors, dtype=np.float64)
    centered = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if not np.any(s > 0):
        log.warning("pca: zero-variance data, coordinates set to zero")
        coords = np.zeros((len(m), target_dims))
        return ReducedMatrix(ids=list(m.ids), coords=coords, method="pca", seed=seed,
                             explained_variance=np.zeros(target_dims))

    # Sign convention for reproducibility across LAPACK builds.
    for j in range(vt.shape[0]):
        pivot = int(np.argmax(np.abs(vt[j])))
        if vt[j, pivot] < 0:
            vt[j] = -vt[j]

    available = min(target_dims, vt.shape[0])
    coords = centered @ vt[:available].T
    variance = (s[:available] ** 2) / max(len(m) - 1, 1)
    if available < target_dims:
        pad = target_dims - available
        coords = np.hstack([coords, np.zeros((len(m), pad))])
        variance = np.concatenate([variance, np.zeros(pad)])
    return ReducedMatrix(ids=list(m.ids), coords=coords, method="pca", seed=seed,
                         explained_variance=variance)


def import_coords(path: str | Path) -> ReducedMatrix:
    """Load coordinates from a CSV with header id,c1..cr."""
    path = Path(path)
    ids: list[str] = []
    rows: list[list[float]] = []
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "id":
            raise ValueError(f"bad coordinates header in {path}")
        r = len(header) - 1
        if r < 1:
            raise ValueError("coordinates file has no coordinate columns")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != r + 1:
                raise ValueError(f"row width mismatch in {path}: {line[:80]}")
            ids.append(parts[0])
            rows.append([float(p) for p in parts[1:]])
    coords = np.asarray(rows, dtype=np.float64).reshape(len(ids), r)
    return ReducedMatrix(ids=ids, coords=coords, method="external_import")


def export_coords(rm: ReducedMatrix, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("id," + ",".join(f"c{i + 1}" for i in range(rm.r)) + "\n")
        for item_id, row in zip(rm.ids, rm.coords):
            fh.write(item_id + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid labels (ties to the lowest index) and squared distances."""
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(x)), labels]


def _repair_empty(x, centroids, labels, d2, k):
    """Re-seed each empty cluster's centroid at the point currently farthest
    from its assigned centroid, then reassign."""
    for c in range(k):
        if np.any(labels == c):
            continue
        worst = int(np.argmax(d2))
        centroids = centroids.copy()
        centroids[c] = x[worst]
        labels, d2 = _assign(x, centroids)
    return centroids, labels, d2


def kmeans(rm: ReducedMatrix, k: int, seed: int, max_iters: int = 300,
           tol: float = 1e-4) -> ClusterModel:
    """Lloyd's k-means with seeded k-means++ initialization.

    Iterates until the relative inertia improvement drops below tol or
    max_iters is reached. Deterministic for fixed (input, k, seed).
    """
    n = len(rm)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points n={n}")
    x = np.asarray(rm.coords, dtype=np.float64)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(x, k, rng)

    trace: list[float] = []
    prev_inertia: float | None = None
    labels = np.zeros(n, dtype=int)
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        labels, d2 = _assign(x, centroids)
        centroids, labels, d2 = _repair_empty(x, centroids, labels, d2, k)
        inertia = float(d2.sum())
        trace.append(inertia)
        if prev_inertia is not None:
            if prev_inertia == 0.0 or (prev_inertia - inertia) < tol * prev_inertia:
                converged = True
                break
        prev_inertia = inertia
        for c in range(k):
            centroids[c] = x[labels == c].mean(axis=0)
    if not converged:
        # Loop exhausted after a centroid update; realign assignments.
        labels, d2 = _assign(x, centroids)
        centroids, labels, d2 = _repair_empty(x, centroids, labels, d2, k)
        trace.append(float(d2.sum()))

    assignments = {item_id: int(c) for item_id, c in zip(rm.ids, labels)}
    return ClusterModel(k=k, centroids=centroids, assignments=assignments,
                        inertia=trace[-1], seed=seed, iterations_run=iterations,
                        inertia_trace=trace)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def cluster_stats(model: ClusterModel, corpus: LabeledCorpus) -> ClusterStats:
    """Per-cluster size, label mix, and majority product-category share."""
    docs = {d.id: d for d in corpus.documents}
    missing = [i for i in docs if i not in model.assignments]
    if missing:
        raise ValueError(f"corpus ids missing from cluster assignments: {missing[:5]}")
    extra = [i for i in model.assignments if i not in docs]
    if extra:
        raise ValueError(f"assignment ids missing from corpus: {extra[:5]}")

    stats = []
    for c in range(model.k):
        member_ids = [i for i, a in model.assignments.items() if a == c]
        labels: dict[int, int] = {}
        categories: dict[str, int] = {}
        for i in member_ids:
            doc = docs[i]
            labels[doc.label] = labels.get(doc.label, 0) + 1
            categories[doc.category] = categories.get(doc.category, 0) + 1
        if not member_ids:
            raise ValueError(f"cluster {c} is empty")
        maj_label = max(sorted(labels), key=lambda l: labels[l])
        maj_cat = max(sorted(categories), key=lambda g: categories[g])
        stats.append(ClusterStat(
            cluster=c,
            size=len(member_ids),
            label_counts=labels,
            majority_label=maj_label,
            majority_label_count=labels[maj_label],
            majority_category=maj_cat,
            majority_category_count=categories[maj_cat],
            majority_category_share=categories[maj_cat] / len(member_ids),
        ))
    result = ClusterStats(clusters=stats)
    if result.total() != len(corpus.documents):
        raise ValueError("cluster sizes do not sum to corpus size")
    return result


def silhouette_sweep(rm: ReducedMatrix, ks: list[int], seed: int,
                     max_iters: int = 300, tol: float = 1e-4) -> dict[int, float]:
    """Mean silhouette score per candidate k, for choosing a cluster count."""
    x = np.asarray(rm.coords, dtype=np.float64)
    n = len(x)
    dists = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2))
    scores: dict[int, float] = {}
    for k in ks:
        if k < 2 or k > n - 1:
            continue
        model = kmeans(rm, k, seed, max_iters=max_iters, tol=tol)
        labels = np.array([model.assignments[i] for i in rm.ids])
        sil = np.zeros(n)
        for i in range(n):
            same = labels == labels[i]
            same[i] = False
            a = dists[i, same].mean() if same.any() else 0.0
            b = min(dists[i, labels == c].mean()
                    for c in range(k) if c != labels[i] and np.any(labels == c))
            sil[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
        scores[k] = float(sil.mean())
    return scores
