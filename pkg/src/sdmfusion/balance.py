"""Count and country balancing: cluster-stratified oversampling, class
weights and the log1p target transform."""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .covariates import covariate_matrix
from .occurrence import CellSample

logger = logging.getLogger(__name__)

# (low, high) inclusive; high=None is open-ended
DEFAULT_COUNT_BINS = ((1, 10), (11, 40), (41, 100), (101, None))


@dataclass(frozen=True)
class ClassWeights:
    weights: Mapping[str, float]

    def __post_init__(self):
        for k, w in self.weights.items():
            if not w > 0:
                raise ValueError(f"weight for {k} must be positive, got {w}")

    def __getitem__(self, country: str) -> float:
        return self.weights[country]

    def for_samples(self, countries: Sequence[str]) -> np.ndarray:
        return np.array([self.weights[c] for c in countries], dtype=float)


def class_weights(samples: Sequence[CellSample]) -> ClassWeights:
    """Per-country loss weight ``N_total / N_x * C`` (C = countries present)."""
    if not samples:
        raise ValueError("class_weights needs at least one sample")
    counts = Counter(s.country for s in samples)
    n_total = sum(counts.values())
    n_classes = len(counts)
    return ClassWeights({c: n_total / n * n_classes for c, n in sorted(counts.items())})


# -- K-means -----------------------------------------------------------------

@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list[float]
    n_iter: int


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def kmeans(X: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 0.0) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    ``inertia_history[i]`` is the within-cluster sum of squares after the
    i-th assignment step; it never increases. An emptied cluster is
    re-seeded at the point that currently contributes most to the inertia.
    """
    X = np.asarray(X, dtype=float)
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    closest = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centroids[j] = X[idx]
        closest = np.minimum(closest, ((X - centroids[j]) ** 2).sum(axis=1))

    history: list[float] = []
    labels = np.zeros(n, dtype=int)
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centroids)
        labels = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), labels]
        history.append(float(point_cost.sum()))
        new = centroids.copy()
        taken: set[int] = set()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
            else:
                order = np.argsort(-point_cost, kind="stable")
                far = next(i for i in order if i not in taken)
                taken.add(far)
                new[j] = X[far]
        shift = float(((new - centroids) ** 2).sum())
        centroids = new
        if shift <= tol:
            break

    d = _sq_dists(X, centroids)
    labels = np.argmin(d, axis=1)
    inertia = float(d[np.arange(n), labels].sum())
    return KMeansResult(centroids, labels, inertia, history, it)


# -- adaptive oversampling ----------------------------------------------------

@dataclass(frozen=True)
class OversampleConfig:
    n_clusters: int = 8
    target_per_bin: int | None = None  # None: size of the most frequent bin
    count_bins: tuple[tuple[int, int | None], ...] = field(default=DEFAULT_COUNT_BINS)
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError(f"n_clusters must be >= 1, got {self.n_clusters}")
        if self.target_per_bin is not None and self.target_per_bin < 1:
            raise ValueError(f"target_per_bin must be >= 1, got {self.target_per_bin}")
        prev_high = None
        for i, (lo, hi) in enumerate(self.count_bins):
            if hi is not None and hi < lo:
                raise ValueError(f"bin {(lo, hi)} is reversed")
            if i and (prev_high is None or lo <= prev_high):
                raise ValueError("count bins must be disjoint and ordered")
            prev_high = hi


def bin_index(count: int, bins) -> int:
    """Index of the bin holding ``count`` or -1."""
    for i, (lo, hi) in enumerate(bins):
        if count >= lo and (hi is None or count <= hi):
            return i
    return -1


def bin_frequencies(samples: Sequence[CellSample], bins=DEFAULT_COUNT_BINS) -> list[int]:
    freq = [0] * len(bins)
    for s in samples:
        b = bin_index(s.count, bins)
        if b >= 0:
            freq[b] += 1
    return freq


def _standardize(X: np.ndarray) -> np.ndarray:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def _cluster_representatives(members: list[CellSample], n_clusters: int, seed: int) -> list[int]:
    """Round-robin over clusters, nearest-to-centroid first, no repeats."""
    X, _ = covariate_matrix(m.covariates for m in members)
    Z = _standardize(X)
    k = n_clusters
    if k > len(members):
        warnings.warn(f"n_clusters={k} exceeds minority size {len(members)}; using k={len(members)}",
                      RuntimeWarning, stacklevel=3)
        k = len(members)
    km = kmeans(Z, k, seed=seed)
    queues = []
    for j in range(k):
        idx = np.flatnonzero(km.labels == j)
        d = ((Z[idx] - km.centroids[j]) ** 2).sum(axis=1)
        queues.append(list(idx[np.argsort(d, kind="stable")]))
    order = []
    while any(queues):
        for q in queues:
            if q:
                order.append(int(q.pop(0)))
    return order


def adaptive_oversample(samples: Sequence[CellSample],
                        cfg: OversampleConfig = OversampleConfig()) -> list[CellSample]:
    """Grow under-represented count bins with cluster-stratified copies.

    For each non-empty bin below the target, K-means is run on the
    standardized covariates of that bin's samples and representatives are
    drawn from the clusters in turn, nearest to the centroid first, until
    the bin reaches the target or every member has been used once. Each
    original sample therefore appears at most twice in the output. Samples
    outside all bins (e.g. zero-count pseudo-absences) pass through.

    Returns:
        The input samples followed by the appended copies, which carry
        ``origin="oversampled"``.
    """
    samples = list(samples)
    if len(samples) < cfg.n_clusters:
        raise ValueError(f"need at least n_clusters={cfg.n_clusters} samples, got {len(samples)}")
    bins = cfg.count_bins
    freq = bin_frequencies(samples, bins)
    target = cfg.target_per_bin if cfg.target_per_bin is not None else max(freq)
    appended: list[CellSample] = []
    for b, f in enumerate(freq):
        deficit = target - f
        if f == 0 or deficit <= 0:
            continue
        members = [s for s in samples if bin_index(s.count, bins) == b]
        if any(m.covariates is None for m in members):
            raise ValueError("oversampling needs covariates attached to every sample")
        order = _cluster_representatives(members, cfg.n_clusters, cfg.seed + b)
        picks = order[:deficit]
        logger.info("bin %s: %d samples, target %d, appending %d", bins[b], f, target, len(picks))
        appended.extend(replace(members[i], origin="oversampled") for i in picks)
    return samples + appended


# -- log transform -------------------------------------------------------------

def log_transform(y):
    """ln(1 + y); rejects negative input."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("log_transform needs non-negative input")
    out = np.log1p(arr)
    return float(out) if out.ndim == 0 else out


def inverse_log_transform(y):
    out = np.expm1(np.asarray(y, dtype=float))
    return float(out) if out.ndim == 0 else out
