"""K-means over embeddings, pseudo-labels and m-nearest representative selection."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .dataio import Image
from .rng import stream


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray        # (k, d)
    labels: np.ndarray           # (n,) int
    objective: float             # sum of (unsquared) distances to assigned centroids
    sse_history: tuple[float, ...]  # Lloyd objective after each assignment step
    n_iter: int
    k_clamped: bool = False


@dataclass(frozen=True, eq=False)
class SelectedSet:
    client_id: int
    indices: tuple[int, ...]                 # positions in the client dataset, ascending
    z: tuple[Image, ...]                     # pixelized images only
    y: tuple[int, ...]
    per_cluster: tuple[tuple[int, ...], ...]  # provenance: indices picked for each centroid

    def __len__(self) -> int:
        return len(self.indices)

    def pixels(self) -> np.ndarray:
        return np.stack([im.pixels for im in self.z])

    def labels(self) -> np.ndarray:
        return np.asarray(self.y, dtype=np.int64)


def _as2d(points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def assign_pseudo_labels(embeddings, centroids) -> np.ndarray:
    """Nearest centroid by Euclidean distance; exact ties go to the lowest cluster index."""
    x, c = _as2d(embeddings), _as2d(centroids)
    if x.shape[1] != c.shape[1]:
        raise ValueError("embedding and centroid dimensions differ")
    return np.argmin(kernels.sq_dists(x, c), axis=1).astype(np.int64)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = kernels.sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        tot = d2.sum()
        if tot > 0:
            nxt = int(rng.choice(n, p=d2 / tot))
        else:
            nxt = next(i for i in range(n) if i not in chosen)
        chosen.append(nxt)
        d2 = np.minimum(d2, kernels.sq_dists(x, x[nxt:nxt + 1])[:, 0])
    return x[chosen].copy()


def _repair_empty(x: np.ndarray, c: np.ndarray, labels: np.ndarray) -> None:
    """Reseed each empty cluster at the point farthest from its own centroid (in place)."""
    k = len(c)
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j]:
            continue
        d2 = np.einsum("ij,ij->i", x - c[labels], x - c[labels])
        movable = counts[labels] > 1
        if not movable.any():
            continue
        d2 = np.where(movable, d2, -1.0)
        far = int(np.argmax(d2))
        c[j] = x[far]
        labels[far] = j


def _sse(x, c, labels) -> float:
    d = x - c[labels]
    return float(np.einsum("ij,ij->", d, d))


def kmeans(points, k: int, seed: int = 0, max_iters: int = 50, tol: float = 1e-8,
           init: np.ndarray | None = None) -> KMeansResult:
    """Lloyd's algorithm, k-means++ (or warm-start ``init``) seeding.

    Stops after ``max_iters`` assignment rounds or when the squared-distance
    objective improves by less than ``tol``.
    """
    x = _as2d(points)
    n = len(x)
    if n == 0:
        raise ValueError("kmeans needs at least one point")
    clamped = k > n
    if clamped:
        warnings.warn(f"k={k} exceeds {n} points; clamping", RuntimeWarning, stacklevel=2)
        k = n
    if k < 1:
        raise ValueError("k must be >= 1")
    if init is not None:
        c = _as2d(init).copy()[:k]
        if c.shape != (k, x.shape[1]):
            raise ValueError("init centroids have the wrong shape")
    else:
        c = _plusplus(x, k, stream(seed, "kmeans++"))
    hist: list[float] = []
    it = 0
    while True:
        labels = assign_pseudo_labels(x, c)
        _repair_empty(x, c, labels)
        hist.append(_sse(x, c, labels))
        it += 1
        if (len(hist) > 1 and hist[-2] - hist[-1] < tol) or it >= max_iters:
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(c)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        c[nonempty] = sums[nonempty] / counts[nonempty, None]
    dist = np.sqrt(np.einsum("ij,ij->i", x - c[labels], x - c[labels]))
    return KMeansResult(c, labels, float(dist.sum()), tuple(hist), it, clamped)


def select_representatives(embeddings, samples: Sequence, centroids, labels, m: int,
                           client_id: int = 0, restrict_to_cluster: bool = True) -> SelectedSet:
    """The m nearest samples to each centroid (ties by lower index), unioned.

    With ``restrict_to_cluster`` only a centroid's own members compete for it;
    otherwise every local sample does.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    x, c = _as2d(embeddings), _as2d(centroids)
    labels = np.asarray(labels, dtype=np.int64)
    if len(x) != len(samples) or len(labels) != len(x):
        raise ValueError("embeddings, samples and labels must align")
    d2 = kernels.sq_dists(x, c) if len(x) else np.zeros((0, len(c)))
    picks = []
    for j in range(len(c)):
        members = np.flatnonzero(labels == j) if restrict_to_cluster else np.arange(len(x))
        order = sorted(members.tolist(), key=lambda i: (d2[i, j], i))
        picks.append(tuple(order[:m]))
    idx = tuple(sorted({i for p in picks for i in p}))
    zs = []
    for i in idx:
        z = samples[i].z
        if z is None:
            raise ValueError("representatives must be pixelized; sample has no z")
        zs.append(z)
    return SelectedSet(client_id, idx, tuple(zs), tuple(int(samples[i].y) for i in idx), tuple(picks))
