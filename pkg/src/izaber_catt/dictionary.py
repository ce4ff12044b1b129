"""Global embedding dictionaries (the K_C / V_C of cross-sample attention).

A dictionary is a trainable ``K x d`` Parameter. It is initialised either by
K-means over training embeddings or uniformly at random, and is updated by
gradient descent like any other weight afterwards.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from izaber.log import log

from .errors import ConfigurationError, DimensionError, InputError
from .tensor import ArrayLike, Parameter

DEFAULT_MAX_ITERS = 100


class DictionarySource(str, Enum):
    KMEANS = "kmeans"
    RANDOM = "random"


@dataclass
class GlobalDictionary:
    entries: Parameter
    source: DictionarySource
    inertia: Optional[float] = None
    inertia_history: List[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def width(self) -> int:
        return self.entries.shape[1]

    def centroids(self) -> np.ndarray:
        return self.entries.value.copy()


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """``[N, K]`` squared Euclidean distances."""
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _labels(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum: ties go to the lowest centroid index
    return np.argmin(squared_distances(points, centroids), axis=1)


def _inertia(points: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = points - centroids[labels]
    return float(np.einsum("nd,nd->", diff, diff))


def assign(points: ArrayLike, dictionary: GlobalDictionary) -> List[int]:
    """Nearest-centroid label for each point; ties go to the lowest index."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != dictionary.width:
        raise DimensionError("assign: points {} do not match dictionary width {}".format(
            list(x.shape), dictionary.width))
    return [int(i) for i in _labels(x, dictionary.entries.value)]


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(0, n))]
    closest = squared_distances(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0.0:
            index = int(rng.choice(n, p=closest / total))
        else:
            # Every point coincides with a chosen centre; take the first unused one.
            log.warning("kmeans: fewer than {} distinct points, seeding with duplicates".format(k))
            unused = np.setdiff1d(np.arange(n), chosen)
            index = int(unused[0])
        chosen.append(index)
        closest = np.minimum(closest, squared_distances(points, points[[index]])[:, 0])
    return points[chosen].copy()


def _update(points: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros_like(centroids)
    np.add.at(sums, labels, points)
    updated = centroids.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if empty.size:
        # Empty cluster repair: the point farthest from its own centroid seeds it.
        far = np.einsum("nd,nd->n", points - updated[labels], points - updated[labels])
        for j in empty:
            victim = int(np.argmax(far))
            log.warning("kmeans: cluster {} empty, reseeding at point {}".format(int(j), victim))
            updated[j] = points[victim]
            far[victim] = -1.0
    return updated


def kmeans_init(points: ArrayLike, k: int, max_iters: int = DEFAULT_MAX_ITERS, seed: int = 0,
                name: str = "dictionary") -> GlobalDictionary:
    """Lloyd's algorithm from k-means++ seeds.

    Stops after ``max_iters`` update steps or when assignments no longer change.
    The returned dictionary records the inertia after every assignment step.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("kmeans_init: points must be [N, d], got {}".format(list(x.shape)))
    if not np.all(np.isfinite(x)):
        raise InputError("kmeans_init: points contain NaN or Inf")
    if k < 1 or max_iters < 1:
        raise ConfigurationError("kmeans_init: need K >= 1 and max_iters >= 1")
    if x.shape[0] < k:
        raise ConfigurationError("kmeans_init: {} points cannot fill {} clusters".format(x.shape[0], k))

    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(x, k, rng)
    labels = _labels(x, centroids)
    history = [_inertia(x, centroids, labels)]
    iterations = 0
    for iterations in range(1, max_iters + 1):
        centroids = _update(x, labels, centroids)
        new_labels = _labels(x, centroids)
        history.append(_inertia(x, centroids, new_labels))
        log.debug("kmeans: iteration {} inertia {:.6g}".format(iterations, history[-1]))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    log.info("kmeans: K={} over {} points, {} iterations, inertia {:.6g}".format(
        k, x.shape[0], iterations, history[-1]))
    return GlobalDictionary(
        entries=Parameter(name, centroids),
        source=DictionarySource.KMEANS,
        inertia=history[-1],
        inertia_history=history,
        iterations=iterations,
    )


def random_init(k: int, d: int, scale: float, seed: int, name: str = "dictionary") -> GlobalDictionary:
    """Entries i.i.d. uniform in ``[-scale, scale]``."""
    if k < 1 or d < 1:
        raise ConfigurationError("random_init: need K >= 1 and d >= 1")
    if scale < 0:
        raise ConfigurationError("random_init: scale must be non-negative")
    rng = np.random.default_rng(seed)
    values = rng.uniform(-1.0, 1.0, size=(k, d)) * scale
    return GlobalDictionary(entries=Parameter(name, values), source=DictionarySource.RANDOM)


def lloyd_step(points: ArrayLike, dictionary: GlobalDictionary) -> Sequence[int]:
    """Labels after one more update step from the current centroids."""
    x = np.asarray(points, dtype=np.float64)
    centroids = dictionary.entries.value
    updated = _update(x, _labels(x, centroids), centroids)
    return [int(i) for i in _labels(x, updated)]


def format_centroids(dictionary: GlobalDictionary) -> str:
    """One centroid per line, values at 17 significant digits."""
    return "".join(" ".join("{:.17g}".format(v) for v in row) + "\n" for row in dictionary.entries.value)
