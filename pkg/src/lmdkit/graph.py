"""Similarity graphs over datasets, their Laplacians, and spectral embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import as_matrix, eig_symmetric

AUTO = "auto"


class Selection(str, Enum):
    SMALLEST_NONZERO = "smallest_nonzero"
    LARGEST = "largest"


@dataclass(frozen=True)
class DataSet:
    points: np.ndarray
    targets: np.ndarray | None = None

    def __post_init__(self):
        pts = as_matrix(self.points, "points")
        object.__setattr__(self, "points", pts)
        if self.targets is not None:
            tgt = as_matrix(self.targets, "targets")
            if tgt.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"targets have {tgt.shape[0]} rows but points have {pts.shape[0]}"
                )
            object.__setattr__(self, "targets", tgt)

    @property
    def p(self) -> int:
        return self.points.shape[0]

    def joint(self) -> "DataSet":
        """Points concatenated with targets, i.e. samples of the X x Y product space."""
        if self.targets is None:
            return DataSet(self.points)
        return DataSet(np.hstack([self.points, self.targets]))


@dataclass(frozen=True)
class Graph:
    adjacency: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.adjacency, "adjacency")
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if np.any(np.diag(a) != 0.0):
            raise ValueError("adjacency diagonal must be exactly zero")
        if np.any(a < 0):
            raise ValueError("adjacency entries must be nonnegative")
        if np.max(np.abs(a - a.T)) > 1e-12:
            raise ValueError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


@dataclass(frozen=True)
class LaplacianSpectrum:
    laplacian: np.ndarray
    values: np.ndarray  # ascending
    vectors: np.ndarray
    zero_multiplicity: int


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def auto_bandwidth(x: np.ndarray) -> float:
    """Median of the pairwise Euclidean distances (i < j)."""
    d = pairwise_distances(x)
    iu = np.triu_indices(x.shape[0], k=1)
    return float(np.median(d[iu]))


def _resolve_bandwidth(x: np.ndarray, bandwidth) -> float:
    if bandwidth is None or bandwidth == AUTO:
        h = auto_bandwidth(x)
        if h <= 0:
            raise ValueError("AUTO bandwidth is zero: all points are identical")
        return h
    h = float(bandwidth)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    return h


def _gaussian(d: np.ndarray, h: float) -> np.ndarray:
    w = np.exp(-(d * d) / (2.0 * h * h))
    np.fill_diagonal(w, 0.0)
    return w


def build_full_graph(data: DataSet, bandwidth=AUTO) -> Graph:
    x = data.points
    if x.shape[0] < 2:
        raise ValueError("a fully-connected graph needs at least 2 points")
    h = _resolve_bandwidth(x, bandwidth)
    return Graph(_gaussian(pairwise_distances(x), h))


def build_knn_graph(data: DataSet, k: int, bandwidth=AUTO) -> Graph:
    """Symmetrized k-nearest-neighbour graph with Gaussian edge weights.

    An edge joins i and j when either lists the other among its ``k`` nearest
    points. Equal distances are resolved in favour of the smaller index.
    """
    x = data.points
    p = x.shape[0]
    if not 1 <= k <= p - 1:
        raise ValueError(f"k must be in [1, {p - 1}], got {k}")
    d = pairwise_distances(x)
    mask = np.zeros((p, p), dtype=bool)
    for i in range(p):
        dist = d[i].copy()
        dist[i] = np.inf
        nearest = np.argsort(dist, kind="stable")[:k]
        mask[i, nearest] = True
    mask |= mask.T
    h = _resolve_bandwidth(x, bandwidth)
    w = np.where(mask, _gaussian(d, h), 0.0)
    return Graph(w)


def laplacian(g: Graph) -> np.ndarray:
    return np.diag(g.degree) - g.adjacency


def zero_tolerance(values: np.ndarray) -> float:
    return 1e-8 * max(1.0, float(np.max(np.abs(values))))


def laplacian_spectrum(g: Graph) -> LaplacianSpectrum:
    lap = laplacian(g)
    eig = eig_symmetric(lap)
    values = eig.values[::-1].copy()
    vectors = eig.vectors[:, ::-1].copy()
    zeros = int(np.count_nonzero(values <= zero_tolerance(values)))
    return LaplacianSpectrum(lap, values, vectors, zeros)


def connected_components(g: Graph) -> int:
    """Component count by breadth-first traversal over positive-weight edges."""
    seen = np.zeros(g.n, dtype=bool)
    count = 0
    for start in range(g.n):
        if seen[start]:
            continue
        count += 1
        seen[start] = True
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for w in np.nonzero(g.adjacency[v] > 0)[0]:
                if not seen[w]:
                    seen[w] = True
                    frontier.append(int(w))
    return count


def embedding_indices(spec: LaplacianSpectrum, n_prime: int, selection=Selection.SMALLEST_NONZERO) -> np.ndarray:
    n = spec.values.shape[0]
    if not 1 <= n_prime <= n:
        raise ValueError(f"n_prime must be in [1, {n}], got {n_prime}")
    selection = Selection(selection)
    if selection is Selection.LARGEST:
        return np.arange(n - 1, n - 1 - n_prime, -1)
    zm = spec.zero_multiplicity
    order = np.concatenate([np.arange(zm, n), np.arange(zm)])
    return order[:n_prime]


def spectral_embedding(spec: LaplacianSpectrum, n_prime: int, selection=Selection.SMALLEST_NONZERO) -> np.ndarray:
    """Eigenvector coordinates of each vertex, one column per latent dimension.

    ``SMALLEST_NONZERO`` takes the nonzero-eigenvalue eigenvectors in
    ascending order and appends the null space (one vector per component)
    only when ``n_prime`` exceeds them. ``LARGEST`` takes the top
    ``n_prime`` in descending order.
    """
    return spec.vectors[:, embedding_indices(spec, n_prime, selection)]
