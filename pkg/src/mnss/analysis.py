"""Analyses on top of the index: nearest-atlas segmentation, radius graphs,
local density, connected-component clustering and mean streamlines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .core import DEFAULT_N_POINTS, L21_AVERAGE, NormSpec, as_tractogram, mixed_norm_distance, reverse
from .exceptions import InvalidInputError
from .index import DEFAULT_LEAF_SIZE, SearchIndex, as_norm, build

UNASSIGNED = -1
NOISE = -1


@dataclass
class BundleAtlas:
    tractogram: object
    labels: np.ndarray
    names: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.tractogram = as_tractogram(self.tractogram)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (len(self.tractogram),):
            raise InvalidInputError("every atlas streamline needs a label")
        if len(self.labels) and (self.labels.min() < 0 or
                                 np.unique(self.labels).size != self.labels.max() + 1):
            raise InvalidInputError("atlas label ids must be dense from 0")


@dataclass
class SegmentationResult:
    labels: np.ndarray
    distances: np.ndarray
    nearest: np.ndarray
    flipped: np.ndarray

    def __len__(self):
        return len(self.labels)

    @property
    def assigned(self) -> np.ndarray:
        return self.labels != UNASSIGNED


def segment_to_atlas(index: SearchIndex, atlas_labels, queries, r_max: float,
                     n_jobs=None, resampled: bool = False,
                     orientation: Optional[str] = None) -> SegmentationResult:
    """Label each query with the bundle of its nearest atlas streamline when
    that streamline lies within ``r_max``, else ``UNASSIGNED``."""
    if not r_max > 0:
        raise InvalidInputError("r_max must be positive")
    atlas_labels = np.asarray(atlas_labels, dtype=np.int64)
    if len(atlas_labels) != len(index):
        raise InvalidInputError("atlas labels do not match the indexed streamlines")
    dist, ids, flips = index.query_knn(queries, 1, orientation, n_jobs, resampled=resampled)
    dist, ids, flips = dist[:, 0], ids[:, 0], flips[:, 0]
    labels = np.where(dist <= r_max, atlas_labels[ids], UNASSIGNED)
    return SegmentationResult(labels, dist, ids, flips)


class AtlasSegmenter(BaseEstimator):
    """Nearest-atlas bundle assignment with a distance gate.

    ``fit(atlas, labels)`` indexes the atlas; ``predict`` returns bundle ids
    with ``UNASSIGNED`` (-1) for streamlines farther than ``radius`` from
    every atlas streamline.
    """

    def __init__(self, radius=8.0, n_points=DEFAULT_N_POINTS, norm="2,1,avg",
                 orientation="direct-flip", leaf_size=DEFAULT_LEAF_SIZE, n_jobs=None):
        self.radius = radius
        self.n_points = n_points
        self.norm = norm
        self.orientation = orientation
        self.leaf_size = leaf_size
        self.n_jobs = n_jobs

    def fit(self, X, y, names=None):
        atlas = BundleAtlas(X, y, dict(names or {}))
        self.index_ = build(atlas.tractogram, self.n_points, as_norm(self.norm),
                            self.leaf_size, self.orientation)
        self.labels_ = atlas.labels
        self.names_ = atlas.names
        self.n_bundles_ = int(atlas.labels.max()) + 1 if len(atlas.labels) else 0
        return self

    def segment(self, X, resampled=False) -> SegmentationResult:
        check_is_fitted(self, "index_")
        return segment_to_atlas(self.index_, self.labels_, X, self.radius, self.n_jobs, resampled)

    def predict(self, X):
        return self.segment(X).labels


@dataclass
class RadiusGraph:
    """Symmetric sparse graph in CSR form; row ``i`` lists neighbours in
    ascending id order with their exact distances. No self-edges."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    distances: np.ndarray
    radius: float = float("nan")

    @classmethod
    def from_edges(cls, n: int, i, j, d, radius=float("nan")) -> "RadiusGraph":
        """Build from undirected edges listed once each."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        d = np.asarray(d, dtype=np.float64)
        if len(i) and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= n):
            raise InvalidInputError("edge endpoint out of range")
        if np.any(i == j):
            raise InvalidInputError("self-edges are not allowed")
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        vals = np.concatenate([d, d])
        o = np.lexsort((cols, rows))
        rows, cols, vals = rows[o], cols[o], vals[o]
        if len(rows) > 1 and np.any((rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])):
            raise InvalidInputError("duplicate edge")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        return cls(n, indptr, cols, vals, radius)

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def edges(self):
        """Undirected edges ``(i, j, distance)`` with ``i < j``, sorted."""
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        upper = rows < self.indices
        return rows[upper], self.indices[upper], self.distances[upper]

    def neighbors(self, i: int):
        a, b = self.indptr[i], self.indptr[i + 1]
        return self.indices[a:b], self.distances[a:b]

    def to_scipy(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.distances, self.indices, self.indptr), shape=(self.n, self.n))


def build_radius_graph(index: SearchIndex, r: float, n_jobs=None,
                       orientation: Optional[str] = None) -> RadiusGraph:
    """Exact radius graph over the streamlines held by ``index``.

    Each node queries only higher ids, so every undirected edge is computed
    once and then mirrored.
    """
    if not r > 0:
        raise InvalidInputError("radius must be positive")
    n = len(index)
    rows = index.rows.astype(np.float64).reshape(n, index.n_points, 3)
    indptr, ids, dist, _ = index.query_radius(rows, r, orientation, n_jobs,
                                              upper_only=True, resampled=True)
    src = np.repeat(np.arange(n), np.diff(indptr))
    return RadiusGraph.from_edges(n, src, ids, dist, float(r))


def local_density(graph: RadiusGraph) -> np.ndarray:
    """Within-radius neighbour count of every node."""
    return np.diff(graph.indptr)


@dataclass
class ClusterSet:
    assignment: np.ndarray
    clusters: List[np.ndarray]
    density: np.ndarray
    centroids: Optional[np.ndarray] = None

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def noise(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == NOISE)


def cluster(graph: RadiusGraph, min_size: int = 1, rows=None,
            spec: NormSpec = L21_AVERAGE) -> ClusterSet:
    """Connected components of ``graph``; components smaller than
    ``min_size`` become ``NOISE``.

    Cluster ids follow descending size, then ascending smallest member id.
    Passing resampled ``rows`` (``(N, K, 3)``) also computes mean streamlines.
    """
    if min_size < 1:
        raise InvalidInputError("min_size must be at least 1")
    n = graph.n
    if n == 0:
        return ClusterSet(np.zeros(0, np.int64), [], np.zeros(0, np.int64))
    # ones, not distances: exact duplicates are joined by zero-distance edges
    adjacency = sparse.csr_matrix((np.ones(len(graph.indices)), graph.indices, graph.indptr),
                                  shape=(n, n))
    _, comp = connected_components(adjacency, directed=False)
    sizes = np.bincount(comp)
    smallest = np.full(len(sizes), n, dtype=np.int64)
    np.minimum.at(smallest, comp, np.arange(n))
    rank = np.lexsort((smallest, -sizes))
    kept = [c for c in rank if sizes[c] >= min_size]
    relabel = np.full(len(sizes), NOISE, dtype=np.int64)
    relabel[kept] = np.arange(len(kept))
    assignment = relabel[comp]
    order = np.argsort(assignment, kind="stable")
    bounds = np.searchsorted(assignment[order], np.arange(len(kept) + 1))
    clusters = [order[bounds[c]:bounds[c + 1]] for c in range(len(kept))]
    centroids = None
    if rows is not None:
        rows = np.asarray(rows, dtype=np.float64)
        if len(rows) != n:
            raise InvalidInputError("rows do not match graph size")
        centroids = np.array([mean_streamline(rows[m], spec) for m in clusters])
    return ClusterSet(assignment, clusters, local_density(graph), centroids)


def mean_streamline(members, spec: NormSpec = L21_AVERAGE) -> np.ndarray:
    """Point-wise mean after orienting every member like the first one."""
    members = np.asarray(members, dtype=np.float64)
    if members.ndim != 3 or len(members) == 0:
        raise InvalidInputError("need a non-empty (M, K, 3) stack of members")
    ref = members[0]
    direct = np.atleast_1d(mixed_norm_distance(ref, members, spec))
    flipped = np.atleast_1d(mixed_norm_distance(ref, reverse(members), spec))
    aligned = np.where((flipped < direct)[:, None, None], reverse(members), members)
    return aligned.mean(axis=0)


def density_filter(density, min_density: int) -> np.ndarray:
    """Boolean keep-mask of nodes with at least ``min_density`` neighbours."""
    return np.asarray(density) >= min_density


class RadiusGraphClustering(ClusterMixin, BaseEstimator):
    """Cluster streamlines as connected components of their radius graph.

    After ``fit``: ``labels_`` (``NOISE`` = -1 for small components),
    ``density_``, ``graph_``, ``clusters_`` and ``centroids_``.
    """

    def __init__(self, radius=8.0, min_size=10, n_points=DEFAULT_N_POINTS, norm="2,1,avg",
                 orientation="direct-flip", leaf_size=DEFAULT_LEAF_SIZE, n_jobs=None):
        self.radius = radius
        self.min_size = min_size
        self.n_points = n_points
        self.norm = norm
        self.orientation = orientation
        self.leaf_size = leaf_size
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        spec = as_norm(self.norm)
        index = build(X, self.n_points, spec, self.leaf_size, self.orientation)
        self.graph_ = build_radius_graph(index, self.radius, self.n_jobs)
        rows = index.rows.astype(np.float64).reshape(len(index), index.n_points, 3)
        result = cluster(self.graph_, self.min_size, rows, spec)
        self.labels_ = result.assignment
        self.density_ = result.density
        self.clusters_ = result.clusters
        self.centroids_ = result.centroids
        return self
