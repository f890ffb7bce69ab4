"""Exact k-d tree search over resampled streamlines under mixed norms.

Rows are flattened ``(3K,)`` float32 vectors. Each node keeps its tight
bounding box; a subtree is skipped only when a lower bound on the distance
from the query to that box exceeds the current search bound. The default
bound is the mixed norm of the per-coordinate box gaps, which dominates both
the flat ``max(inner, outer)`` envelope and the Hölder-scaled flat
outer-exponent norm (both also selectable).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
from scipy import sparse

from . import _kernels
from ._parallel import map_chunks, resolve_n_jobs
from .core import (
    DEFAULT_N_POINTS,
    L21_AVERAGE,
    NormSpec,
    Tractogram,
    as_tractogram,
    check_orientation,
    check_streamline,
    resample_many,
)
from .exceptions import (
    BatchQueryError,
    DegenerateStreamlineError,
    EmptyIndexError,
    InvalidInputError,
    ShapeError,
)

DEFAULT_LEAF_SIZE = 16
BOUNDS = {
    "mixed": _kernels.BOUND_MIXED,
    "holder": _kernels.BOUND_HOLDER,
    "envelope": _kernels.BOUND_ENVELOPE,
}


@dataclass(frozen=True)
class Neighbor:
    id: int
    distance: float
    flipped: bool = False


@dataclass(frozen=True)
class QueryStats:
    nodes: int
    leaves: int
    distances: int


def as_norm(norm) -> NormSpec:
    if isinstance(norm, NormSpec):
        return norm
    if isinstance(norm, str):
        return NormSpec.parse(norm)
    return NormSpec(*norm)


class SearchIndex:
    """Immutable tree over ``N`` resampled streamlines.

    Build with :func:`build` or :meth:`from_rows`. ``data`` holds the rows in
    leaf order; ``order[p]`` is the original row id of ``data[p]``.
    """

    def __init__(self, data, order, start, end, left, right, axis, split, lo, hi,
                 n_points, spec, leaf_size, orientation="direct", bound="mixed"):
        self.data = data
        self.order = order
        self.start = start
        self.end = end
        self.left = left
        self.right = right
        self.axis = axis
        self.split = split
        self.lo = lo
        self.hi = hi
        self.n_points = int(n_points)
        self.spec = spec
        self.leaf_size = int(leaf_size)
        self.orientation = check_orientation(orientation)
        if bound not in BOUNDS:
            raise InvalidInputError(f"bound must be one of {sorted(BOUNDS)}")
        self.bound = bound
        for a in (data, order, start, end, left, right, axis, split, lo, hi):
            a.setflags(write=False)

    @classmethod
    def from_rows(cls, rows, spec: NormSpec = L21_AVERAGE, leaf_size: int = DEFAULT_LEAF_SIZE,
                  orientation: str = "direct", bound: str = "mixed") -> "SearchIndex":
        """Index already-resampled rows, shape ``(N, K, 3)`` or ``(N, 3K)``."""
        rows = np.asarray(rows)
        if rows.ndim == 3:
            if rows.shape[2] != 3:
                raise ShapeError(f"rows must have shape (N, K, 3), got {rows.shape}")
            n_points = rows.shape[1]
            rows = rows.reshape(len(rows), -1)
        elif rows.ndim == 2 and rows.shape[1] % 3 == 0:
            n_points = rows.shape[1] // 3
        else:
            raise ShapeError(f"cannot interpret rows of shape {rows.shape}")
        if len(rows) == 0:
            raise EmptyIndexError("cannot build an index over zero streamlines")
        if n_points < 2:
            raise InvalidInputError("n_points must be at least 2")
        if leaf_size < 1:
            raise InvalidInputError("leaf_size must be at least 1")
        work = np.array(rows, dtype=np.float32, order="C", copy=True)
        if not np.all(np.isfinite(work)):
            raise InvalidInputError("rows contain non-finite coordinates")
        return cls._from_owned(work, n_points, spec, leaf_size, orientation, bound)

    @classmethod
    def _from_owned(cls, work, n_points, spec, leaf_size, orientation, bound) -> "SearchIndex":
        # ``work`` is a private, finite float32 (N, 3K) buffer; it becomes the
        # index's row store after being permuted in place
        arrays = _kernels.build_tree(work, int(leaf_size))
        return cls(work, *arrays, n_points, as_norm(spec), leaf_size, orientation, bound)

    # -- structure ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.order)

    @property
    def n_nodes(self) -> int:
        return len(self.start)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    @property
    def rows(self) -> np.ndarray:
        """Rows in original id order, ``(N, 3K)`` float32."""
        out = np.empty_like(self.data)
        out[self.order] = self.data
        return out

    def height(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.left[node] >= 0:
                depth[self.left[node]] = depth[node] + 1
                depth[self.right[node]] = depth[node] + 1
        return int(depth.max()) + 1

    def leaves(self) -> List[np.ndarray]:
        return [self.order[self.start[n]:self.end[n]] for n in range(self.n_nodes) if self.left[n] < 0]

    # -- queries -----------------------------------------------------------

    def _prepare(self, queries, resampled=False) -> np.ndarray:
        """Resample queries (or validate pre-resampled ones) to ``(Q, 3K)``."""
        if resampled:
            queries = np.asarray(queries, dtype=np.float64)
            if queries.ndim != 3 or queries.shape[1:] != (self.n_points, 3):
                raise ShapeError(
                    f"queries resampled at {queries.shape[1]} points, index uses {self.n_points}")
            return np.ascontiguousarray(queries.reshape(len(queries), 3 * self.n_points))
        t = as_tractogram(queries)
        try:
            res = resample_many(t, self.n_points)
        except DegenerateStreamlineError as exc:
            raise BatchQueryError(exc.streamline_id, exc) from exc
        except InvalidInputError as exc:
            raise BatchQueryError(None, exc) from exc
        return res.reshape(len(res), 3 * self.n_points)

    def _tree_args(self):
        inner, outer = self.spec.codes
        return (self.data, self.order, self.start, self.end, self.left, self.right,
                self.lo, self.hi, self.n_points, inner, outer, BOUNDS[self.bound],
                self.spec.holder_factor())

    def _use_flip(self, orientation):
        return check_orientation(orientation or self.orientation) == "direct-flip"

    def query_knn(self, queries, k: int, orientation: Optional[str] = None, n_jobs=None,
                  resampled: bool = False, return_stats: bool = False):
        """Batch KNN. Returns ``(distances, ids, flipped)`` arrays of shape
        ``(Q, min(k, N))`` sorted by distance then id, plus a
        :class:`QueryStats` when ``return_stats``."""
        if k < 1:
            raise InvalidInputError("k must be at least 1")
        if len(self) == 0:
            raise EmptyIndexError("index is empty")
        q = self._prepare(queries, resampled)
        n_jobs = resolve_n_jobs(n_jobs)
        kk = min(int(k), len(self))
        flip = self._use_flip(orientation)
        args = self._tree_args()

        def work(lo, hi):
            return _kernels.knn_batch(q[lo:hi], *args, kk, flip)

        parts = map_chunks(work, len(q), n_jobs)
        if parts:
            dist = np.concatenate([p[0] for p in parts])
            ids = np.concatenate([p[1] for p in parts])
            flips = np.concatenate([p[2] for p in parts])
        else:
            dist = np.zeros((0, kk))
            ids = np.zeros((0, kk), np.int64)
            flips = np.zeros((0, kk), bool)
        out = (dist / self.spec.scale(self.n_points), ids, flips)
        return out + (_stats(parts, 4),) if return_stats else out

    def query_radius(self, queries, r: float, orientation: Optional[str] = None, n_jobs=None,
                     upper_only: bool = False, query_ids=None, resampled: bool = False,
                     return_stats: bool = False):
        """Batch radius search.

        Returns CSR-style ``(indptr, ids, distances, flipped)`` with each
        query's hits sorted by distance then id. With ``upper_only`` query
        ``i`` only reports rows whose id exceeds ``query_ids[i]``.
        """
        if not r >= 0:
            raise InvalidInputError("radius must be non-negative")
        if len(self) == 0:
            raise EmptyIndexError("index is empty")
        q = self._prepare(queries, resampled)
        nq = len(q)
        n_jobs = resolve_n_jobs(n_jobs)
        flip = self._use_flip(orientation)
        scale = self.spec.scale(self.n_points)
        internal = float(r) * scale
        if upper_only:
            min_ids = np.asarray(query_ids if query_ids is not None else np.arange(nq), dtype=np.int64)
        else:
            min_ids = np.full(nq, -1, dtype=np.int64)
        args = self._tree_args()

        def work(lo, hi):
            qi, rid, d, f, counters = _kernels.radius_batch(
                q[lo:hi], *args, internal, flip, min_ids[lo:hi])
            return qi + lo, rid, d, f, counters

        parts = map_chunks(work, nq, n_jobs)
        if parts:
            qi = np.concatenate([p[0] for p in parts])
            rid = np.concatenate([p[1] for p in parts])
            d = np.concatenate([p[2] for p in parts])
            f = np.concatenate([p[3] for p in parts])
        else:
            qi = rid = np.zeros(0, np.int64)
            d = np.zeros(0)
            f = np.zeros(0, bool)
        if flip and len(qi):
            # one entry per (query, id): smallest distance, direct wins ties
            o = np.lexsort((f, d, rid, qi))
            qi, rid, d, f = qi[o], rid[o], d[o], f[o]
            keep = np.ones(len(qi), bool)
            keep[1:] = (qi[1:] != qi[:-1]) | (rid[1:] != rid[:-1])
            qi, rid, d, f = qi[keep], rid[keep], d[keep], f[keep]
        o = np.lexsort((rid, d, qi))
        qi, rid, d, f = qi[o], rid[o], d[o], f[o]
        indptr = np.zeros(nq + 1, dtype=np.int64)
        np.cumsum(np.bincount(qi, minlength=nq), out=indptr[1:])
        out = (indptr, rid, d / scale, f)
        return out + (_stats(parts, 4),) if return_stats else out


def _stats(parts, slot) -> QueryStats:
    total = np.zeros(3, np.int64)
    for p in parts:
        total += p[slot]
    return QueryStats(int(total[0]), int(total[1]), int(total[2]))


def build(tractogram, n_points: int = DEFAULT_N_POINTS, spec: NormSpec = L21_AVERAGE,
          leaf_size: int = DEFAULT_LEAF_SIZE, orientation: str = "direct",
          bound: str = "mixed") -> SearchIndex:
    """Resample ``tractogram`` and index it."""
    t = as_tractogram(tractogram)
    if len(t) == 0:
        raise EmptyIndexError("cannot build an index over an empty tractogram")
    if n_points < 2:
        raise InvalidInputError("n_points must be at least 2")
    if leaf_size < 1:
        raise InvalidInputError("leaf_size must be at least 1")
    rows = resample_many(t, n_points, dtype=np.float32)
    return SearchIndex._from_owned(rows.reshape(len(t), -1), n_points, spec, leaf_size,
                                   orientation, bound)


def _single(query):
    return [check_streamline(query)]


def knn(index: SearchIndex, query, k: int, orientation: Optional[str] = None) -> List[Neighbor]:
    dist, ids, flips = index.query_knn(_single(query), k, orientation, n_jobs=1)
    return [Neighbor(int(i), float(d), bool(f)) for d, i, f in zip(dist[0], ids[0], flips[0])]


def radius_search(index: SearchIndex, query, r: float, orientation: Optional[str] = None) -> List[Neighbor]:
    indptr, ids, dist, flips = index.query_radius(_single(query), r, orientation, n_jobs=1)
    return [Neighbor(int(i), float(d), bool(f)) for d, i, f in zip(dist, ids, flips)]


def batch_knn(index: SearchIndex, queries, k: int, n_jobs=None,
              orientation: Optional[str] = None) -> List[List[Neighbor]]:
    dist, ids, flips = index.query_knn(queries, k, orientation, n_jobs)
    return [[Neighbor(int(i), float(d), bool(f)) for d, i, f in zip(*row)]
            for row in zip(dist, ids, flips)]


def batch_radius(index: SearchIndex, queries, r: float, n_jobs=None,
                 orientation: Optional[str] = None) -> List[List[Neighbor]]:
    indptr, ids, dist, flips = index.query_radius(queries, r, orientation, n_jobs)
    return [[Neighbor(int(ids[p]), float(dist[p]), bool(flips[p])) for p in range(a, b)]
            for a, b in zip(indptr[:-1], indptr[1:])]


class StreamlineNeighbors(BaseEstimator):
    """Exact neighbour search over streamlines, sklearn ``NearestNeighbors``
    style.

    Parameters
    ----------
    n_neighbors : int
        Default ``k`` for :meth:`kneighbors`.
    radius : float
        Default radius (mm, reporting convention of ``norm``).
    n_points : int
        Resampling count K.
    norm : NormSpec, str or tuple
        ``"2,1,avg"`` is the mean point-wise Euclidean distance.
    orientation : {"direct", "direct-flip"}
    leaf_size : int
    bound : {"mixed", "holder", "envelope"}
        Subtree lower bound; results are identical, only pruning differs.
    n_jobs : int or None
        Worker threads for batch queries; ``None`` reads ``$MNSS_THREADS``.
    """

    def __init__(self, n_neighbors=5, radius=8.0, n_points=DEFAULT_N_POINTS, norm="2,1,avg",
                 orientation="direct", leaf_size=DEFAULT_LEAF_SIZE, bound="mixed", n_jobs=None):
        self.n_neighbors = n_neighbors
        self.radius = radius
        self.n_points = n_points
        self.norm = norm
        self.orientation = orientation
        self.leaf_size = leaf_size
        self.bound = bound
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        self.index_ = build(X, self.n_points, as_norm(self.norm), self.leaf_size,
                            self.orientation, self.bound)
        self.n_samples_fit_ = len(self.index_)
        return self

    def _self_rows(self):
        rows = self.index_.rows.astype(np.float64)
        return rows.reshape(len(rows), self.index_.n_points, 3)

    def kneighbors(self, X=None, n_neighbors=None, return_distance=True):
        """With ``X=None`` each fitted streamline is queried against the
        others, excluding itself."""
        check_is_fitted(self, "index_")
        k = self.n_neighbors if n_neighbors is None else n_neighbors
        if X is not None:
            dist, ids, _ = self.index_.query_knn(X, k, n_jobs=self.n_jobs)
        else:
            if k >= self.n_samples_fit_:
                raise InvalidInputError("n_neighbors must be below the number of fitted samples")
            dist, ids, _ = self.index_.query_knn(self._self_rows(), k + 1, n_jobs=self.n_jobs,
                                                  resampled=True)
            dist, ids = _drop_self(dist, ids)
        return (dist, ids) if return_distance else ids

    def radius_neighbors(self, X=None, radius=None, return_distance=True):
        check_is_fitted(self, "index_")
        r = self.radius if radius is None else radius
        queries = self._self_rows() if X is None else X
        indptr, ids, dist, _ = self.index_.query_radius(queries, r, n_jobs=self.n_jobs,
                                                        resampled=X is None)
        if X is None:
            nq = len(indptr) - 1
            owner = np.repeat(np.arange(nq), np.diff(indptr))
            keep = ids != owner
            ids, dist, owner = ids[keep], dist[keep], owner[keep]
            indptr = np.zeros(nq + 1, dtype=np.int64)
            np.cumsum(np.bincount(owner, minlength=nq), out=indptr[1:])
        ind = _split(ids, indptr)
        if not return_distance:
            return ind
        return _split(dist, indptr), ind

    def radius_neighbors_graph(self, X=None, radius=None, mode="connectivity"):
        """Sparse ``(n_queries, n_samples_fit)`` matrix, sklearn convention.
        Distance mode keeps explicit zeros for exact duplicates."""
        dist, ind = self.radius_neighbors(X, radius, return_distance=True)
        indptr = np.zeros(len(ind) + 1, dtype=np.int64)
        np.cumsum([len(a) for a in ind], out=indptr[1:])
        indices = np.concatenate(ind) if len(ind) else np.zeros(0, np.int64)
        if mode == "connectivity":
            data = np.ones(len(indices))
        elif mode == "distance":
            data = np.concatenate(dist) if len(dist) else np.zeros(0)
        else:
            raise InvalidInputError(f"unknown mode {mode!r}")
        return sparse.csr_matrix((data, indices, indptr), shape=(len(ind), self.n_samples_fit_))


def _split(values, indptr):
    out = np.empty(len(indptr) - 1, dtype=object)
    for i in range(len(out)):
        out[i] = values[indptr[i]:indptr[i + 1]]
    return out


def _drop_self(dist, ids):
    n, k1 = ids.shape
    own = np.arange(n)[:, None]
    is_self = ids == own
    # rows where self was crowded out by exact duplicates lose their last slot
    missing = ~is_self.any(axis=1)
    is_self[missing, k1 - 1] = True
    keep = ~is_self
    return dist[keep].reshape(n, k1 - 1), ids[keep].reshape(n, k1 - 1)

