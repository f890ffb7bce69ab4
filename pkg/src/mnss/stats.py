"""Connection-probability estimates and exact binomial confidence intervals
for streamline-count connectivity matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.special import betaincinv

from .exceptions import InvalidInputError

DENSE_LIMIT = 4096


def _check_counts(c, n):
    c = np.asarray(c)
    n = np.asarray(n)
    if np.any(n < 1):
        raise InvalidInputError("seed count n must be at least 1")
    if np.any(c < 0) or np.any(c > n):
        raise InvalidInputError("counts must satisfy 0 <= c <= n")
    return c, n


def point_estimate(c, n):
    """``(p_hat, variance)`` with ``p_hat = c/n`` and variance ``p_hat(1-p_hat)/n``."""
    c, n = _check_counts(c, n)
    p = c / n
    var = p * (1.0 - p) / n
    if np.ndim(p) == 0:
        return float(p), float(var)
    return p, var


def clopper_pearson(c, n, alpha: float = 0.05):
    """Exact two-sided ``1 - alpha`` interval for a binomial proportion.

    Lower bound is the ``alpha/2`` quantile of Beta(c, n-c+1) (0 when c=0),
    upper bound the ``1-alpha/2`` quantile of Beta(c+1, n-c) (1 when c=n).
    Works elementwise on arrays.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError("alpha must lie strictly between 0 and 1")
    c, n = _check_counts(c, n)
    c = c.astype(np.float64)
    n = n.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        lo = np.where(c > 0, betaincinv(np.maximum(c, 1.0), n - c + 1.0, alpha / 2.0), 0.0)
        hi = np.where(c < n, betaincinv(c + 1.0, np.maximum(n - c, 1.0), 1.0 - alpha / 2.0), 1.0)
    lo = np.clip(lo, 0.0, 1.0)
    hi = np.clip(hi, 0.0, 1.0)
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


@dataclass(frozen=True)
class EdgeEstimate:
    p_hat: float
    variance: float
    ci_lo: float
    ci_hi: float
    ratio: float


def edge_estimate(c: int, n: int, alpha: float = 0.05) -> EdgeEstimate:
    p, var = point_estimate(c, n)
    lo, hi = clopper_pearson(c, n, alpha)
    ratio = (hi - lo) / p if p > 0 else math.inf
    return EdgeEstimate(p, var, lo, hi, ratio)


@dataclass
class ConnectivityCounts:
    """``R x R`` streamline counts out of ``n`` seeds, stored as triplets of
    the non-zero entries. ``hemispheres`` optionally tags each region."""

    R: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    names: Optional[List[str]] = None
    hemispheres: Optional[List[str]] = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.n < 1:
            raise InvalidInputError("n must be at least 1")
        if not (len(self.rows) == len(self.cols) == len(self.counts)):
            raise InvalidInputError("triplet arrays differ in length")
        if len(self.rows):
            if min(self.rows.min(), self.cols.min()) < 0 or max(self.rows.max(), self.cols.max()) >= self.R:
                raise InvalidInputError("region index out of range")
            if self.counts.min() < 0 or self.counts.max() > self.n:
                raise InvalidInputError("counts must satisfy 0 <= c <= n")
        keep = self.counts > 0
        self.rows, self.cols, self.counts = self.rows[keep], self.cols[keep], self.counts[keep]
        o = np.lexsort((self.cols, self.rows))
        self.rows, self.cols, self.counts = self.rows[o], self.cols[o], self.counts[o]
        if len(self.rows) > 1 and np.any((np.diff(self.rows) == 0) & (np.diff(self.cols) == 0)):
            raise InvalidInputError("duplicate matrix entry")
        for attr in ("names", "hemispheres"):
            value = getattr(self, attr)
            if value is not None and len(value) != self.R:
                raise InvalidInputError(f"{attr} must list every region")

    @classmethod
    def from_dense(cls, matrix, n: int, **kwargs) -> "ConnectivityCounts":
        m = np.asarray(matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInputError("connectivity matrix must be square")
        if np.any(m != np.round(m)):
            raise InvalidInputError("counts must be integers")
        r, c = np.nonzero(m)
        return cls(m.shape[0], int(n), r, c, m[r, c].astype(np.int64), **kwargs)

    @property
    def is_dense(self) -> bool:
        return self.R <= DENSE_LIMIT

    def dense(self) -> np.ndarray:
        if not self.is_dense:
            raise InvalidInputError(f"R={self.R} exceeds the dense limit {DENSE_LIMIT}")
        m = np.zeros((self.R, self.R), dtype=np.int64)
        m[self.rows, self.cols] = self.counts
        return m

    def to_sparse(self) -> sparse.coo_matrix:
        return sparse.coo_matrix((self.counts, (self.rows, self.cols)), shape=(self.R, self.R))

    def scaled(self, factor: int) -> "ConnectivityCounts":
        return ConnectivityCounts(self.R, self.n * factor, self.rows, self.cols, self.counts * factor,
                                  self.names, self.hemispheres)


@dataclass
class ReliabilityReport:
    """Per-entry estimates plus summary.

    The grid covers all ``R*R`` entries when the matrix is dense-sized,
    otherwise only the non-zero ones. Zero-count entries have ``ratio = inf``
    and are excluded from the medians and from ``fraction_above_1``.
    """

    alpha: float
    n: int
    R: int
    rows: np.ndarray
    cols: np.ndarray
    counts: np.ndarray
    p_hat: np.ndarray
    variance: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    ratio: np.ndarray
    summary: Dict[str, object] = field(default_factory=dict)
    histogram: List[tuple] = field(default_factory=list)

    def edge(self, i: int, j: int) -> EdgeEstimate:
        hit = np.flatnonzero((self.rows == i) & (self.cols == j))
        if len(hit) == 0:
            return edge_estimate(0, self.n, self.alpha)
        k = hit[0]
        return EdgeEstimate(float(self.p_hat[k]), float(self.variance[k]), float(self.ci_lo[k]),
                            float(self.ci_hi[k]), float(self.ratio[k]))


def lower_median(values) -> Optional[float]:
    """Lower median (element ``(m-1)//2`` of the sorted values); None if empty."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        return None
    return float(v[(v.size - 1) // 2])


def p_histogram(p) -> List[tuple]:
    """Counts of non-zero probabilities per decade ``[10^e, 10^(e+1))``; the
    top bin is closed at 1."""
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    if p.size == 0:
        return []
    low = min(int(math.floor(math.log10(p.min()))), -1)
    exps = np.floor(np.log10(p)).astype(np.int64)
    exps = np.minimum(exps, -1)
    counts = np.bincount(exps - low, minlength=-low)
    return [(10.0 ** (low + i), 10.0 ** (low + i + 1), int(counts[i])) for i in range(-low)]


def reliability_report(counts: ConnectivityCounts, alpha: float = 0.05) -> ReliabilityReport:
    if counts.is_dense:
        rr, cc = np.meshgrid(np.arange(counts.R), np.arange(counts.R), indexing="ij")
        rows, cols = rr.ravel(), cc.ravel()
        c = counts.dense().ravel()
    else:
        rows, cols, c = counts.rows, counts.cols, counts.counts
    n = counts.n
    p, var = point_estimate(c, np.full(len(c), n))
    lo, hi = clopper_pearson(c, np.full(len(c), n), alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(p > 0, (hi - lo) / np.where(p > 0, p, 1.0), np.inf)

    finite = np.isfinite(ratio)
    n_zero = counts.R * counts.R - len(counts.counts)
    summary: Dict[str, object] = {
        "alpha": alpha,
        "n": n,
        "regions": counts.R,
        "entries": counts.R * counts.R,
        "finite_entries": int(counts.counts.size),
        "infinite_entries": int(n_zero),
        "fraction_above_1": None,
        "median_ratio": None,
    }
    nz_ratio = ratio[finite]
    if nz_ratio.size:
        summary["fraction_above_1"] = float(np.mean(nz_ratio > 1.0))
        summary["median_ratio"] = lower_median(nz_ratio)
    if counts.hemispheres is not None:
        hemi = np.asarray(counts.hemispheres)
        same = hemi[rows] == hemi[cols]
        summary["median_ratio_intra"] = lower_median(ratio[finite & same])
        summary["median_ratio_inter"] = lower_median(ratio[finite & ~same])
    return ReliabilityReport(alpha, n, counts.R, rows, cols, c, p, var, lo, hi, ratio,
                             summary, p_histogram(p))
