"""Seeded synthetic tractograms, brute-force oracles and a timing harness.

Randomness comes from numpy's Philox4x64 counter-based generator. Floats are
drawn as ``(u64 >> 11) * 2**-53`` and then only combined with add, multiply,
divide and sqrt, all correctly rounded under IEEE 754, so a seed yields the
same coordinates on every conforming platform.
"""

from __future__ import annotations

import logging
import platform
import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import core
from ._parallel import available_cores
from .core import L21_AVERAGE, NormSpec, Tractogram, check_orientation
from .exceptions import InvalidInputError
from .index import Neighbor

log = logging.getLogger(__name__)

BRAIN_BOX = ((-70.0, 70.0), (-90.0, 90.0), (-60.0, 60.0))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class Bundle:
    centroid: np.ndarray
    radius: float = 2.0
    count: int = 100
    jitter: float = 0.2

    def __post_init__(self):
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(-1, 3)
        if self.count < 1:
            raise InvalidInputError("bundle member count must be at least 1")
        if not self.radius > 0:
            raise InvalidInputError("tube radius must be positive")
        if self.jitter < 0:
            raise InvalidInputError("jitter must be non-negative")
        if len(self.centroid) < 2:
            raise InvalidInputError("centroid needs at least 2 points")


@dataclass
class BundleRecipe:
    seed: int
    bundles: List[Bundle]
    length_range: Tuple[float, float] = (40.0, 250.0)


def _unit(v):
    return v / np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


def _in_ball(rng, n, radius, tries=16):
    """``n`` points uniform in a ball by rejection from the cube."""
    cand = (2.0 * rng.random((n, tries, 3)) - 1.0)
    inside = np.sum(cand * cand, axis=-1) <= 1.0
    first = np.argmax(inside, axis=1)
    out = cand[np.arange(n), first] * radius
    out[~inside.any(axis=1)] = 0.0
    return out


def random_walk(rng, length: float, step: float = 2.5, box=BRAIN_BOX,
                turn: float = 0.25) -> np.ndarray:
    """Smooth random walk of the given arc length, reflected inside ``box``."""
    n = max(2, int(round(length / step)) + 1)
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    pts = np.empty((n, 3))
    pts[0] = lo + (hi - lo) * (0.25 + 0.5 * rng.random(3))
    direction = _unit(2.0 * rng.random(3) - 1.0)
    kicks = 2.0 * rng.random((n, 3)) - 1.0
    for i in range(1, n):
        direction = _unit(direction + turn * kicks[i])
        nxt = pts[i - 1] + step * direction
        outside = (nxt < lo) | (nxt > hi)
        if outside.any():
            direction = np.where(outside, -direction, direction)
            nxt = pts[i - 1] + step * direction
        pts[i] = nxt
    return pts


def planar_centroids(rng, n_bundles: int, length: float = 100.0, spacing: float = 50.0,
                     step: float = 2.5) -> List[np.ndarray]:
    """Copies of one curve in the y=0 plane, shifted by ``spacing`` along y.

    Every point pairing between two copies (either orientation) is at least
    ``spacing`` apart, which makes the bundles provably separated.
    """
    base = random_walk(rng, length, step, box=((-60.0, 60.0), (0.0, 0.0), (-50.0, 50.0)))
    base[:, 1] = 0.0
    return [base + np.array([0.0, b * spacing, 0.0]) for b in range(n_bundles)]


def brain_recipe(n_streamlines: int, n_bundles: int = 33, seed: int = 0, radius: float = 3.0,
                 jitter: float = 0.3, length_range=(40.0, 250.0), step: float = 2.5) -> BundleRecipe:
    """Desk-scale whole-brain stand-in: random-walk bundles filling a head-sized box."""
    rng = make_rng(seed)
    lo, hi = length_range
    counts = np.full(n_bundles, n_streamlines // n_bundles)
    counts[: n_streamlines - counts.sum()] += 1
    bundles = []
    for b in range(n_bundles):
        length = lo * 1.1 + (hi * 0.9 - lo * 1.1) * rng.random()
        bundles.append(Bundle(random_walk(rng, length, step), radius, int(counts[b]), jitter))
    return BundleRecipe(seed, bundles, (lo, hi))


def _arc_lengths(points):
    return np.sum(np.sqrt(np.sum(np.diff(points, axis=-2) ** 2, axis=-1)), axis=-1)


def _trim(points, hi):
    """Drop trailing points until the polyline is no longer than ``hi``."""
    seg = np.sqrt(np.sum(np.diff(points, axis=0) ** 2, axis=1))
    cum = np.cumsum(seg)
    keep = int(np.searchsorted(cum, hi, side="right")) + 1
    return points[: max(2, keep)]


def generate(recipe: BundleRecipe, member_seed: Optional[int] = None) -> Tuple[Tractogram, np.ndarray]:
    """Draw the members of every bundle.

    Member ``i`` of a bundle is its centroid displaced by an offset that
    varies linearly along the streamline between two points of the tube
    ball, plus uniform per-point jitter. A random half of each bundle is
    stored reversed. A single-member bundle with zero jitter reproduces its
    centroid exactly. Returns the tractogram and ground-truth bundle labels.
    """
    rng = make_rng(recipe.seed if member_seed is None else member_seed)
    lo, hi = recipe.length_range
    streamlines = []
    labels = []
    for b, bundle in enumerate(recipe.bundles):
        c = bundle.centroid
        n, m = bundle.count, len(c)
        t = np.linspace(0.0, 1.0, m)[None, :, None]
        if n == 1:
            start = np.zeros((1, 3))
            end = np.zeros((1, 3))
        else:
            start = _in_ball(rng, n, bundle.radius)
            end = _in_ball(rng, n, bundle.radius)
        jitter = bundle.jitter * (2.0 * rng.random((n, m, 3)) - 1.0)
        members = c[None] + start[:, None] + (end - start)[:, None] * t + jitter
        flip = np.zeros(n, bool)
        flip[rng.permutation(n)[: n // 2]] = True
        for i in range(n):
            s = members[i]
            if _arc_lengths(s) > hi:
                s = _trim(s, hi)
            streamlines.append(s[::-1] if flip[i] else s)
        labels.append(np.full(n, b, dtype=np.int64))
    labels = np.concatenate(labels) if labels else np.zeros(0, np.int64)
    return Tractogram.from_streamlines(streamlines, labels=labels), labels


def outliers(rng, n: int, origin=(0.0, -200.0, 0.0), spacing: float = 60.0,
             length: float = 60.0, step: float = 2.5) -> Tractogram:
    """``n`` isolated streamlines laid out on a line, ``spacing`` mm apart."""
    base = np.asarray(origin, dtype=np.float64)
    out = []
    for i in range(n):
        walk = random_walk(rng, length, step, box=((-15.0, 15.0), (-15.0, 15.0), (-15.0, 15.0)))
        out.append(walk - walk.mean(axis=0) + base + np.array([0.0, -spacing * i, 0.0]))
    return Tractogram.from_streamlines(out)


def concatenate(*tractograms: Tractogram) -> Tractogram:
    return Tractogram.from_streamlines([s for t in tractograms for s in t])


# -- brute-force oracles ---------------------------------------------------

def oracle_rows(tractogram, n_points: int = core.DEFAULT_N_POINTS) -> np.ndarray:
    """Resampled rows rounded through float32, the index's storage precision."""
    return core.resample_many(tractogram, n_points).astype(np.float32).astype(np.float64)


def _scan(rows, query, spec, policy):
    check_orientation(policy)
    rows = np.asarray(rows, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    d = core.mixed_norm_distance(query, rows, spec)
    d = np.atleast_1d(d)
    flipped = np.zeros(len(rows), bool)
    if policy == "direct-flip":
        dr = np.atleast_1d(core.mixed_norm_distance(core.reverse(query), rows, spec))
        flipped = dr < d
        d = np.where(flipped, dr, d)
    return d, flipped


def brute_knn(rows, query, k: int, spec: NormSpec = L21_AVERAGE,
              policy: str = "direct") -> List[Neighbor]:
    """Full linear scan; ``rows`` is ``(N, K, 3)`` and ``query`` ``(K, 3)``."""
    d, flipped = _scan(rows, query, spec, policy)
    o = np.lexsort((np.arange(len(d)), d))[:k]
    return [Neighbor(int(i), float(d[i]), bool(flipped[i])) for i in o]


def brute_radius(rows, query, r: float, spec: NormSpec = L21_AVERAGE,
                 policy: str = "direct") -> List[Neighbor]:
    d, flipped = _scan(rows, query, spec, policy)
    hit = np.flatnonzero(d <= r)
    o = hit[np.lexsort((hit, d[hit]))]
    return [Neighbor(int(i), float(d[i]), bool(flipped[i])) for i in o]


def brute_pairs(rows, r: float, spec: NormSpec = L21_AVERAGE, policy: str = "direct"):
    """All ``(i, j, distance)`` with ``i < j`` within ``r``, by O(N^2) thresholding."""
    rows = np.asarray(rows, dtype=np.float64)
    out = []
    for i in range(len(rows) - 1):
        d, _ = _scan(rows[i + 1:], rows[i], spec, policy)
        for j in np.flatnonzero(d <= r):
            out.append((i, i + 1 + int(j), float(d[j])))
    return out


# -- benchmark harness ------------------------------------------------------

@dataclass
class BenchConfig:
    atlas_size: int = 30_000
    n_bundles: int = 33
    query_size: int = 100_000
    threads: Sequence[int] = (1, 8)
    repeats: int = 3
    seed: int = 0
    n_points: int = core.DEFAULT_N_POINTS
    radius: float = 8.0
    brute_queries: int = 50

    def __post_init__(self):
        if self.repeats < 1:
            raise InvalidInputError("repeats must be at least 1")
        if not self.threads:
            raise InvalidInputError("at least one thread count is required")


@dataclass
class BenchReport:
    timings: Dict[str, float] = field(default_factory=dict)
    runs: Dict[str, List[float]] = field(default_factory=dict)
    threads: List[int] = field(default_factory=list)
    skipped_threads: List[int] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)
    speedups: Dict[str, float] = field(default_factory=dict)
    machine: Dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        for key, value in self.machine.items():
            out[f"machine.{key}"] = value
        out["threads"] = ",".join(map(str, self.threads))
        out["skipped_threads"] = ",".join(map(str, self.skipped_threads))
        for key, value in self.timings.items():
            out[f"time.{key}"] = value
        for key, value in self.counters.items():
            out[f"count.{key}"] = value
        for key, value in self.speedups.items():
            out[f"speedup.{key}"] = value
        return out

    def table(self) -> str:
        lines = [f"{'task':<32} {'median_s':>12}"]
        for key, value in self.timings.items():
            lines.append(f"{key:<32} {value:>12.4f}")
        for key, value in self.speedups.items():
            lines.append(f"{'speedup ' + key:<32} {value:>12.2f}")
        return "\n".join(lines)


def time_median(func, repeats: int, warmup: bool = True) -> Tuple[float, List[float], object]:
    """Median wall time of ``repeats`` calls after one discarded warmup."""
    result = func() if warmup else None
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = func()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs), runs, result


def bench(config: BenchConfig) -> BenchReport:
    """Time index build, nearest-atlas segmentation per thread count and a
    linear-scan extrapolation on the same workload."""
    from .analysis import AtlasSegmenter

    report = BenchReport()
    report.machine = {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "cores": str(available_cores()),
    }
    cores = available_cores()
    for t in config.threads:
        if t > cores:
            log.warning("skipping %d threads: only %d cores available", t, cores)
            report.skipped_threads.append(int(t))
        else:
            report.threads.append(int(t))

    recipe = brain_recipe(config.atlas_size, config.n_bundles, config.seed)
    atlas, labels = generate(recipe)
    queries, _ = generate(_resized(recipe, config.query_size), member_seed=config.seed + 1)
    query_rows = core.resample_many(queries, config.n_points)

    seg = AtlasSegmenter(radius=config.radius, n_points=config.n_points, n_jobs=1)
    med, runs, _ = time_median(lambda: seg.fit(atlas, labels), config.repeats)
    report.timings["build"] = med
    report.runs["build"] = runs

    for t in report.threads:
        seg.set_params(n_jobs=t)
        med, runs, _ = time_median(lambda: seg.segment(query_rows, resampled=True), config.repeats)
        report.timings[f"segment.threads{t}"] = med
        report.runs[f"segment.threads{t}"] = runs

    n_brute = min(config.brute_queries, len(query_rows))
    rows = seg.index_.rows.astype(np.float64).reshape(len(atlas), config.n_points, 3)
    med, runs, _ = time_median(
        lambda: [brute_knn(rows, q, 1, seg.index_.spec, "direct-flip") for q in query_rows[:n_brute]],
        1, warmup=False)
    report.timings["segment.brute_extrapolated"] = med * len(query_rows) / n_brute
    report.counters["atlas"] = len(atlas)
    report.counters["queries"] = len(query_rows)
    report.counters["brute_subset"] = n_brute

    if report.threads:
        base = report.timings[f"segment.threads{report.threads[0]}"]
        for t in report.threads[1:]:
            report.speedups[f"threads{t}"] = base / report.timings[f"segment.threads{t}"]
        report.speedups["tree_vs_brute"] = report.timings["segment.brute_extrapolated"] / base
    return report


def _resized(recipe: BundleRecipe, total: int) -> BundleRecipe:
    n = len(recipe.bundles)
    counts = np.full(n, total // n)
    counts[: total - counts.sum()] += 1
    bundles = [Bundle(b.centroid, b.radius, int(c), b.jitter) for b, c in zip(recipe.bundles, counts)]
    return BundleRecipe(recipe.seed, bundles, recipe.length_range)
