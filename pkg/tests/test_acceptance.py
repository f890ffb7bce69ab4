"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line; the lines
are repeated in the terminal summary."""

import gc
import math
import os
import statistics
import time

import numpy as np
import pytest

from mnss import io as mio
from mnss import synth
from mnss.analysis import NOISE, UNASSIGNED, AtlasSegmenter, RadiusGraphClustering
from mnss.cli import main
from mnss.core import (
    NormSpec,
    Tractogram,
    envelope_distance,
    flat_norm,
    holder_bound,
    mixed_norm_distance,
    resample_many,
)
from mnss.exceptions import FormatError
from mnss.index import SearchIndex, StreamlineNeighbors, build
from mnss.io import tck, trk
from mnss.stats import ConnectivityCounts, clopper_pearson

from conftest import ALL_SPECS
from oracles import all_pairs, clopper_pearson_bisect

pytestmark = pytest.mark.acceptance


def cores():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()


def median_time(func, repeats=3):
    gc.collect()
    func()
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        func()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def separated(n_bundles, count, seed, member_seed=None):
    rng = synth.make_rng(seed)
    cents = synth.planar_centroids(rng, n_bundles, length=100.0, spacing=50.0)
    recipe = synth.BundleRecipe(seed, [synth.Bundle(c, 2.0, count, 0.3) for c in cents])
    return synth.generate(recipe, member_seed)


def test_c01_exactness(verdict):
    t0 = time.perf_counter()
    atlas, _ = synth.generate(synth.brain_recipe(2000, 33, seed=1))
    # same seed and bundle count give the same centroids; fresh members
    held, _ = synth.generate(synth.brain_recipe(200, 33, seed=1), member_seed=101)
    rows = synth.oracle_rows(atlas)
    queries = synth.oracle_rows(held)
    specs = [NormSpec(2, 1, True), NormSpec(1, 1, False), NormSpec(2, 2, False),
             NormSpec(np.inf, 1, False)]
    worst, mismatched, checked = 0.0, 0, 0
    for spec in specs:
        for policy in ("direct", "direct-flip"):
            idx = SearchIndex.from_rows(rows, spec, orientation=policy)
            kd, kid, _ = idx.query_knn(queries, 10, resampled=True)
            indptr, rid, rd, _ = idx.query_radius(queries, 8.0, resampled=True)
            for q in range(len(queries)):
                want = synth.brute_knn(rows, queries[q], 10, spec, policy)
                mismatched += set(kid[q].tolist()) != {n.id for n in want}
                worst = max(worst, float(np.max(np.abs(kd[q] - [n.distance for n in want]))))
                want = synth.brute_radius(rows, queries[q], 8.0, spec, policy)
                a, b = indptr[q], indptr[q + 1]
                mismatched += set(rid[a:b].tolist()) != {n.id for n in want}
                got = dict(zip(rid[a:b].tolist(), rd[a:b].tolist()))
                for n in want:
                    if n.id in got:
                        worst = max(worst, abs(got[n.id] - n.distance))
                checked += 2
    elapsed = time.perf_counter() - t0
    ok = mismatched == 0 and worst <= 1e-6 and elapsed < 30.0
    verdict(1, ok, f"{checked} query sets, {mismatched} id mismatches, "
                   f"max |dd| {worst:.2e} mm, {elapsed:.1f} s (< 30 s)")
    assert ok


def test_c02_norm_chain(verdict):
    rng = np.random.default_rng(2)
    a, b = rng.normal(0, 20, (2, 10_000, 32, 3))
    slack = 1 + 1e-9
    sum21 = mixed_norm_distance(a, b, NormSpec(2, 1, False))
    violations = int(np.sum(flat_norm(a, b, 2) > sum21 * slack))
    violations += int(np.sum(sum21 > math.sqrt(3) * flat_norm(a, b, 1) * slack))
    for spec in ALL_SPECS:
        mixed = mixed_norm_distance(a, b, spec)
        violations += int(np.sum(envelope_distance(a, b, spec) > mixed * slack))
        violations += int(np.sum(holder_bound(a, b, spec) > mixed * slack))
    ok = violations == 0
    verdict(2, ok, f"10^4 pairs x {len(ALL_SPECS)} specs, {violations} violations")
    assert ok


def test_c03_parallel_segmentation(verdict):
    t0 = time.perf_counter()
    atlas, labels = synth.generate(synth.brain_recipe(30_000, 33, seed=0))
    queries, _ = synth.generate(synth.brain_recipe(100_000, 33, seed=0), member_seed=1)
    seg = AtlasSegmenter(radius=8.0, n_jobs=1).fit(atlas, labels)
    rows = resample_many(queries, 32)
    times, outputs = {}, {}
    for threads in (1, 8):
        seg.set_params(n_jobs=threads)
        times[threads] = median_time(lambda: seg.segment(rows, resampled=True))
        res = seg.segment(rows, resampled=True)
        outputs[threads] = b"".join(x.tobytes() for x in (res.labels, res.distances, res.nearest, res.flipped))
    elapsed = time.perf_counter() - t0
    speedup = times[1] / times[8]
    identical = outputs[1] == outputs[8]
    ok = speedup >= 3.0 and identical and elapsed < 180.0
    verdict(3, ok, f"speedup {speedup:.2f}x at 8 threads (>= 3x), t1 {times[1]:.2f} s, "
                   f"t8 {times[8]:.2f} s, identical={identical}, {cores()} cores, {elapsed:.0f} s")
    assert identical and elapsed < 180.0
    if speedup < 3.0 and cores() < 8:
        pytest.xfail(f"{cores()} core(s) available; 8-thread speedup needs 8 cores")
    assert speedup >= 3.0


def test_c04_tree_vs_linear_scan(verdict):
    tg, _ = synth.generate(synth.brain_recipe(100_000, 33, seed=4))
    nn = StreamlineNeighbors(n_neighbors=1, n_jobs=1).fit(tg)
    t0 = time.perf_counter()
    dist, ids = nn.kneighbors()
    tree = time.perf_counter() - t0
    rows = nn.index_.rows.astype(np.float64).reshape(len(tg), 32, 3)
    sample = np.random.default_rng(4).choice(len(tg), 20, replace=False)
    t0 = time.perf_counter()
    for i in sample:
        d = mixed_norm_distance(rows[i], rows)
        d[i] = np.inf
        j = int(np.argmin(d))
        assert d[j] == pytest.approx(dist[i, 0], abs=1e-6)
    scan = (time.perf_counter() - t0) * len(tg) / len(sample)
    ratio = scan / tree
    ok = ratio >= 20.0
    verdict(4, ok, f"tree {tree:.1f} s vs linear scan {scan:.0f} s (extrapolated from "
                   f"{len(sample)} queries): {ratio:.0f}x (>= 20x)")
    assert ok


def test_c05_build_scaling(verdict):
    sizes = (50_000, 100_000, 200_000)
    data = {n: synth.generate(synth.brain_recipe(n, 33, seed=5))[0] for n in sizes}
    runs = {n: [] for n in sizes}
    gc.collect()
    for n in sizes:
        build(data[n])
    # rounds interleave the sizes so machine noise hits all of them alike
    for _ in range(3):
        for n in sizes:
            t0 = time.perf_counter()
            build(data[n])
            runs[n].append(time.perf_counter() - t0)
    times = {n: statistics.median(runs[n]) for n in sizes}
    r1 = times[100_000] / times[50_000]
    r2 = times[200_000] / times[100_000]
    ok = r1 <= 2.4 and r2 <= 2.4
    verdict(5, ok, f"t(100k)/t(50k) {r1:.2f}, t(200k)/t(100k) {r2:.2f} (<= 2.4); "
                   + ", ".join(f"{n // 1000}k {t:.3f} s" for n, t in times.items()))
    assert ok


def test_c06_segmentation_accuracy(verdict):
    atlas, labels = separated(5, 200, seed=6)
    held, truth = separated(5, 100, seed=6, member_seed=61)
    far = synth.outliers(synth.make_rng(62), 50)
    est = AtlasSegmenter(radius=8.0).fit(atlas, labels)
    accuracy = float(np.mean(est.predict(held) == truth))
    unassigned = float(np.mean(est.predict(far) == UNASSIGNED))
    ok = accuracy >= 0.99 and unassigned == 1.0
    verdict(6, ok, f"held-out accuracy {accuracy:.4f} (>= 0.99), far outliers unassigned "
                   f"{unassigned:.0%} (100%)")
    assert ok


def test_c07_clustering(verdict):
    bundles, _ = separated(3, 100, seed=7)
    tg = synth.concatenate(bundles, synth.outliers(synth.make_rng(71), 30))
    model = RadiusGraphClustering(radius=8.0, min_size=10)
    labels = model.fit_predict(tg)
    n_clusters = len(set(labels.tolist()) - {NOISE})
    n_noise = int(np.sum(labels == NOISE))

    def partition(lab, ids):
        return {frozenset(ids[lab == c].tolist()) for c in set(lab.tolist()) - {NOISE}}

    ids = np.arange(len(tg))
    base = partition(labels, ids)
    invariant = True
    for seed in range(3):
        perm = np.random.default_rng(seed).permutation(len(tg))
        lab = RadiusGraphClustering(radius=8.0, min_size=10).fit_predict(tg.subset(perm))
        invariant &= partition(lab, perm) == base
        invariant &= set(perm[lab == NOISE].tolist()) == set(ids[labels == NOISE].tolist())
    ok = n_clusters == 3 and n_noise == 30 and invariant
    verdict(7, ok, f"{n_clusters} clusters (3), {n_noise} noise (30), permutation invariant={invariant}")
    assert ok


def test_c08_clopper_pearson(verdict):
    t0 = time.perf_counter()
    edge = 0.0
    for n in (1, 2, 5, 10, 100, 1000, 10_000):
        edge = max(edge, abs(clopper_pearson(0, n, 0.05)[1] - (1 - 0.025 ** (1 / n))))
        edge = max(edge, abs(clopper_pearson(n, n, 0.05)[0] - 0.025 ** (1 / n)))
        edge = max(edge, abs(clopper_pearson(0, n, 0.05)[0]), abs(clopper_pearson(n, n, 0.05)[1] - 1))
    c, n = all_pairs(200)
    lo, hi = clopper_pearson(c, n, 0.05)
    olo, ohi = clopper_pearson_bisect(c, n, 0.05)
    bisect = float(max(np.max(np.abs(lo - olo)), np.max(np.abs(hi - ohi))))
    rng = np.random.default_rng(8)
    coverage = {}
    for p in (0.01, 0.05, 0.5):
        for size in (100, 1000):
            k = rng.binomial(size, p, 10_000)
            clo, chi = clopper_pearson(k, np.full_like(k, size), 0.05)
            coverage[(p, size)] = float(np.mean((clo <= p) & (p <= chi)))
    elapsed = time.perf_counter() - t0
    worst_cov = min(coverage.values())
    ok = edge <= 1e-9 and bisect <= 1e-8 and worst_cov >= 0.945 and elapsed < 60.0
    verdict(8, ok, f"edge err {edge:.1e} (1e-9), bisection err {bisect:.1e} over {len(c)} pairs (1e-8), "
                   f"min coverage {worst_cov:.4f} (0.945), {elapsed:.1f} s (< 60 s)")
    assert ok


def test_c09_format_round_trips(verdict, tmp_path):
    tg, _ = synth.generate(synth.brain_recipe(1000, 33, seed=9))
    results = {}
    mio.write_tck(tg, tmp_path / "a.tck")
    back = mio.read_tck(tmp_path / "a.tck")
    results["tck"] = back.points.tobytes() == tg.points.tobytes() and np.array_equal(back.offsets, tg.offsets)
    mio.write_trk(tg, None, tmp_path / "a.trk")
    back, _ = mio.read_trk(tmp_path / "a.trk")
    results["trk"] = back.points.tobytes() == tg.points.tobytes() and np.array_equal(back.offsets, tg.offsets)
    scalars = np.random.default_rng(9).normal(size=(len(tg.points), 1)).astype(np.float32)
    header = trk.TrkHeader()
    header["n_scalars"] = 1
    mio.write_trk(Tractogram(tg.points, tg.offsets, meta={"scalars": scalars}), header, tmp_path / "s.trk")
    back, h = mio.read_trk(tmp_path / "s.trk")
    results["trk n_scalars=1"] = (h.n_scalars == 1 and back.points.tobytes() == tg.points.tobytes()
                                  and back.meta["scalars"].tobytes() == scalars.tobytes())

    good_trk = trk.trk_bytes(tg.subset(range(3)))
    good_tck = tck.tck_bytes(tg.subset(range(3)))
    body = good_tck.index(b"END\n")
    fixtures = {
        "trk magic": b"TRICK" + good_trk[5:],
        "trk hdr_size": good_trk[:996] + (999).to_bytes(4, "little") + good_trk[1000:],
        "trk truncated header": good_trk[:500],
        "trk truncated payload": good_trk[:-6],
        "tck magic": b"mrtrix image" + good_tck[12:],
        "tck datatype": good_tck[:body].replace(b"Float32LE", b"Int16LE") + good_tck[body:],
        "tck no END": good_tck[:body],
        "tck truncated payload": good_tck[:-6],
    }
    rejected = 0
    for name, raw in fixtures.items():
        path = tmp_path / ("bad." + name.split()[0])
        path.write_bytes(raw)
        reader = mio.read_trk if name.startswith("trk") else mio.read_tck
        try:
            reader(path)
        except FormatError as exc:
            rejected += exc.offset is not None or exc.line is not None
    ok = all(results.values()) and rejected == len(fixtures)
    verdict(9, ok, ", ".join(f"{k} {'exact' if v else 'DIFFERS'}" for k, v in results.items())
            + f"; {rejected}/{len(fixtures)} malformed fixtures rejected with a position")
    assert ok


PIPELINE = [
    ("atlas.tck", ["gen", "--n", "1500", "--bundles", "6", "--seed", "10", "--out", "{d}/atlas.tck",
                   "--labels-out", "{d}/atlas.labels"]),
    ("noisy.tck", ["gen", "--n", "600", "--bundles", "6", "--seed", "10", "--outliers", "20",
                   "--out", "{d}/noisy.tck"]),
    ("queries.trk", ["gen", "--n", "400", "--bundles", "6", "--seed", "10", "--out", "{d}/queries.trk"]),
    ("resampled.tck", ["resample", "--in", "{d}/queries.trk", "--out", "{d}/resampled.tck"]),
    ("atlas.idx", ["index-build", "--in", "{d}/atlas.tck", "--out", "{d}/atlas.idx"]),
    ("knn.txt", ["knn", "--index", "{d}/atlas.idx", "--in", "{d}/queries.trk", "--k", "5",
                 "--out", "{d}/knn.txt", "{threads}"]),
    ("radius.txt", ["radius", "--index", "{d}/atlas.idx", "--in", "{d}/queries.trk",
                    "--out", "{d}/radius.txt", "{threads}"]),
    ("segment.txt", ["segment", "--index", "{d}/atlas.idx", "--labels", "{d}/atlas.labels",
                     "--in", "{d}/queries.trk", "--out", "{d}/segment.txt", "{threads}"]),
    ("graph.txt", ["graph", "--in", "{d}/noisy.tck", "--out", "{d}/graph.txt", "{threads}"]),
    ("clusters.txt", ["cluster", "--in", "{d}/noisy.tck", "--out", "{d}/clusters.txt",
                      "--centroids-out", "{d}/centroids.tck", "{threads}"]),
    ("filtered.tck", ["filter", "--in", "{d}/noisy.tck", "--clusters", "{d}/clusters.txt",
                      "--out", "{d}/filtered.tck"]),
    ("dense.tck", ["filter", "--in", "{d}/noisy.tck", "--min-density", "5", "--out", "{d}/dense.tck",
                   "{threads}"]),
    ("report.txt", ["stats-ci", "--counts", "{d}/counts.txt", "--out", "{d}/report.txt",
                    "--json", "{d}/report.json"]),
]


def run_pipeline(d, threads):
    counts = np.random.default_rng(10).integers(0, 60, (20, 20))
    mio.write_connectivity(d / "counts.txt", ConnectivityCounts.from_dense(counts, 500))
    for _, argv in PIPELINE:
        args = []
        for a in argv:
            if a == "{threads}":
                args += ["--threads", str(threads)]
            else:
                args.append(a.format(d=d))
        assert main(args) == 0, args
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_c10_determinism(verdict, tmp_path):
    outputs = {}
    for label, threads in (("run1", 1), ("run2", 1), ("t4", 4), ("t8", 8)):
        d = tmp_path / label
        d.mkdir()
        outputs[label] = run_pipeline(d, threads)
    differing = sorted({name for label in ("run2", "t4", "t8")
                        for name, data in outputs[label].items() if outputs["run1"].get(name) != data})
    ok = not differing and len(outputs["run1"]) >= len(PIPELINE)
    verdict(10, ok, f"{len(outputs['run1'])} files x (2 runs, threads 1/4/8): "
                    + ("all byte-identical" if ok else "differ: " + ", ".join(differing)))
    assert ok
