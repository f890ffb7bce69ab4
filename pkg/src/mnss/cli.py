"""``mnss`` command-line front end.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
Diagnostics go to stderr; data goes to files or stdout. Outputs never
depend on ``--threads`` (which falls back to ``$MNSS_THREADS``, then to
every core), so the thread count is reported on stderr only.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from . import io as mio
from .analysis import BundleAtlas, build_radius_graph, cluster, density_filter, segment_to_atlas
from .core import DEFAULT_N_POINTS, ORIENTATIONS, NormSpec, Tractogram, resample_many
from .exceptions import MNSSError
from .index import BOUNDS, DEFAULT_LEAF_SIZE, SearchIndex, build
from .stats import reliability_report
from .synth import BenchConfig, bench, brain_recipe, concatenate, generate, make_rng, outliers

log = logging.getLogger("mnss")

DEFAULT_RADIUS = 8.0
DEFAULT_ALPHA = 0.05


class UsageError(Exception):
    def __init__(self, message, parser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self)


def _norm(text):
    try:
        return NormSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _int_list(text):
    try:
        values = [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("thread counts must be positive")
    return values


# -- shared option groups ---------------------------------------------------

def _add_threads(p):
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: $MNSS_THREADS, else all cores)")


def _add_geometry(p, orientation):
    p.add_argument("--n-points", type=_positive_int, default=DEFAULT_N_POINTS,
                   help="points per resampled streamline (default: %(default)s)")
    p.add_argument("--norm", type=_norm, default=NormSpec(),
                   help="mixed norm as 'inner,outer[,avg|sum]' with exponents 1, 2 or inf "
                        "(default: 2,1,avg)")
    p.add_argument("--leaf-size", type=_positive_int, default=DEFAULT_LEAF_SIZE,
                   help="k-d tree leaf capacity (default: %(default)s)")
    p.add_argument("--bound", choices=sorted(BOUNDS), default="mixed",
                   help="subtree pruning bound (default: %(default)s)")
    p.add_argument("--orientation", choices=ORIENTATIONS, default=orientation,
                   help="orientation policy (default: %(default)s)")
    _add_threads(p)


def _add_source(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--index", help="index snapshot written by index-build")
    src.add_argument("--atlas", help="reference tractogram (.tck or .trk) to index on the fly")


def _provenance(args, **extra):
    meta = {"mnss": __version__, "command": args.command}
    for key in ("n_points", "norm", "leaf_size", "bound", "orientation", "radius", "k",
                "min_size", "min_density", "alpha", "seed"):
        if getattr(args, key, None) is not None:
            meta[key.replace("_", "-")] = getattr(args, key)
    meta.update(extra)
    return meta


def _require_files(*paths):
    for path in paths:
        if path is not None and path != "-" and not os.path.isfile(path):
            raise MNSSError(f"{path}: no such file")


def _source_index(args) -> SearchIndex:
    _require_files(args.index, args.atlas)
    if args.index:
        index = mio.load_index(args.index)
        if index.n_points != args.n_points and args.n_points != DEFAULT_N_POINTS:
            raise MNSSError(f"--n-points {args.n_points} conflicts with the snapshot's {index.n_points}")
        args.n_points, args.norm = index.n_points, index.spec
        return index
    return build(mio.read_tractogram(args.atlas), args.n_points, args.norm, args.leaf_size,
                 args.orientation, args.bound)


# -- subcommands ------------------------------------------------------------------

def cmd_resample(args):
    _require_files(args.input)
    tg = mio.read_tractogram(args.input)
    rows = resample_many(tg, args.n_points).astype(np.float32)
    out = Tractogram(rows.reshape(-1, 3), np.arange(len(tg) + 1, dtype=np.int64) * args.n_points)
    mio.write_tck(out, args.out, {"mnss_command": "resample", "mnss_n_points": str(args.n_points)})


def cmd_index_build(args):
    _require_files(args.input)
    index = build(mio.read_tractogram(args.input), args.n_points, args.norm, args.leaf_size,
                  args.orientation, args.bound)
    mio.save_index(index, args.out)
    log.info("indexed %d streamlines into %d nodes", len(index), index.n_nodes)


def cmd_knn(args):
    _require_files(args.input)
    index = _source_index(args)
    queries = mio.read_tractogram(args.input)
    dist, ids, flips = index.query_knn(queries, args.k, args.orientation, args.threads)
    q = len(queries)
    counts = np.isfinite(dist).sum(axis=1)
    indptr = np.zeros(q + 1, np.int64)
    np.cumsum(counts, out=indptr[1:])
    keep = np.isfinite(dist)
    mio.write_neighbors(args.out, indptr, ids[keep], dist[keep], flips[keep], _provenance(args))


def cmd_radius(args):
    _require_files(args.input)
    index = _source_index(args)
    queries = mio.read_tractogram(args.input)
    indptr, ids, dist, flips = index.query_radius(queries, args.radius, args.orientation, args.threads)
    mio.write_neighbors(args.out, indptr, ids, dist, flips, _provenance(args))


def cmd_segment(args):
    _require_files(args.labels, args.input)
    labels, names = mio.read_labels(args.labels)
    index = _source_index(args)
    if args.atlas:
        BundleAtlas(index.rows.reshape(len(index), index.n_points, 3), labels, names)
    queries = mio.read_tractogram(args.input)
    seg = segment_to_atlas(index, labels, queries, args.radius, args.threads,
                           orientation=args.orientation)
    mio.write_segmentation(args.out, seg, args.radius, _provenance(args))


def _graph_for(args, tg):
    index = build(tg, args.n_points, args.norm, args.leaf_size, args.orientation, args.bound)
    return index, build_radius_graph(index, args.radius, args.threads)


def cmd_graph(args):
    _require_files(args.input)
    _, graph = _graph_for(args, mio.read_tractogram(args.input))
    mio.write_graph(args.out, graph, _provenance(args))


def cmd_cluster(args):
    _require_files(args.input)
    tg = mio.read_tractogram(args.input)
    index, graph = _graph_for(args, tg)
    rows = index.rows.astype(np.float64).reshape(len(index), index.n_points, 3)
    result = cluster(graph, args.min_size, rows if args.centroids_out else None, args.norm)
    mio.write_clusters(args.out, result.assignment, result.density, _provenance(args))
    if args.centroids_out:
        c = np.asarray(result.centroids, dtype=np.float32).reshape(-1, 3)
        offsets = np.arange(result.n_clusters + 1, dtype=np.int64) * index.n_points
        mio.write_tck(Tractogram(c, offsets), args.centroids_out, {"mnss_command": "cluster"})


def cmd_filter(args):
    _require_files(args.input, args.clusters, args.graph)
    tg = mio.read_tractogram(args.input)
    if args.clusters:
        assignment, _ = mio.read_clusters(args.clusters)
        if len(assignment) != len(tg):
            raise MNSSError("cluster file does not match the tractogram")
        keep = assignment >= 0
    else:
        if args.graph:
            graph = mio.read_graph(args.graph)
            if graph.n != len(tg):
                raise MNSSError("graph does not match the tractogram")
        else:
            _, graph = _graph_for(args, tg)
        keep = density_filter(np.diff(graph.indptr), args.min_density)
    kept = np.flatnonzero(keep)
    log.info("kept %d of %d streamlines", len(kept), len(tg))
    mio.write_tractogram(tg.subset(kept), args.out)
    if args.kept_out:
        mio.write_labels(args.kept_out, kept, meta=_provenance(args))


def cmd_stats_ci(args):
    _require_files(args.counts)
    counts = mio.read_connectivity(args.counts)
    report = reliability_report(counts, args.alpha)
    mio.write_report(args.out, report, _provenance(args))
    if args.json:
        mio.text.write_report_json(args.json, report)


def cmd_gen(args):
    recipe = brain_recipe(args.n, args.bundles, args.seed, args.tube_radius, args.jitter)
    tg, labels = generate(recipe)
    if args.outliers:
        extra = outliers(make_rng(args.seed + 1), args.outliers)
        tg = concatenate(tg, extra)
        labels = np.concatenate([labels, np.full(args.outliers, -1, np.int64)])
    mio.write_tractogram(tg, args.out)
    if args.labels_out:
        names = {b: f"bundle_{b:02d}" for b in range(args.bundles)}
        mio.write_labels(args.labels_out, labels, names, _provenance(args))


def cmd_bench(args):
    config = BenchConfig(atlas_size=args.atlas_size, n_bundles=args.bundles,
                         query_size=args.queries, threads=tuple(args.thread_counts),
                         repeats=args.repeats, seed=args.seed, radius=args.radius)
    report = bench(config)
    mio.write_kv(args.out, "bench", report.as_dict(), _provenance(args))
    print(report.table(), file=sys.stderr)


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mnss", description="Exact mixed-norm streamline search and analysis.")
    parser.add_argument("--version", action="version", version=f"mnss {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("resample", help="resample streamlines to equal point counts")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output .tck")
    p.add_argument("--n-points", type=_positive_int, default=DEFAULT_N_POINTS)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("index-build", help="build and save a search index")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="snapshot path")
    _add_geometry(p, "direct-flip")
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("knn", help="k nearest reference streamlines of each query")
    _add_source(p)
    p.add_argument("--in", dest="input", required=True, help="query tractogram")
    p.add_argument("--k", type=_positive_int, default=5)
    p.add_argument("--out", default="-")
    _add_geometry(p, "direct-flip")
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("radius", help="reference streamlines within a radius of each query")
    _add_source(p)
    p.add_argument("--in", dest="input", required=True, help="query tractogram")
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS)
    p.add_argument("--out", default="-")
    _add_geometry(p, "direct-flip")
    p.set_defaults(func=cmd_radius)

    p = sub.add_parser("segment", help="label queries with the bundle of their nearest atlas streamline")
    _add_source(p)
    p.add_argument("--labels", required=True, help="atlas label list")
    p.add_argument("--in", dest="input", required=True, help="tractogram to segment")
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS,
                   help="largest accepted distance (default: %(default)s)")
    p.add_argument("--out", default="-")
    _add_geometry(p, "direct-flip")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("graph", help="radius neighbourhood graph")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS)
    p.add_argument("--out", default="-")
    _add_geometry(p, "direct")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("cluster", help="connected components of the radius graph")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS)
    p.add_argument("--min-size", type=_positive_int, default=10,
                   help="smaller components become noise (default: %(default)s)")
    p.add_argument("--out", default="-")
    p.add_argument("--centroids-out", help="write cluster mean streamlines to this .tck")
    _add_geometry(p, "direct-flip")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("filter", help="drop noise or low-density streamlines")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="filtered tractogram")
    how = p.add_mutually_exclusive_group(required=True)
    how.add_argument("--clusters", help="cluster file; noise streamlines are dropped")
    how.add_argument("--min-density", type=int, help="keep streamlines with this many neighbours")
    p.add_argument("--graph", help="precomputed graph for --min-density")
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS)
    p.add_argument("--kept-out", help="write the kept streamline ids as a label list")
    _add_geometry(p, "direct-flip")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("stats-ci", help="Clopper-Pearson reliability report for connectivity counts")
    p.add_argument("--counts", required=True, help="connectivity matrix file")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--out", default="-")
    p.add_argument("--json", help="also write the summary as JSON")
    p.set_defaults(func=cmd_stats_ci)

    p = sub.add_parser("gen", help="generate a synthetic bundle tractogram")
    p.add_argument("--n", type=_positive_int, default=1000, help="streamline count")
    p.add_argument("--bundles", type=_positive_int, default=33)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tube-radius", type=_positive_float, default=3.0)
    p.add_argument("--jitter", type=float, default=0.3)
    p.add_argument("--outliers", type=int, default=0, help="isolated streamlines appended (label -1)")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="time build, segmentation and a linear scan")
    p.add_argument("--atlas-size", type=_positive_int, default=30_000)
    p.add_argument("--bundles", type=_positive_int, default=33)
    p.add_argument("--queries", type=_positive_int, default=100_000)
    p.add_argument("--thread-counts", type=_int_list, default=[1, 8])
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)
    return parser


def _validate(args, parser):
    if args.command == "filter":
        if args.graph and args.clusters:
            raise UsageError("--graph only applies with --min-density", parser)
    if getattr(args, "alpha", None) is not None and not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)", parser)
    if getattr(args, "outliers", 0) < 0:
        raise UsageError("--outliers must be non-negative", parser)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _validate(args, parser)
    except UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"{exc.parser.prog}: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="mnss: %(message)s")
    if hasattr(args, "threads"):
        log.info("threads: %s", args.threads or "default")
    try:
        args.func(args)
    except (MNSSError, ValueError, OSError) as exc:
        print(f"mnss {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


run = main

if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
