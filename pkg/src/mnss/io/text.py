"""Line-oriented text formats.

All files are UTF-8 with LF endings. Lines starting with ``#`` are comments
and may appear anywhere; writers use them for provenance. The first data
line is a header naming the format and its counts, then one record per
line. Floats are written with ``repr`` (shortest round-trip form).

=============  ==========================  =================================
format         header                      records
=============  ==========================  =================================
labels         ``labels N B``              B lines ``name <id> <text>``, then
                                           N lines ``<label>``
segmentation   ``segmentation N r_max``    ``<label> <distance> <nearest>
                                           <flipped>``
clusters       ``clusters N C``            ``<cluster> <density>``
neighbors      ``neighbors Q E``           ``<query> <id> <distance> <flipped>``,
                                           grouped by query, ranked within
graph          ``graph N E radius``        ``<i> <j> <distance>`` with i < j
connectivity   ``connectivity R n E``      E lines ``<i> <j> <count>``, then
                                           optional ``region <i> <hemi>
                                           <name>`` lines
dense matrix   ``connectivity-dense R n``  R lines of R counts
report         ``report``                  ``<key> <value>`` lines, then
                                           ``table E`` and E lines ``<i> <j>
                                           <c> <p_hat> <variance> <ci_lo>
                                           <ci_hi> <ratio>``
=============  ==========================  =================================

Label value -1 marks UNASSIGNED (segmentation) or NOISE (clusters).
"""

import json
import math
import os

import numpy as np

from ..exceptions import FormatError
from ..stats import ConnectivityCounts, ReliabilityReport


def fmt_float(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _comments(meta):
    return [f"# {k}: {v}" for k, v in (meta or {}).items()]


def _write(path, lines):
    text = "\n".join(lines) + "\n"
    if path in ("-", None):
        import sys
        sys.stdout.write(text)
        return
    tmp = f"{path}.part"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


class _Lines:
    """Iterator over non-comment, non-blank lines carrying line numbers."""

    def __init__(self, path):
        self.path = path
        with open(path, "r", encoding="utf-8") as f:
            raw = f.read().split("\n")
        self.items = [(i + 1, line.strip()) for i, line in enumerate(raw)
                      if line.strip() and not line.lstrip().startswith("#")]
        self.pos = 0

    def next(self, what):
        if self.pos >= len(self.items):
            last = self.items[-1][0] if self.items else 1
            raise FormatError(f"unexpected end of file, expected {what}", line=last, path=self.path)
        item = self.items[self.pos]
        self.pos += 1
        return item

    def done(self):
        if self.pos < len(self.items):
            no, _ = self.items[self.pos]
            raise FormatError("unexpected trailing record", line=no, path=self.path)

    def fail(self, no, msg):
        raise FormatError(msg, line=no, path=self.path)

    def header(self, name, n_fields):
        no, line = self.next(f"'{name}' header")
        parts = line.split()
        if not parts or parts[0] != name or len(parts) != n_fields + 1:
            self.fail(no, f"expected header '{name}' with {n_fields} fields, got {line!r}")
        return no, parts[1:]


def _int(lines, no, text):
    try:
        return int(text)
    except ValueError:
        lines.fail(no, f"not an integer: {text!r}")


def _float(lines, no, text):
    try:
        return float(text)
    except ValueError:
        lines.fail(no, f"not a number: {text!r}")


def _record(lines, what, n_fields):
    no, line = lines.next(what)
    parts = line.split()
    if len(parts) != n_fields:
        lines.fail(no, f"expected {n_fields} fields, got {len(parts)}")
    return no, parts


# -- labels -------------------------------------------------------------------

def write_labels(path, labels, names=None, meta=None):
    names = names or {}
    lines = _comments(meta) + [f"labels {len(labels)} {len(names)}"]
    lines += [f"name {int(k)} {v}" for k, v in sorted(names.items())]
    lines += [str(int(x)) for x in labels]
    _write(path, lines)


def read_labels(path):
    """Return ``(labels, names)``."""
    lines = _Lines(path)
    no, (n, b) = lines.header("labels", 2)
    n, b = _int(lines, no, n), _int(lines, no, b)
    names = {}
    for _ in range(b):
        no, line = lines.next("name record")
        parts = line.split(None, 2)
        if len(parts) != 3 or parts[0] != "name":
            lines.fail(no, "expected 'name <id> <text>'")
        names[_int(lines, no, parts[1])] = parts[2]
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        no, parts = _record(lines, "label", 1)
        labels[i] = _int(lines, no, parts[0])
    lines.done()
    return labels, names


# -- segmentation ---------------------------------------------------------------

def write_segmentation(path, result, r_max, meta=None):
    lines = _comments(meta) + [f"segmentation {len(result)} {fmt_float(r_max)}"]
    for lab, d, near, flip in zip(result.labels, result.distances, result.nearest, result.flipped):
        lines.append(f"{int(lab)} {fmt_float(d)} {int(near)} {int(bool(flip))}")
    _write(path, lines)


def read_segmentation(path):
    from ..analysis import SegmentationResult

    lines = _Lines(path)
    no, (n, r_max) = lines.header("segmentation", 2)
    n = _int(lines, no, n)
    r_max = _float(lines, no, r_max)
    labels = np.empty(n, np.int64)
    dist = np.empty(n)
    near = np.empty(n, np.int64)
    flip = np.empty(n, bool)
    for i in range(n):
        no, p = _record(lines, "segmentation record", 4)
        labels[i] = _int(lines, no, p[0])
        dist[i] = _float(lines, no, p[1])
        near[i] = _int(lines, no, p[2])
        flip[i] = bool(_int(lines, no, p[3]))
    lines.done()
    return SegmentationResult(labels, dist, near, flip), r_max


# -- clusters -------------------------------------------------------------------

def write_clusters(path, assignment, density, meta=None):
    n_clusters = int(np.max(assignment)) + 1 if len(assignment) else 0
    lines = _comments(meta) + [f"clusters {len(assignment)} {max(n_clusters, 0)}"]
    lines += [f"{int(a)} {int(d)}" for a, d in zip(assignment, density)]
    _write(path, lines)


def read_clusters(path):
    lines = _Lines(path)
    no, (n, c) = lines.header("clusters", 2)
    n, c = _int(lines, no, n), _int(lines, no, c)
    assignment = np.empty(n, np.int64)
    density = np.empty(n, np.int64)
    for i in range(n):
        no, p = _record(lines, "cluster record", 2)
        assignment[i] = _int(lines, no, p[0])
        density[i] = _int(lines, no, p[1])
        if not -1 <= assignment[i] < c:
            lines.fail(no, f"cluster id {assignment[i]} out of range")
    lines.done()
    return assignment, density


# -- neighbor lists ---------------------------------------------------------------

def write_neighbors(path, indptr, ids, distances, flipped, meta=None):
    q = len(indptr) - 1
    lines = _comments(meta) + [f"neighbors {q} {len(ids)}"]
    src = np.repeat(np.arange(q), np.diff(indptr))
    lines += [f"{a} {int(b)} {fmt_float(d)} {int(bool(f))}"
              for a, b, d, f in zip(src, ids, distances, flipped)]
    _write(path, lines)


def read_neighbors(path):
    """Return ``(indptr, ids, distances, flipped)``."""
    lines = _Lines(path)
    no, (q, e) = lines.header("neighbors", 2)
    q, e = _int(lines, no, q), _int(lines, no, e)
    src = np.empty(e, np.int64)
    ids = np.empty(e, np.int64)
    dist = np.empty(e)
    flip = np.empty(e, bool)
    for k in range(e):
        no, p = _record(lines, "neighbor record", 4)
        src[k], ids[k] = _int(lines, no, p[0]), _int(lines, no, p[1])
        dist[k], flip[k] = _float(lines, no, p[2]), bool(_int(lines, no, p[3]))
        if not 0 <= src[k] < q or (k and src[k] < src[k - 1]):
            lines.fail(no, "query index out of range or out of order")
    lines.done()
    indptr = np.zeros(q + 1, np.int64)
    np.cumsum(np.bincount(src, minlength=q), out=indptr[1:])
    return indptr, ids, dist, flip


# -- graph ----------------------------------------------------------------------

def write_graph(path, graph, meta=None):
    i, j, d = graph.edges()
    lines = _comments(meta) + [f"graph {graph.n} {len(i)} {fmt_float(graph.radius)}"]
    lines += [f"{a} {b} {fmt_float(x)}" for a, b, x in zip(i, j, d)]
    _write(path, lines)


def read_graph(path):
    from ..analysis import RadiusGraph

    lines = _Lines(path)
    no, (n, e, radius) = lines.header("graph", 3)
    n, e, radius = _int(lines, no, n), _int(lines, no, e), _float(lines, no, radius)
    i = np.empty(e, np.int64)
    j = np.empty(e, np.int64)
    d = np.empty(e)
    for k in range(e):
        no, p = _record(lines, "edge", 3)
        i[k], j[k], d[k] = _int(lines, no, p[0]), _int(lines, no, p[1]), _float(lines, no, p[2])
        if not 0 <= i[k] < j[k] < n:
            lines.fail(no, f"edge ({i[k]}, {j[k]}) must satisfy 0 <= i < j < {n}")
    lines.done()
    return RadiusGraph.from_edges(n, i, j, d, radius)


# -- connectivity -----------------------------------------------------------------

def write_connectivity(path, counts: ConnectivityCounts, meta=None):
    lines = _comments(meta) + [f"connectivity {counts.R} {counts.n} {len(counts.counts)}"]
    lines += [f"{a} {b} {c}" for a, b, c in zip(counts.rows, counts.cols, counts.counts)]
    if counts.names is not None or counts.hemispheres is not None:
        for r in range(counts.R):
            hemi = counts.hemispheres[r] if counts.hemispheres is not None else "-"
            name = counts.names[r] if counts.names is not None else str(r)
            lines.append(f"region {r} {hemi} {name}")
    _write(path, lines)


def read_connectivity(path) -> ConnectivityCounts:
    lines = _Lines(path)
    no, line = lines.next("connectivity header")
    parts = line.split()
    if parts and parts[0] == "connectivity-dense":
        if len(parts) != 3:
            lines.fail(no, "expected 'connectivity-dense R n'")
        R, n = _int(lines, no, parts[1]), _int(lines, no, parts[2])
        m = np.zeros((R, R), np.int64)
        for r in range(R):
            no, p = _record(lines, "matrix row", R)
            m[r] = [_int(lines, no, x) for x in p]
            if np.any(m[r] < 0) or np.any(m[r] > n):
                lines.fail(no, "counts must satisfy 0 <= c <= n")
        lines.done()
        return ConnectivityCounts.from_dense(m, n)
    if not parts or parts[0] != "connectivity" or len(parts) != 4:
        lines.fail(no, "expected 'connectivity R n E' or 'connectivity-dense R n'")
    R, n, e = (_int(lines, no, x) for x in parts[1:])
    if n < 1:
        lines.fail(no, "n must be at least 1")
    rows = np.empty(e, np.int64)
    cols = np.empty(e, np.int64)
    cnt = np.empty(e, np.int64)
    for k in range(e):
        no, p = _record(lines, "triplet", 3)
        rows[k], cols[k], cnt[k] = (_int(lines, no, x) for x in p)
        if not (0 <= rows[k] < R and 0 <= cols[k] < R):
            lines.fail(no, "region index out of range")
        if not 0 <= cnt[k] <= n:
            lines.fail(no, "counts must satisfy 0 <= c <= n")
    names, hemis = None, None
    if lines.pos < len(lines.items):
        names, hemis = [str(r) for r in range(R)], ["-"] * R
        while lines.pos < len(lines.items):
            no, line = lines.next("region record")
            p = line.split(None, 3)
            if len(p) != 4 or p[0] != "region":
                lines.fail(no, "expected 'region <i> <hemi> <name>'")
            r = _int(lines, no, p[1])
            if not 0 <= r < R:
                lines.fail(no, "region index out of range")
            hemis[r], names[r] = p[2], p[3]
    try:
        return ConnectivityCounts(R, n, rows, cols, cnt, names, hemis)
    except ValueError as exc:
        raise FormatError(str(exc), path=path)


# -- key/value documents and reliability reports -------------------------------------

def _kv_value(v):
    if v is None:
        return "undefined"
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    text = str(v).replace("\n", " ").strip()
    return text or "-"


def _parse_kv(text):
    if text == "undefined":
        return None
    if text == "-":
        return ""
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def write_kv(path, name, values: dict, meta=None, extra_lines=()):
    lines = _comments(meta) + [name]
    lines += [f"{k} {_kv_value(v)}" for k, v in values.items()]
    lines += list(extra_lines)
    _write(path, lines)


def read_kv(path, name):
    lines = _Lines(path)
    no, line = lines.next(f"'{name}' header")
    if line != name:
        lines.fail(no, f"expected header {name!r}")
    out = {}
    while lines.pos < len(lines.items):
        no, line = lines.items[lines.pos]
        if line.startswith("table "):
            break
        lines.pos += 1
        parts = line.split(None, 1)
        if len(parts) != 2:
            lines.fail(no, "expected '<key> <value>'")
        out[parts[0]] = _parse_kv(parts[1])
    return out, lines


def report_values(report: ReliabilityReport) -> dict:
    values = dict(report.summary)
    values["histogram_bins"] = len(report.histogram)
    for k, (lo, hi, c) in enumerate(report.histogram):
        values[f"histogram.{k}"] = f"{fmt_float(lo)} {fmt_float(hi)} {c}"
    return values


def write_report(path, report: ReliabilityReport, meta=None):
    table = [f"table {len(report.counts)}"]
    for k in range(len(report.counts)):
        table.append(" ".join([
            str(int(report.rows[k])), str(int(report.cols[k])), str(int(report.counts[k])),
            fmt_float(report.p_hat[k]), fmt_float(report.variance[k]),
            fmt_float(report.ci_lo[k]), fmt_float(report.ci_hi[k]), fmt_float(report.ratio[k]),
        ]))
    write_kv(path, "report", report_values(report), meta, table)


def read_report(path):
    """Return ``(summary, table)``; ``table`` maps column name to array."""
    summary, lines = read_kv(path, "report")
    no, line = lines.next("'table E' line")
    parts = line.split()
    if len(parts) != 2 or parts[0] != "table":
        lines.fail(no, "expected 'table E'")
    e = _int(lines, no, parts[1])
    cols = ["i", "j", "c", "p_hat", "variance", "ci_lo", "ci_hi", "ratio"]
    data = {c: [] for c in cols}
    for _ in range(e):
        no, p = _record(lines, "table row", 8)
        for c, x in zip(cols, p):
            data[c].append(_int(lines, no, x) if c in ("i", "j", "c") else _float(lines, no, x))
    lines.done()
    return summary, {c: np.asarray(v) for c, v in data.items()}


def write_report_json(path, report: ReliabilityReport):
    doc = {k: v for k, v in report_values(report).items()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=False)
        f.write("\n")
