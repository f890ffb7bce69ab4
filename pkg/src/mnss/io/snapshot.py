"""Binary snapshots of a built :class:`~mnss.index.SearchIndex`.

Little-endian layout, version 1::

    offset  size              field
    0       4                 magic b"MNSS"
    4       4   u32           format version
    8       4   u32           K (points per streamline)
    12      1   u8            inner exponent code (1, 2, 0 = inf)
    13      1   u8            outer exponent code
    14      1   u8            average flag
    15      1   u8            orientation (0 direct, 1 direct-flip)
    16      1   u8            bound (0 mixed, 1 holder, 2 envelope)
    17      3                 zero padding
    20      8   u64           N (rows)
    28      8   u64           M (nodes)
    36      8   u64           leaf size
    44      48*M              nodes: start i64, end i64, left i64, right i64,
                              axis i64, split f64
    ...     4*M*3K  f32       node box lower corners
    ...     4*M*3K  f32       node box upper corners
    ...     8*N     i64       row id of each stored row (leaf order)
    ...     4*N*3K  f32       rows in leaf order
    end-4   4   u32           CRC32 of every preceding byte
"""

import os
import struct
import zlib

import numpy as np

from ..core import NormSpec
from ..exceptions import FormatError
from ..index import BOUNDS, SearchIndex

MAGIC = b"MNSS"
VERSION = 1
_HEAD = struct.Struct("<4sIIBBBBB3xQQQ")
_NODE = np.dtype([("start", "<i8"), ("end", "<i8"), ("left", "<i8"), ("right", "<i8"),
                  ("axis", "<i8"), ("split", "<f8")])
_ORIENT = ("direct", "direct-flip")
_BOUND_NAMES = {v: k for k, v in BOUNDS.items()}


def _exp_from_code(code, where):
    if code == 0:
        return float("inf")
    if code in (1, 2):
        return float(code)
    raise FormatError(f"bad exponent code {code}", offset=where)


def snapshot_bytes(index: SearchIndex) -> bytes:
    inner, outer = index.spec.codes
    d = 3 * index.n_points
    head = _HEAD.pack(MAGIC, VERSION, index.n_points, inner, outer, int(index.spec.average),
                      _ORIENT.index(index.orientation), BOUNDS[index.bound],
                      len(index), index.n_nodes, index.leaf_size)
    nodes = np.zeros(index.n_nodes, dtype=_NODE)
    for name in ("start", "end", "left", "right", "axis", "split"):
        nodes[name] = getattr(index, name)
    body = b"".join([
        head,
        nodes.tobytes(),
        np.ascontiguousarray(index.lo, dtype="<f4").reshape(-1, d).tobytes(),
        np.ascontiguousarray(index.hi, dtype="<f4").reshape(-1, d).tobytes(),
        np.ascontiguousarray(index.order, dtype="<i8").tobytes(),
        np.ascontiguousarray(index.data, dtype="<f4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_index(index: SearchIndex, path) -> None:
    tmp = f"{path}.part"
    with open(tmp, "wb") as f:
        f.write(snapshot_bytes(index))
    os.replace(tmp, path)


def load_index(path) -> SearchIndex:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _HEAD.size + 4:
        raise FormatError("file too short for a snapshot header", offset=len(buf), path=path)
    magic, version, k, inner, outer, avg, orient, bound, n, m, leaf = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("bad magic, expected b'MNSS'", offset=0, path=path)
    if version != VERSION:
        raise FormatError(f"snapshot version {version} unsupported (expected {VERSION})",
                          offset=4, path=path)
    if k < 2 or orient > 1 or bound not in _BOUND_NAMES or avg > 1:
        raise FormatError("corrupt header fields", offset=8, path=path)
    d = 3 * k
    expected = _HEAD.size + m * _NODE.itemsize + 2 * 4 * m * d + 8 * n + 4 * n * d + 4
    if expected != len(buf):
        raise FormatError(f"size mismatch: header implies {expected} bytes, file has {len(buf)}",
                          offset=20, path=path)
    stored = struct.unpack_from("<I", buf, len(buf) - 4)[0]
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != stored:
        raise FormatError("CRC32 mismatch", offset=len(buf) - 4, path=path)
    spec = NormSpec(_exp_from_code(inner, 12), _exp_from_code(outer, 13), bool(avg))
    pos = _HEAD.size
    nodes = np.frombuffer(buf, _NODE, m, pos)
    pos += m * _NODE.itemsize
    lo = np.frombuffer(buf, "<f4", m * d, pos).reshape(m, d).astype(np.float32)
    pos += 4 * m * d
    hi = np.frombuffer(buf, "<f4", m * d, pos).reshape(m, d).astype(np.float32)
    pos += 4 * m * d
    order = np.frombuffer(buf, "<i8", n, pos).astype(np.int64)
    pos += 8 * n
    data = np.frombuffer(buf, "<f4", n * d, pos).reshape(n, d).astype(np.float32)
    cols = [np.ascontiguousarray(nodes[c]).astype(np.int64) for c in ("start", "end", "left", "right", "axis")]
    split = np.ascontiguousarray(nodes["split"]).astype(np.float64)
    if n and (np.sort(order) != np.arange(n)).any():
        raise FormatError("row ids are not a permutation", offset=pos - 8 * n, path=path)
    return SearchIndex(data, order, *cols, split, lo, hi, k, spec, leaf,
                       _ORIENT[orient], _BOUND_NAMES[bound])
