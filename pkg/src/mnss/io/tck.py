"""MRtrix ``.tck`` tractograms.

Layout: an ASCII header that starts with ``mrtrix tracks``, holds
``key: value`` lines and ends with ``END``. The mandatory ``file: . <offset>``
entry gives the byte offset of the payload, a run of little-endian float32
``(x, y, z)`` triplets. A NaN triplet closes each streamline and an
infinite triplet closes the stream.
"""

import os

import numpy as np

from ..core import Tractogram
from ..exceptions import FormatError

MAGIC = "mrtrix tracks"
_MANAGED = ("datatype", "count", "file")


def _parse_header(buf: bytes, path):
    lines = []
    pos = 0
    while True:
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise FormatError("header is missing its END line", offset=pos, path=path)
        raw = buf[pos:nl]
        try:
            line = raw.decode("latin-1").rstrip("\r")
        except UnicodeDecodeError:  # pragma: no cover - latin-1 decodes anything
            raise FormatError("undecodable header line", offset=pos, path=path)
        lines.append((pos, line))
        pos = nl + 1
        if line.strip() == "END":
            return lines, pos


def read_tck(path) -> Tractogram:
    with open(path, "rb") as f:
        buf = f.read()
    if not buf.startswith(MAGIC.encode()):
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0, path=path)
    lines, header_end = _parse_header(buf, path)
    header = {}
    for pos, line in lines[1:-1]:
        if not line.strip():
            continue
        if ":" not in line:
            raise FormatError(f"malformed header line {line!r}", offset=pos, path=path)
        key, value = line.split(":", 1)
        key, value = key.strip(), value.strip()
        # repeated keys are legal in MRtrix headers; keep them joined in order
        header[key] = f"{header[key]}\n{value}" if key in header else value
    datatype = header.get("datatype")
    if datatype is None:
        raise FormatError("missing datatype", offset=0, path=path)
    if datatype != "Float32LE":
        why = "big-endian payloads are not supported" if datatype.endswith("BE") else "unsupported datatype"
        raise FormatError(f"{why}: {datatype!r}", offset=0, path=path)
    spec = header.get("file", "").split()
    if len(spec) != 2 or spec[0] != ".":
        raise FormatError("missing or malformed 'file: . <offset>' entry", offset=0, path=path)
    try:
        offset = int(spec[1])
    except ValueError:
        raise FormatError(f"bad payload offset {spec[1]!r}", offset=0, path=path)
    if offset < header_end or offset > len(buf):
        raise FormatError(f"payload offset {offset} outside file", offset=offset, path=path)
    payload = buf[offset:]
    usable = len(payload) - len(payload) % 12
    triplets = np.frombuffer(payload[:usable], dtype="<f4").reshape(-1, 3)
    is_inf = np.isinf(triplets).all(axis=1)
    ends = np.flatnonzero(is_inf)
    if ends.size == 0:
        raise FormatError("truncated payload: no end-of-stream marker", offset=offset + usable, path=path)
    triplets = triplets[: ends[0]]
    is_sep = np.isnan(triplets).all(axis=1)
    seps = np.flatnonzero(is_sep)
    if len(triplets) and (seps.size == 0 or seps[-1] != len(triplets) - 1):
        raise FormatError("streamline not terminated before end of stream",
                          offset=offset + 12 * len(triplets), path=path)
    points = triplets[~is_sep]
    lengths = np.diff(np.concatenate([[-1], seps])) - 1
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    if "count" in header:
        try:
            declared = int(header["count"])
        except ValueError:
            raise FormatError(f"bad count {header['count']!r}", offset=0, path=path)
        if declared != len(lengths):
            raise FormatError(f"count says {declared} streamlines, payload holds {len(lengths)}",
                              offset=offset, path=path)
    extra = {k: v for k, v in header.items() if k not in _MANAGED}
    return Tractogram(points.astype(np.float32), offsets, meta={"tck_header": extra})


def _header_bytes(extra, count, offset):
    lines = [MAGIC]
    for key, value in extra.items():
        for part in str(value).split("\n"):
            lines.append(f"{key}: {part}")
    lines += ["datatype: Float32LE", f"count: {count}", f"file: . {offset}", "END"]
    return ("\n".join(lines) + "\n").encode("latin-1")


def tck_bytes(tractogram: Tractogram, header=None) -> bytes:
    extra = dict(tractogram.meta.get("tck_header", {}))
    if header:
        extra.update(header)
    for key in _MANAGED:
        extra.pop(key, None)
    n = len(tractogram)
    offset = 0
    # the offset's own digit count changes the header length; iterate to a fixed point
    while True:
        head = _header_bytes(extra, n, offset)
        if len(head) == offset:
            break
        offset = len(head)
    total = len(tractogram.points) + n + 1
    out = np.empty((total, 3), dtype="<f4")
    rows = np.arange(len(tractogram.points)) + np.repeat(np.arange(n), tractogram.lengths)
    out[rows] = tractogram.points
    out[tractogram.offsets[1:] + np.arange(n)] = np.nan
    out[-1] = np.inf
    return head + out.tobytes()


def write_tck(tractogram: Tractogram, path, header=None) -> None:
    data = tck_bytes(tractogram, header)
    tmp = f"{path}.part"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def payload(path) -> bytes:
    """Raw payload bytes of a ``.tck`` file (everything from the offset on)."""
    with open(path, "rb") as f:
        buf = f.read()
    for line in buf.split(b"\nEND\n", 1)[0].split(b"\n"):
        if line.startswith(b"file:"):
            return buf[int(line.split()[-1]):]
    raise FormatError("no file entry", offset=0, path=path)
