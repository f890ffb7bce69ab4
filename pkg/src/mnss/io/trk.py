"""TrackVis ``.trk`` tractograms.

A 1000-byte little-endian header is followed, per streamline, by an int32
point count, ``count * (3 + n_scalars)`` float32 values and ``n_properties``
float32 values. Coordinates are voxmm: voxel indices scaled by voxel size,
with the origin at a voxel corner or centre depending on the writing tool.
Readers keep voxmm; :func:`trk_to_world` converts explicitly.
"""

import os

import numpy as np

from ..core import Tractogram
from ..exceptions import FormatError, MNSSError

HEADER_SIZE = 1000

HEADER_DTYPE = np.dtype([
    ("id_string", "S6"),
    ("dim", "<i2", 3),
    ("voxel_size", "<f4", 3),
    ("origin", "<f4", 3),
    ("n_scalars", "<i2"),
    ("scalar_name", "S20", 10),
    ("n_properties", "<i2"),
    ("property_name", "S20", 10),
    ("vox_to_ras", "<f4", (4, 4)),
    ("reserved", "S444"),
    ("voxel_order", "S4"),
    ("pad2", "S4"),
    ("image_orientation_patient", "<f4", 6),
    ("pad1", "S2"),
    ("invert_x", "S1"),
    ("invert_y", "S1"),
    ("invert_z", "S1"),
    ("swap_xy", "S1"),
    ("swap_yz", "S1"),
    ("swap_zx", "S1"),
    ("n_count", "<i4"),
    ("version", "<i4"),
    ("hdr_size", "<i4"),
])
assert HEADER_DTYPE.itemsize == HEADER_SIZE


class UnsupportedHeaderError(MNSSError, ValueError):
    pass


class TrkHeader:
    """Mutable view over one TRK header record; every byte is preserved."""

    def __init__(self, record=None):
        if record is None:
            record = np.zeros((), dtype=HEADER_DTYPE)
            record["id_string"] = b"TRACK"
            record["dim"] = (1, 1, 1)
            record["voxel_size"] = (1.0, 1.0, 1.0)
            record["vox_to_ras"] = np.eye(4)
            record["voxel_order"] = b"RAS"
            record["version"] = 2
            record["hdr_size"] = HEADER_SIZE
        self.record = np.array(record, dtype=HEADER_DTYPE)

    @classmethod
    def from_bytes(cls, data: bytes, path=None) -> "TrkHeader":
        if len(data) < HEADER_SIZE:
            raise FormatError(f"header truncated at {len(data)} bytes", offset=len(data), path=path)
        rec = np.frombuffer(data[:HEADER_SIZE], dtype=HEADER_DTYPE)[0]
        if rec["id_string"][:5] != b"TRACK":
            raise FormatError("bad magic, expected 'TRACK'", offset=0, path=path)
        if int(rec["hdr_size"]) != HEADER_SIZE:
            swapped = int(np.array(rec["hdr_size"]).byteswap())
            if swapped == HEADER_SIZE:
                raise FormatError("big-endian TRK files are not supported", offset=996, path=path)
            raise FormatError(f"hdr_size is {int(rec['hdr_size'])}, expected 1000", offset=996, path=path)
        if int(rec["version"]) not in (1, 2):
            raise FormatError(f"unsupported version {int(rec['version'])}", offset=992, path=path)
        if rec["n_scalars"] < 0 or rec["n_properties"] < 0 or rec["n_count"] < 0:
            raise FormatError("negative field count in header", offset=0, path=path)
        return cls(rec)

    def to_bytes(self) -> bytes:
        return self.record.tobytes()

    def copy(self) -> "TrkHeader":
        return TrkHeader(self.record.copy())

    def __getitem__(self, key):
        return self.record[key]

    def __setitem__(self, key, value):
        self.record[key] = value

    @property
    def n_scalars(self) -> int:
        return int(self.record["n_scalars"])

    @property
    def n_properties(self) -> int:
        return int(self.record["n_properties"])

    @property
    def n_count(self) -> int:
        return int(self.record["n_count"])

    @property
    def version(self) -> int:
        return int(self.record["version"])

    @property
    def voxel_size(self) -> np.ndarray:
        return np.array(self.record["voxel_size"], dtype=np.float64)

    @property
    def vox_to_ras(self) -> np.ndarray:
        return np.array(self.record["vox_to_ras"], dtype=np.float64)

    def __eq__(self, other):
        return isinstance(other, TrkHeader) and self.to_bytes() == other.to_bytes()


def read_trk(path):
    """Return ``(tractogram, header)``; coordinates stay in voxmm.

    Per-point scalars and per-streamline properties land in
    ``tractogram.meta["scalars"]`` (``(P, n_scalars)``) and
    ``tractogram.meta["properties"]`` (``(N, n_properties)``).
    """
    with open(path, "rb") as f:
        buf = f.read()
    header = TrkHeader.from_bytes(buf, path)
    ns, npr = header.n_scalars, header.n_properties
    limit = header.n_count or None
    pos = HEADER_SIZE
    size = len(buf)
    lengths, chunks, props = [], [], []
    while pos < size and (limit is None or len(lengths) < limit):
        if pos + 4 > size:
            raise FormatError("truncated point count", offset=pos, path=path)
        npts = int(np.frombuffer(buf, "<i4", 1, pos)[0])
        if npts < 0:
            raise FormatError(f"negative point count {npts}", offset=pos, path=path)
        need = 4 * (npts * (3 + ns) + npr)
        if pos + 4 + need > size:
            raise FormatError(f"streamline of {npts} points runs past end of file",
                              offset=pos, path=path)
        block = np.frombuffer(buf, "<f4", npts * (3 + ns) + npr, pos + 4)
        chunks.append(block[: npts * (3 + ns)].reshape(npts, 3 + ns))
        props.append(block[npts * (3 + ns):])
        lengths.append(npts)
        pos += 4 + need
    if limit is not None and len(lengths) < limit:
        raise FormatError(f"header announces {limit} streamlines, found {len(lengths)}",
                          offset=pos, path=path)
    if limit is not None and pos != size:
        raise FormatError("trailing bytes after the last streamline", offset=pos, path=path)
    data = np.concatenate(chunks) if chunks else np.zeros((0, 3 + ns), "<f4")
    offsets = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    meta = {
        "scalars": np.ascontiguousarray(data[:, 3:], dtype=np.float32),
        "properties": (np.stack(props).astype(np.float32) if props
                       else np.zeros((0, npr), np.float32)),
    }
    return Tractogram(data[:, :3].astype(np.float32), offsets, meta=meta), header


def trk_bytes(tractogram: Tractogram, header: TrkHeader = None) -> bytes:
    header = TrkHeader() if header is None else header.copy()
    n = len(tractogram)
    ns, npr = header.n_scalars, header.n_properties
    scalars = tractogram.meta.get("scalars")
    props = tractogram.meta.get("properties")
    if scalars is None:
        scalars = np.zeros((len(tractogram.points), ns), np.float32)
    if props is None:
        props = np.zeros((n, npr), np.float32)
    if scalars.shape != (len(tractogram.points), ns):
        raise FormatError(f"scalars shape {scalars.shape} does not match n_scalars={ns}")
    if props.shape != (n, npr):
        raise FormatError(f"properties shape {props.shape} does not match n_properties={npr}")
    header["n_count"] = n
    header["hdr_size"] = HEADER_SIZE
    parts = [header.to_bytes()]
    values = np.hstack([tractogram.points, scalars]).astype("<f4")
    for i in range(n):
        a, b = tractogram.offsets[i], tractogram.offsets[i + 1]
        parts.append(np.int32(b - a).astype("<i4").tobytes())
        parts.append(values[a:b].tobytes())
        parts.append(props[i].astype("<f4").tobytes())
    return b"".join(parts)


def write_trk(tractogram: Tractogram, header: TrkHeader, path) -> None:
    data = trk_bytes(tractogram, header)
    tmp = f"{path}.part"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


ORIGINS = ("center", "corner")


def _affine(header: TrkHeader):
    if header.version != 2:
        raise UnsupportedHeaderError("voxel-to-world matrix requires a version 2 header")
    vs = header.voxel_size
    m = header.vox_to_ras
    if not np.all(np.isfinite(m)) or not np.all(np.isfinite(vs)) or np.any(vs == 0):
        raise UnsupportedHeaderError("header has a non-finite matrix or zero voxel size")
    if m[3, 3] == 0 or abs(np.linalg.det(m[:3, :3])) < 1e-12:
        raise UnsupportedHeaderError("vox_to_ras is absent or singular")
    return m, vs


def trk_to_world(points, header: TrkHeader, origin: str = "center") -> np.ndarray:
    """voxmm to world millimetres: ``vox_to_ras @ (voxmm / voxel_size, 1)``.

    ``origin="center"`` treats voxmm 0 as the centre of the first voxel.
    ``"corner"`` treats it as the voxel corner and subtracts half a voxel.
    """
    if origin not in ORIGINS:
        raise ValueError(f"origin must be one of {ORIGINS}")
    m, vs = _affine(header)
    ijk = np.asarray(points, dtype=np.float64) / vs
    if origin == "corner":
        ijk = ijk - 0.5
    return ijk @ m[:3, :3].T + m[:3, 3]


def world_to_trk(points, header: TrkHeader, origin: str = "center") -> np.ndarray:
    if origin not in ORIGINS:
        raise ValueError(f"origin must be one of {ORIGINS}")
    m, vs = _affine(header)
    inv = np.linalg.inv(m)
    ijk = np.asarray(points, dtype=np.float64) @ inv[:3, :3].T + inv[:3, 3]
    if origin == "corner":
        ijk = ijk + 0.5
    return ijk * vs


def payload(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()[HEADER_SIZE:]
