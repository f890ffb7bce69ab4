"""Streamline geometry: containers, arc-length resampling and mixed-norm distances.

A streamline is an ``(n, 3)`` array of millimetre coordinates. A resampled
streamline is a ``(K, 3)`` float64 array whose row ``k`` is point ``k``; its
flat form (``reshape(-1)``) places point ``k`` in slots ``3k..3k+2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import _kernels
from .exceptions import DegenerateStreamlineError, InvalidInputError, ShapeError

DEFAULT_N_POINTS = 32
SPACE_DIM = 3
_EXPONENTS = (1, 2, math.inf)


def _exponent(value) -> float:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity", "max"):
            value = math.inf
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"exponent {value!r} is not a number")
    if value not in _EXPONENTS:
        raise InvalidInputError(f"unsupported exponent {value!r}; expected 1, 2 or inf")
    return value


def _code(exponent: float) -> int:
    return _kernels.EXP_INF if math.isinf(exponent) else int(exponent)


def _recip(exponent: float) -> float:
    return 0.0 if math.isinf(exponent) else 1.0 / exponent


@dataclass(frozen=True)
class NormSpec:
    """Mixed norm: ``inner`` over the 3 coordinates of each point difference,
    ``outer`` over the K per-point values.

    With ``average`` the outer aggregate is divided by ``K ** (1 / outer)``,
    so ``NormSpec(2, 1, True)`` is the mean point-wise Euclidean distance.
    """

    inner: float = 2
    outer: float = 1
    average: bool = True

    def __post_init__(self):
        object.__setattr__(self, "inner", _exponent(self.inner))
        object.__setattr__(self, "outer", _exponent(self.outer))
        object.__setattr__(self, "average", bool(self.average))

    @classmethod
    def parse(cls, text: str) -> "NormSpec":
        """Parse ``"2,1"``, ``"2,1,avg"`` or ``"inf,1,sum"``."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(parts) not in (2, 3):
            raise InvalidInputError(f"cannot parse norm {text!r}")
        average = True
        if len(parts) == 3:
            flag = parts[2].lower()
            if flag in ("avg", "average", "mean", "1", "true"):
                average = True
            elif flag in ("sum", "raw", "0", "false"):
                average = False
            else:
                raise InvalidInputError(f"bad averaging flag {parts[2]!r}")
        return cls(parts[0], parts[1], average)

    def __str__(self) -> str:
        def fmt(e):
            return "inf" if math.isinf(e) else str(int(e))

        return f"{fmt(self.inner)},{fmt(self.outer)},{'avg' if self.average else 'sum'}"

    @property
    def envelope_exponent(self) -> float:
        return max(self.inner, self.outer)

    def scale(self, n_points: int) -> float:
        """Divisor turning an un-averaged distance into the reported one."""
        if not self.average:
            return 1.0
        return float(n_points) ** _recip(self.outer)

    def holder_factor(self, dim: int = SPACE_DIM) -> float:
        """``dim ** (1/inner - 1/outer)`` when the inner exponent is the larger
        one, else 1: the factor with which the flat outer-exponent norm
        lower-bounds the mixed norm."""
        return float(dim) ** min(0.0, _recip(self.inner) - _recip(self.outer))

    @property
    def codes(self) -> tuple:
        return _code(self.inner), _code(self.outer)


L21_AVERAGE = NormSpec(2, 1, True)

ORIENTATIONS = ("direct", "direct-flip")


def check_orientation(policy: str) -> str:
    if policy not in ORIENTATIONS:
        raise InvalidInputError(f"orientation must be one of {ORIENTATIONS}, got {policy!r}")
    return policy


@dataclass
class Tractogram:
    """Streamlines stored as one float32 ``(P, 3)`` point array plus CSR offsets.

    ``ids`` and ``labels`` are optional per-streamline integer arrays.
    """

    points: np.ndarray
    offsets: np.ndarray
    ids: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.offsets = np.ascontiguousarray(self.offsets, dtype=np.int64)
        if self.offsets.ndim != 1 or self.offsets.size == 0 or self.offsets[0] != 0:
            raise InvalidInputError("offsets must be a 1-d array starting at 0")
        if self.offsets[-1] != len(self.points) or np.any(np.diff(self.offsets) < 0):
            raise InvalidInputError("offsets do not match the point array")
        n = len(self)
        if self.ids is not None:
            self.ids = np.asarray(self.ids, dtype=np.int64)
            if self.ids.shape != (n,):
                raise InvalidInputError("ids length differs from streamline count")
            if np.unique(self.ids).size != n:
                raise InvalidInputError("streamline ids must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise InvalidInputError("labels length differs from streamline count")

    @classmethod
    def from_streamlines(cls, streamlines: Iterable, **kwargs) -> "Tractogram":
        arrays = [np.asarray(s, dtype=np.float32).reshape(-1, 3) for s in streamlines]
        lengths = np.array([len(a) for a in arrays], dtype=np.int64)
        offsets = np.zeros(len(arrays) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        points = np.concatenate(arrays) if arrays else np.zeros((0, 3), np.float32)
        return cls(points, offsets, **kwargs)

    def __len__(self) -> int:
        return len(self.offsets) - 1

    def __getitem__(self, i: int) -> np.ndarray:
        if i < 0:
            i += len(self)
        return self.points[self.offsets[i]:self.offsets[i + 1]]

    def __iter__(self) -> Iterator[np.ndarray]:
        for i in range(len(self)):
            yield self[i]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def subset(self, index) -> "Tractogram":
        index = np.asarray(index, dtype=np.int64)
        out = Tractogram.from_streamlines([self[i] for i in index])
        if self.ids is not None:
            out.ids = self.ids[index]
        if self.labels is not None:
            out.labels = self.labels[index]
        return out

    def identifier(self, i: int) -> int:
        return int(self.ids[i]) if self.ids is not None else int(i)


def as_tractogram(X) -> Tractogram:
    """Coerce a Tractogram, a 3-d array or a sequence of ``(n, 3)`` arrays."""
    if isinstance(X, Tractogram):
        return X
    if isinstance(X, np.ndarray) and X.ndim == 3:
        n, m, _ = X.shape
        return Tractogram(X.reshape(-1, 3), np.arange(n + 1, dtype=np.int64) * m)
    return Tractogram.from_streamlines(X)


def check_streamline(points) -> np.ndarray:
    s = np.asarray(points, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != SPACE_DIM:
        raise InvalidInputError(f"streamline must have shape (n, 3), got {s.shape}")
    if len(s) < 2:
        raise InvalidInputError("a streamline needs at least 2 points")
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("streamline coordinates must be finite")
    return s


def arc_length(points) -> float:
    s = check_streamline(points)
    return float(np.sum(np.sqrt(np.sum(np.diff(s, axis=0) ** 2, axis=1))))


def resample_many(tractogram, n_points: int = DEFAULT_N_POINTS, dtype=np.float64) -> np.ndarray:
    """Resample every streamline at ``n_points`` equal arc-length positions.

    Returns an ``(N, n_points, 3)`` array. Positions are computed in double
    precision; ``dtype=np.float32`` rounds them once on store.
    """
    if n_points < 2:
        raise InvalidInputError("n_points must be at least 2")
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise InvalidInputError("dtype must be float32 or float64")
    t = as_tractogram(tractogram)
    out = np.empty((len(t), n_points, 3), dtype=dtype)
    bad = _kernels.resample_csr(t.points, t.offsets, n_points, out)
    if bad <= -2:
        raise InvalidInputError(f"streamline {t.identifier(-2 - bad)} has non-finite coordinates")
    if bad >= 0:
        if t.lengths[bad] < 2:
            raise InvalidInputError(f"streamline {t.identifier(bad)} has fewer than 2 points")
        raise DegenerateStreamlineError(t.identifier(bad))
    return out


def resample(points, n_points: int = DEFAULT_N_POINTS) -> np.ndarray:
    s = check_streamline(points)
    offsets = np.array([0, len(s)], dtype=np.int64)
    out = np.empty((1, n_points, 3), dtype=np.float64)
    if n_points < 2:
        raise InvalidInputError("n_points must be at least 2")
    # keep double precision here; Tractogram storage is where float32 applies
    if _kernels.resample_csr(s, offsets, n_points, out) != -1:
        raise DegenerateStreamlineError(None)
    return out[0]


def reverse(resampled) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(resampled)[..., ::-1, :])


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-2:] != b.shape[-2:] or a.shape[-1] != SPACE_DIM:
        raise ShapeError(f"point-count mismatch: {a.shape} vs {b.shape}")
    return a, b


def _norm(values, exponent, axis):
    if exponent == 1:
        return np.sum(values, axis=axis)
    if exponent == 2:
        return np.sqrt(np.sum(values * values, axis=axis))
    return np.max(values, axis=axis)


def mixed_norm_distance(a, b, spec: NormSpec = L21_AVERAGE):
    """Mixed-norm distance between resampled streamlines.

    ``b`` may carry leading batch dimensions, in which case an array of
    distances is returned.
    """
    a, b = _pair(a, b)
    diff = np.abs(a - b)
    per_point = _norm(diff, spec.inner, axis=-1)
    d = _norm(per_point, spec.outer, axis=-1) / spec.scale(diff.shape[-2])
    return float(d) if np.ndim(d) == 0 else d


def flip_distance(a, b, spec: NormSpec = L21_AVERAGE):
    """Orientation-invariant distance; ``flipped`` is True only when the
    reversed orientation is strictly closer."""
    direct = mixed_norm_distance(a, b, spec)
    flipped = mixed_norm_distance(a, reverse(b), spec)
    if np.ndim(direct) == 0:
        return (flipped, True) if flipped < direct else (direct, False)
    won = flipped < direct
    return np.where(won, flipped, direct), won


def envelope_distance(a, b, spec: NormSpec = L21_AVERAGE):
    """Flat Minkowski norm with exponent ``max(inner, outer)`` over all 3K
    coordinate differences, averaged like ``spec``. Never exceeds
    :func:`mixed_norm_distance`."""
    a, b = _pair(a, b)
    diff = np.abs(a - b)
    flat = diff.reshape(diff.shape[:-2] + (-1,))
    d = _norm(flat, spec.envelope_exponent, axis=-1) / spec.scale(diff.shape[-2])
    return float(d) if np.ndim(d) == 0 else d


def holder_bound(a, b, spec: NormSpec = L21_AVERAGE):
    """Flat outer-exponent norm scaled by :meth:`NormSpec.holder_factor`;
    another per-axis decomposable lower bound of the mixed norm."""
    a, b = _pair(a, b)
    diff = np.abs(a - b)
    flat = diff.reshape(diff.shape[:-2] + (-1,))
    d = spec.holder_factor() * _norm(flat, spec.outer, axis=-1) / spec.scale(diff.shape[-2])
    return float(d) if np.ndim(d) == 0 else d


def flat_norm(a, b, exponent: float):
    """Un-averaged flat Minkowski norm of ``a - b`` over every coordinate."""
    a, b = _pair(a, b)
    diff = np.abs(a - b)
    flat = diff.reshape(diff.shape[:-2] + (-1,))
    d = _norm(flat, _exponent(exponent), axis=-1)
    return float(d) if np.ndim(d) == 0 else d


def as_streamline_list(X) -> Sequence[np.ndarray]:
    return list(as_tractogram(X))
