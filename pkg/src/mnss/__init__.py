"""Exact mixed-norm proximity search for tractography streamlines."""

from .core import (
    L21_AVERAGE,
    NormSpec,
    Tractogram,
    arc_length,
    envelope_distance,
    flip_distance,
    mixed_norm_distance,
    resample,
    resample_many,
    reverse,
)
from .index import (
    Neighbor,
    SearchIndex,
    StreamlineNeighbors,
    batch_knn,
    batch_radius,
    build,
    knn,
    radius_search,
)

__version__ = "0.1.0"
