"""Readers and writers for tractograms, tables and index snapshots."""

from .snapshot import load_index, save_index
from .tck import read_tck, write_tck
from .text import (
    read_clusters,
    read_connectivity,
    read_graph,
    read_kv,
    read_labels,
    read_neighbors,
    read_report,
    read_segmentation,
    write_clusters,
    write_connectivity,
    write_graph,
    write_kv,
    write_labels,
    write_neighbors,
    write_report,
    write_segmentation,
)
from .trk import TrkHeader, read_trk, trk_to_world, world_to_trk, write_trk


def read_tractogram(path):
    """Read ``.tck`` or ``.trk`` (voxmm kept as-is) by extension."""
    if str(path).lower().endswith(".trk"):
        return read_trk(path)[0]
    return read_tck(path)


def write_tractogram(tractogram, path):
    if str(path).lower().endswith(".trk"):
        write_trk(tractogram, None, path)
    else:
        write_tck(tractogram, path)
