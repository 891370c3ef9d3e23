"""Graph reconstruction from fragmented, noisy spectral embeddings.

Generate benchmark instances of leaked local eigenvector patches, rebuild the
global topology from them, score the result, and apply a Gaussian defense.
"""

from specleak.graph import Graph, load_edge_list, save_edge_list
from specleak.spectral import PatchObservation
from specleak.generate import InstanceParams, generate_instance
from specleak.archive import InstanceArchive, read_archive, write_archive, verify_archive
from specleak.afr import AfrConfig, afr_reconstruct
from specleak.eigensync import eigensync_reconstruct
from specleak.metrics import edge_metrics
from specleak.dp import DpParams, sanitize_archive

from specleak._version import __version__

__all__ = [
    "Graph",
    "load_edge_list",
    "save_edge_list",
    "PatchObservation",
    "InstanceParams",
    "generate_instance",
    "InstanceArchive",
    "read_archive",
    "write_archive",
    "verify_archive",
    "AfrConfig",
    "afr_reconstruct",
    "eigensync_reconstruct",
    "edge_metrics",
    "DpParams",
    "sanitize_archive",
]
