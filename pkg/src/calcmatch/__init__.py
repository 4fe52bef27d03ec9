"""Co-localize a specimen's bright-object cluster within a larger scene raster."""

__version__ = "0.1.0"

from .cluster import NoClusterError, Rect, Template, dbscan, rotation_variants
from .detect import Blob, DetectParams, detect_blobs
from .match import EmptyMatchError, cross_correlate_direct, cross_correlate_fft, select_matches
from .pipeline import run_case
from .raster_io import CaseMeta

__all__ = [
    "Blob",
    "CaseMeta",
    "DetectParams",
    "EmptyMatchError",
    "NoClusterError",
    "Rect",
    "Template",
    "cross_correlate_direct",
    "cross_correlate_fft",
    "dbscan",
    "detect_blobs",
    "rotation_variants",
    "run_case",
    "select_matches",
]
