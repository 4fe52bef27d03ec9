"""
Stage functions wiring detection, clustering, matching and evaluation.

Each stage is a pure function of in-memory arrays.  The CLI wraps them with
file I/O; the synthetic harness calls :func:`run_case` directly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cluster import Rect, Template, cluster_bbox, cut_template, dbscan, largest_cluster, rotation_variants, scale_template
from .config import PipelineConfig
from .detect import DetectParams, blobs_to_mask, centroids, detect_blobs
from .evaluate import ConfusionCounts, EvalMetrics, PatchGrid, build_grid, confusion, metrics, positive_patches, predicted_patches
from .match import Match, MatchSet, ScoreMap, best_match, correlate_variants, select_matches
from .raster_io import CaseMeta

__all__ = [
    "EvalReport",
    "CaseResult",
    "segment",
    "build_templates",
    "match_templates",
    "evaluate_matches",
    "run_case",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalReport:
    grid: PatchGrid
    mode: str
    positive: frozenset[int]
    predicted: frozenset[int]
    counts: ConfusionCounts
    metrics: EvalMetrics
    best: Match | None = None

    def to_dict(self) -> dict:
        return {
            "grid": {
                "width": self.grid.width,
                "height": self.grid.height,
                "patch_size": self.grid.patch_size,
                "cols": self.grid.cols,
                "rows": self.grid.rows,
            },
            "mode": self.mode,
            "positive_patches": sorted(self.positive),
            "predicted_patches": sorted(self.predicted),
            "counts": {"tp": self.counts.tp, "fp": self.counts.fp, "fn": self.counts.fn, "tn": self.counts.tn},
            "metrics": self.metrics.to_dict(),
            "best_match": None if self.best is None else self.best._asdict(),
        }


@dataclass
class CaseResult:
    scene_mask: np.ndarray
    scene_points: np.ndarray
    specimen_mask: np.ndarray
    specimen_points: np.ndarray
    templates: list[Template]
    maps: list[ScoreMap]
    matches: MatchSet
    report: EvalReport | None = None
    extras: dict = field(default_factory=dict)


def segment(image: np.ndarray, params: DetectParams) -> tuple[np.ndarray, np.ndarray]:
    """Detect bright objects; return ``(mask, centroid points)``."""
    height, width = np.shape(image)
    blobs = detect_blobs(image, params)
    mask = blobs_to_mask(blobs, width, height)
    return mask, centroids(mask)


def build_templates(
    mask: np.ndarray,
    points: np.ndarray,
    meta: CaseMeta,
    eps: float = 40.0,
    min_pts: int = 3,
    pad: int = 2,
) -> list[Template]:
    """Largest DBSCAN cluster -> cropped, rescaled template in four rotations.

    Raises :class:`~calcmatch.cluster.NoClusterError` when every point is noise.
    """
    labeling = dbscan(points, eps, min_pts)
    cluster_id, members = largest_cluster(labeling, points)
    logger.info(
        "%d clusters, %d noise points; largest is #%d with %d members",
        labeling.k,
        labeling.n_noise,
        cluster_id,
        len(members),
    )
    rect = cluster_bbox(members, mask, pad)
    template = scale_template(cut_template(mask, rect), meta)
    return rotation_variants(template)


def match_templates(
    scene_mask: np.ndarray,
    templates: list[Template],
    percentile: float = 99.0,
    ncc: bool = False,
    workers: int | None = None,
) -> tuple[list[ScoreMap], MatchSet]:
    maps = correlate_variants(templates, scene_mask, ncc=ncc, workers=workers)
    return maps, select_matches(maps, percentile)


def evaluate_matches(
    scene_shape: tuple[int, int],
    match_set: MatchSet,
    reference_box: Rect,
    patch_size: int = 300,
    mode: str = "all-selected",
) -> EvalReport:
    height, width = scene_shape
    grid = build_grid(width, height, patch_size)
    positive = positive_patches(grid, reference_box)
    predicted = predicted_patches(grid, match_set, mode)
    counts = confusion(grid, predicted, positive)
    best = best_match(match_set) if match_set.locations else None
    return EvalReport(
        grid=grid,
        mode=mode,
        positive=frozenset(positive),
        predicted=frozenset(predicted),
        counts=counts,
        metrics=metrics(counts),
        best=best,
    )


def run_case(
    scene: np.ndarray,
    specimen: np.ndarray,
    meta: CaseMeta,
    reference_box: Rect | None,
    config: PipelineConfig | None = None,
) -> CaseResult:
    """Full chain on in-memory rasters.

    Both rasters are segmented with the same detection parameters.  The
    report is skipped when ``reference_box`` is ``None``.
    """
    config = config or PipelineConfig()
    params = config.detect_params
    scene_mask, scene_points = segment(scene, params)
    specimen_mask, specimen_points = segment(specimen, params)
    templates = build_templates(specimen_mask, specimen_points, meta, config.eps, config.min_pts, config.pad)
    maps, match_set = match_templates(scene_mask, templates, config.percentile, config.ncc, config.workers)
    report = None
    if reference_box is not None:
        report = evaluate_matches(scene_mask.shape, match_set, reference_box, config.patch_size, config.mode)
    return CaseResult(
        scene_mask=scene_mask,
        scene_points=scene_points,
        specimen_mask=specimen_mask,
        specimen_points=specimen_points,
        templates=templates,
        maps=maps,
        matches=match_set,
        report=report,
    )
