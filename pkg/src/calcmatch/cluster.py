"""
Point clustering and template construction.

DBSCAN groups the specimen's object centroids; the largest cluster's
bounding box is cut from the specimen mask, resampled into scene pixel
scale using the magnification factors, and expanded into four right-angle
rotation variants.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .raster_io import CaseMeta

__all__ = [
    "NoClusterError",
    "Rect",
    "ClusterLabeling",
    "Template",
    "ROTATIONS",
    "dbscan",
    "largest_cluster",
    "cluster_bbox",
    "cut_template",
    "scale_template",
    "rotate90",
    "rotation_variants",
]

NOISE = -1
ROTATIONS = (0, 90, 180, 270)


class NoClusterError(RuntimeError):
    """Every point was labeled noise, so there is no template to build."""


class Rect(NamedTuple):
    """Axis-aligned pixel rectangle covering ``[x0, x0 + w) x [y0, y0 + h)``."""

    x0: int
    y0: int
    w: int
    h: int

    @property
    def x1(self) -> int:
        return self.x0 + self.w

    @property
    def y1(self) -> int:
        return self.y0 + self.h

    def intersects(self, other: "Rect") -> bool:
        return self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1

    def contains_point(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class ClusterLabeling:
    labels: np.ndarray
    k: int

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels[self.labels >= 0], minlength=self.k)

    @property
    def n_noise(self) -> int:
        return int(np.count_nonzero(self.labels == NOISE))


@dataclass(frozen=True)
class Template:
    bits: np.ndarray
    rotation_deg: int = 0
    scale_applied: float = 1.0
    source_rect: Rect = field(default_factory=lambda: Rect(0, 0, 1, 1))

    def __post_init__(self):
        if self.rotation_deg not in ROTATIONS:
            raise ValueError(f"rotation_deg must be one of {ROTATIONS}")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> ClusterLabeling:
    """DBSCAN with Euclidean distance and inclusive ``eps`` neighborhoods.

    Points are visited in input order; a point's neighborhood counts the
    point itself.  A border point reachable from several clusters joins the
    one expanded first.  Cluster ids are renumbered by first appearance in
    the label array.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(points)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return ClusterLabeling(labels=labels, k=0)

    tree = cKDTree(points)
    neighborhoods = tree.query_ball_point(points, r=eps, return_sorted=True)
    is_core = np.array([len(nb) >= min_pts for nb in neighborhoods])

    visited = np.zeros(n, dtype=bool)
    k = 0
    for i in range(n):
        if visited[i] or not is_core[i]:
            continue
        visited[i] = True
        labels[i] = k
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for q in neighborhoods[j]:
                if labels[q] == NOISE:
                    labels[q] = k
                if not visited[q] and is_core[q]:
                    visited[q] = True
                    queue.append(q)
        k += 1

    # renumber by first appearance
    remap: dict[int, int] = {}
    for label in labels:
        if label != NOISE and label not in remap:
            remap[int(label)] = len(remap)
    renumbered = np.array([remap.get(int(lab), NOISE) for lab in labels], dtype=np.int64)
    return ClusterLabeling(labels=renumbered, k=k)


def largest_cluster(labeling: ClusterLabeling, points: np.ndarray) -> tuple[int, np.ndarray]:
    """Return ``(cluster_id, member points)`` of the most populous cluster.

    Ties go to the lowest cluster id.
    """
    if labeling.k == 0:
        raise NoClusterError(
            f"all {len(labeling.labels)} points are noise; try a larger eps or smaller min_pts"
        )
    sizes = labeling.sizes()
    cluster_id = int(np.argmax(sizes))  # argmax returns the first maximum
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return cluster_id, points[labeling.labels == cluster_id]


def cluster_bbox(members: np.ndarray, mask: np.ndarray, pad: int = 2) -> Rect:
    members = np.asarray(members, dtype=np.float64).reshape(-1, 2)
    if len(members) == 0:
        raise ValueError("members must be non-empty")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    height, width = np.shape(mask)
    x_lo = math.floor(members[:, 0].min()) - pad
    y_lo = math.floor(members[:, 1].min()) - pad
    x_hi = math.ceil(members[:, 0].max()) + pad
    y_hi = math.ceil(members[:, 1].max()) + pad
    x_lo, y_lo = max(0, x_lo), max(0, y_lo)
    x_hi, y_hi = min(width - 1, x_hi), min(height - 1, y_hi)
    return Rect(int(x_lo), int(y_lo), int(x_hi - x_lo + 1), int(y_hi - y_lo + 1))


def cut_template(mask: np.ndarray, rect: Rect) -> Template:
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > width or rect.y1 > height or rect.w < 1 or rect.h < 1:
        raise ValueError(f"{rect} is not inside the {width}x{height} mask")
    bits = mask[rect.y0 : rect.y1, rect.x0 : rect.x1].copy()
    if not bits.any():
        raise ValueError(f"template crop {rect} holds no set bits")
    return Template(bits=bits, rotation_deg=0, scale_applied=1.0, source_rect=rect)


def _nearest_indices(n_src: int, n_dst: int) -> np.ndarray:
    # sample the source pixel whose footprint contains each destination pixel center
    idx = np.floor((np.arange(n_dst) + 0.5) * n_src / n_dst).astype(np.int64)
    return np.minimum(idx, n_src - 1)


def scale_template(template: Template, meta: CaseMeta) -> Template:
    """Resample the template from specimen to scene pixel scale.

    The scale is ``magnification_factor_scene / magnification_factor_specimen``
    and the bits are resampled nearest-neighbor.
    """
    s = meta.magnification_factor_scene / meta.magnification_factor_specimen
    h, w = template.bits.shape
    new_w = max(1, int(math.floor(w * s + 0.5)))
    new_h = max(1, int(math.floor(h * s + 0.5)))
    rows = _nearest_indices(h, new_h)
    cols = _nearest_indices(w, new_w)
    bits = template.bits[np.ix_(rows, cols)]
    return replace(template, bits=bits, scale_applied=template.scale_applied * s)


def rotate90(bits: np.ndarray) -> np.ndarray:
    """Rotate a raster by 90 degrees: ``out(x', y') = in(y', H - 1 - x')``."""
    return np.ascontiguousarray(np.flipud(bits).T)


def rotation_variants(template: Template) -> list[Template]:
    """The template rotated by 0, 90, 180 and 270 degrees, in that order."""
    variants = []
    bits = template.bits
    for step, degrees in enumerate(ROTATIONS):
        if step:
            bits = rotate90(bits)
        rotation = (template.rotation_deg + degrees) % 360
        variants.append(replace(template, bits=bits, rotation_deg=rotation))
    return variants
