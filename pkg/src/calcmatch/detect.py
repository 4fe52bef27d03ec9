"""
Bright point-object segmentation.

Multi-scale difference-of-Gaussians (DoG) candidate detection followed by a
Hessian eigenvalue-ratio shape test that rejects ridges and edges.  The
detections are rasterized to a binary mask, and the mask's 8-connected
components are reduced to centroids for clustering.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "DetectParams",
    "Blob",
    "gaussian_kernel",
    "gaussian_blur",
    "dog_response",
    "scale_levels",
    "detect_blobs",
    "blobs_to_mask",
    "centroids",
]

_EPS = 1e-12


@dataclass(frozen=True)
class DetectParams:
    sigma_min: float = 1.0
    sigma_max: float = 4.0
    scales_per_octave: int = 3
    dog_threshold: float = 0.01
    hessian_ratio_max: float = 5.0
    border_margin: int = 4

    def __post_init__(self):
        values = (self.sigma_min, self.sigma_max, self.dog_threshold, self.hessian_ratio_max)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("detection parameters must be finite")
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be > 0")
        if self.sigma_max <= self.sigma_min:
            raise ValueError("sigma_max must be > sigma_min")
        if int(self.scales_per_octave) != self.scales_per_octave or self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be an integer >= 1")
        if self.dog_threshold <= 0:
            raise ValueError("dog_threshold must be > 0")
        if self.hessian_ratio_max < 1:
            raise ValueError("hessian_ratio_max must be >= 1")
        if int(self.border_margin) != self.border_margin or self.border_margin < 0:
            raise ValueError("border_margin must be an integer >= 0")


@dataclass(frozen=True)
class Blob:
    x: float
    y: float
    sigma: float
    response: float

    @property
    def center(self) -> tuple[float, float]:
        return (self.x, self.y)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1D Gaussian truncated at radius ``ceil(3 * sigma)``, normalized to sum 1."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge replication at the borders."""
    kernel = gaussian_kernel(sigma)
    image = np.asarray(image, dtype=np.float64)
    out = ndimage.correlate1d(image, kernel, axis=0, mode="nearest")
    return ndimage.correlate1d(out, kernel, axis=1, mode="nearest")


def dog_response(image: np.ndarray, sigma_lo: float, sigma_hi: float) -> np.ndarray:
    if not sigma_lo < sigma_hi:
        raise ValueError("sigma_lo must be < sigma_hi")
    return gaussian_blur(image, sigma_lo) - gaussian_blur(image, sigma_hi)


def scale_levels(params: DetectParams) -> np.ndarray:
    """Blur sigmas ``sigma_min * 2**(k / spo)`` up to the first one past ``sigma_max``.

    DoG level ``k`` pairs sigmas ``k`` and ``k + 1``, so there is one fewer
    DoG level than returned sigmas.
    """
    sigmas = []
    k = 0
    while True:
        sigma = params.sigma_min * 2.0 ** (k / params.scales_per_octave)
        sigmas.append(sigma)
        if sigma > params.sigma_max:
            break
        k += 1
    return np.asarray(sigmas)


def _hessian_ok(level: np.ndarray, y: int, x: int, ratio_max: float) -> bool:
    h, w = level.shape
    ym, yp = max(y - 1, 0), min(y + 1, h - 1)
    xm, xp = max(x - 1, 0), min(x + 1, w - 1)
    c = level[y, x]
    dxx = level[y, xp] - 2.0 * c + level[y, xm]
    dyy = level[yp, x] - 2.0 * c + level[ym, x]
    dxy = 0.25 * (level[yp, xp] - level[yp, xm] - level[ym, xp] + level[ym, xm])
    half_trace = 0.5 * (dxx + dyy)
    disc = math.sqrt(max((0.5 * (dxx - dyy)) ** 2 + dxy * dxy, 0.0))
    ev_a, ev_b = half_trace + disc, half_trace - disc
    lam1, lam2 = (ev_a, ev_b) if abs(ev_a) >= abs(ev_b) else (ev_b, ev_a)
    if lam1 >= 0:
        return False
    return abs(lam1) / max(abs(lam2), _EPS) <= ratio_max


def _parabolic_offset(minus: float, center: float, plus: float) -> float:
    denom = minus - 2.0 * center + plus
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (minus - plus) / denom, -0.5, 0.5))


def detect_blobs(image: np.ndarray, params: DetectParams | None = None) -> list[Blob]:
    """Find bright blobs as strict scale-space maxima of the DoG stack.

    A candidate must exceed every existing neighbor in its 3x3x3 scale-space
    neighborhood (the first and last DoG levels only have one scale
    neighbor), reach ``dog_threshold``, lie at least ``border_margin`` pixels
    from every edge and pass the Hessian test: with eigenvalues
    ``|l1| >= |l2|`` of the DoG Hessian at the peak, ``l1 < 0`` and
    ``|l1| / |l2| <= hessian_ratio_max``.

    Centers are refined to sub-pixel precision with a per-axis parabola fit
    (clamped to half a pixel).  The result is sorted by descending response.
    """
    params = params or DetectParams()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or min(image.shape) < 3:
        raise ValueError("image must be 2D and at least 3x3")
    sigmas = scale_levels(params)
    n_levels = len(sigmas) - 1
    if n_levels < 3:
        raise ValueError(
            f"scale range [{params.sigma_min}, {params.sigma_max}] with "
            f"{params.scales_per_octave} scales/octave gives {n_levels} DoG levels; need >= 3"
        )

    blurred = [gaussian_blur(image, s) for s in sigmas]
    stack = np.stack([blurred[k] - blurred[k + 1] for k in range(n_levels)])

    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    neighbor_max = ndimage.maximum_filter(stack, footprint=footprint, mode="constant", cval=-np.inf)
    candidates = (stack > neighbor_max) & (stack >= params.dog_threshold)

    m = int(params.border_margin)
    height, width = image.shape
    if m > 0:
        candidates[:, :m, :] = False
        candidates[:, height - m :, :] = False
        candidates[:, :, :m] = False
        candidates[:, :, width - m :] = False

    blobs = []
    for k, y, x in np.argwhere(candidates):
        level = stack[k]
        if not _hessian_ok(level, y, x, params.hessian_ratio_max):
            continue
        dx = dy = 0.0
        if 0 < x < width - 1:
            dx = _parabolic_offset(level[y, x - 1], level[y, x], level[y, x + 1])
        if 0 < y < height - 1:
            dy = _parabolic_offset(level[y - 1, x], level[y, x], level[y + 1, x])
        blobs.append(Blob(x=float(x + dx), y=float(y + dy), sigma=float(sigmas[k]), response=float(level[y, x])))

    # stable sort keeps the (scale, row, column) scan order among equal responses
    blobs.sort(key=lambda b: -b.response)
    return blobs


def blobs_to_mask(blobs: list[Blob], width: int, height: int) -> np.ndarray:
    """Union of discs of radius ``max(1, round(sqrt(2) * sigma))`` around each blob."""
    mask = np.zeros((height, width), dtype=bool)
    for blob in blobs:
        if not (0 <= blob.x <= width - 1 and 0 <= blob.y <= height - 1):
            raise ValueError(f"blob center ({blob.x}, {blob.y}) outside {width}x{height} raster")
        radius = max(1, int(math.floor(math.sqrt(2.0) * blob.sigma + 0.5)))
        x_lo, x_hi = max(0, int(math.floor(blob.x - radius))), min(width - 1, int(math.ceil(blob.x + radius)))
        y_lo, y_hi = max(0, int(math.floor(blob.y - radius))), min(height - 1, int(math.ceil(blob.y + radius)))
        yy, xx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        disc = (xx - blob.x) ** 2 + (yy - blob.y) ** 2 <= radius * radius
        mask[y_lo : y_hi + 1, x_lo : x_hi + 1] |= disc
    return mask


_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def centroids(mask: np.ndarray) -> np.ndarray:
    """Pixel-mean centroids ``(x, y)`` of the mask's 8-connected components.

    Components come out in raster-scan order of their first pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return np.zeros((0, 2), dtype=np.float64)
    # ndimage.label numbers components by first pixel in scan order
    index = np.arange(1, n + 1)
    cy, cx = np.asarray(ndimage.center_of_mass(mask, labels, index)).T
    return np.column_stack([cx, cy])
