"""
Cross-correlation template matching.

The score at scene pixel ``(x, y)`` is the inner product between the
template (top-left anchored) and the zero-padded scene window whose top-left
corner is the padded coordinate ``(x, y)``::

    f(x, y) = sum_{x', y'} a(x', y') * b_pad(x + x', y + y')

The scene is padded by ``floor(tw / 2)`` columns and ``floor(th / 2)`` rows
on every side, so the map has the unpadded scene's shape and sample
``(x, y)`` is the template centered on scene pixel ``(x, y)``.

Two evaluation routes exist: a direct shifted-sum reference and an FFT path
that is the one used in practice.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import fft as sp_fft

from .cluster import ROTATIONS, Template

__all__ = [
    "ScoreMap",
    "Match",
    "MatchSet",
    "EmptyMatchError",
    "pad_offsets",
    "pad_scene",
    "cross_correlate_direct",
    "cross_correlate_fft",
    "correlate_variants",
    "normalize_scores",
    "select_matches",
    "best_match",
    "template_box",
]

logger = logging.getLogger(__name__)


class EmptyMatchError(RuntimeError):
    """No location passed the percentile rule."""


@dataclass(frozen=True)
class ScoreMap:
    scores: np.ndarray  # (height, width) float32
    template_rotation: int = 0
    template_width: int = 1
    template_height: int = 1

    @property
    def width(self) -> int:
        return self.scores.shape[1]

    @property
    def height(self) -> int:
        return self.scores.shape[0]


class Match(NamedTuple):
    x: int
    y: int
    score: float
    rotation: int


@dataclass(frozen=True)
class MatchSet:
    locations: list[Match]
    percentile_used: float
    thresholds: dict[int, float]

    def __len__(self) -> int:
        return len(self.locations)


def pad_offsets(tw: int, th: int) -> tuple[int, int]:
    """Per-side zero padding ``(pad_x, pad_y)`` for a ``tw x th`` template."""
    if tw < 1 or th < 1:
        raise ValueError("template dims must be >= 1")
    return tw // 2, th // 2


def pad_scene(mask: np.ndarray, tw: int, th: int) -> np.ndarray:
    px, py = pad_offsets(tw, th)
    return np.pad(np.asarray(mask), ((py, py), (px, px)), mode="constant", constant_values=0)


def _bits(template) -> np.ndarray:
    return np.asarray(template.bits if isinstance(template, Template) else template)


def _rotation(template) -> int:
    return template.rotation_deg if isinstance(template, Template) else 0


def _check_fits(a: np.ndarray, scene_shape: tuple[int, int]) -> None:
    th, tw = a.shape
    px, py = pad_offsets(tw, th)
    h, w = scene_shape
    if tw > w + 2 * px or th > h + 2 * py:
        raise ValueError(f"template {tw}x{th} larger than padded scene {w + 2 * px}x{h + 2 * py}")


def cross_correlate_direct(template, scene: np.ndarray) -> ScoreMap:
    """Reference evaluation by summing shifted copies of the padded scene.

    ``template`` may be a :class:`Template` or a bare 2D array.
    """
    a = _bits(template).astype(np.float64)
    b = np.asarray(scene, dtype=np.float64)
    _check_fits(a, b.shape)
    th, tw = a.shape
    h, w = b.shape
    padded = pad_scene(b, tw, th)
    out = np.zeros((h, w), dtype=np.float64)
    for ty, tx in zip(*np.nonzero(a)):
        out += a[ty, tx] * padded[ty : ty + h, tx : tx + w]
    return ScoreMap(out.astype(np.float32), _rotation(template), tw, th)


def _fft_shape(scene_shape: tuple[int, int], max_th: int, max_tw: int) -> tuple[int, int]:
    h, w = scene_shape
    # linear (non-circular) correlation needs scene + template - 1 samples per axis
    return sp_fft.next_fast_len(h + max_th - 1, real=True), sp_fft.next_fast_len(w + max_tw - 1, real=True)


def _fft_correlate(
    scene_spectrum: np.ndarray,
    fshape: tuple[int, int],
    a: np.ndarray,
    scene_shape: tuple[int, int],
    workers: int | None,
) -> np.ndarray:
    th, tw = a.shape
    h, w = scene_shape
    px, py = pad_offsets(tw, th)
    a_spec = sp_fft.rfft2(a, s=fshape, workers=workers)
    # conj() turns convolution into correlation: full[u] = sum_k a[k] b[k + u] (circular)
    full = sp_fft.irfft2(scene_spectrum * np.conj(a_spec), s=fshape, workers=workers)
    # map sample (x, y) sits at lag (x - px, y - py); negative lags wrapped to the end
    rows = (np.arange(h) - py) % fshape[0]
    cols = (np.arange(w) - px) % fshape[1]
    return full[np.ix_(rows, cols)]


def _is_binary(arr: np.ndarray) -> bool:
    return arr.dtype == bool or bool(np.all((arr == 0) | (arr == 1)))


def _finish(raw: np.ndarray, integral: bool) -> np.ndarray:
    # binary inputs give integer scores; rounding removes FFT round-off exactly
    if integral:
        raw = np.rint(raw)
    return np.maximum(raw, 0.0).astype(np.float32)


def cross_correlate_fft(template, scene: np.ndarray, workers: int | None = None) -> ScoreMap:
    """FFT evaluation of the same score map as :func:`cross_correlate_direct`."""
    a = _bits(template).astype(np.float64)
    b = np.asarray(scene, dtype=np.float64)
    _check_fits(a, b.shape)
    th, tw = a.shape
    fshape = _fft_shape(b.shape, th, tw)
    spectrum = sp_fft.rfft2(b, s=fshape, workers=workers)
    raw = _fft_correlate(spectrum, fshape, a, b.shape, workers)
    integral = _is_binary(a) and _is_binary(b)
    return ScoreMap(_finish(raw, integral), _rotation(template), tw, th)


def _window_counts(scene: np.ndarray, tw: int, th: int) -> np.ndarray:
    """Sum of scene values under each template placement (integral image)."""
    h, w = scene.shape
    padded = pad_scene(scene.astype(np.float64), tw, th)
    # one extra zero row/column after the pad keeps every window inside the table
    padded = np.pad(padded, ((0, th), (0, tw)))
    table = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    table[1:, 1:] = padded.cumsum(0).cumsum(1)
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return table[y + th, x + tw] - table[y, x + tw] - table[y + th, x] + table[y, x]


def normalize_scores(score_map: ScoreMap, template, scene: np.ndarray) -> ScoreMap:
    """Cosine-normalized scores ``f / sqrt(sum(a^2) * sum(b_window^2))`` in [0, 1].

    Windows with no scene energy score 0.
    """
    a = _bits(template).astype(np.float64)
    b = np.asarray(scene, dtype=np.float64)
    th, tw = a.shape
    energy = _window_counts(b * b, tw, th) * float(np.sum(a * a))
    energy = np.rint(energy) if _is_binary(a) and _is_binary(b) else energy
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = np.where(energy > 0, score_map.scores / np.sqrt(energy), 0.0)
    normalized = np.clip(normalized, 0.0, 1.0).astype(np.float32)
    return ScoreMap(normalized, score_map.template_rotation, tw, th)


def correlate_variants(
    templates: Sequence[Template],
    scene: np.ndarray,
    ncc: bool = False,
    workers: int | None = None,
) -> list[ScoreMap]:
    """Score every template against one scene, sharing the scene transform."""
    b = np.asarray(scene, dtype=np.float64)
    bits = [_bits(t).astype(np.float64) for t in templates]
    for a in bits:
        _check_fits(a, b.shape)
    # rotations swap dims, so size the transform for the widest and tallest variant
    max_th = max(a.shape[0] for a in bits)
    max_tw = max(a.shape[1] for a in bits)
    fshape = _fft_shape(b.shape, max_th, max_tw)
    spectrum = sp_fft.rfft2(b, s=fshape, workers=workers)
    scene_binary = _is_binary(b)
    maps = []
    for template, a in zip(templates, bits):
        raw = _fft_correlate(spectrum, fshape, a, b.shape, workers)
        th, tw = a.shape
        score_map = ScoreMap(_finish(raw, scene_binary and _is_binary(a)), _rotation(template), tw, th)
        if ncc:
            score_map = normalize_scores(score_map, a, b)
        maps.append(score_map)
    return maps


def select_matches(maps: Sequence[ScoreMap], percentile: float = 99.0) -> MatchSet:
    """Keep locations scoring strictly above each map's own percentile.

    The percentile uses linear interpolation between order statistics.  A
    map whose scores are all equal contributes nothing and logs a warning.
    Locations are sorted by descending score, then by rotation, row and
    column.
    """
    if not maps:
        raise ValueError("need at least one score map")
    if not 0 < percentile < 100:
        raise ValueError("percentile must be in (0, 100)")
    shape = maps[0].scores.shape
    if any(m.scores.shape != shape for m in maps):
        raise ValueError("score maps must share dimensions")

    locations: list[Match] = []
    thresholds: dict[int, float] = {}
    for score_map in maps:
        scores = score_map.scores.astype(np.float64)
        threshold = float(np.percentile(scores, percentile, method="linear"))
        thresholds[score_map.template_rotation] = threshold
        ys, xs = np.nonzero(scores > threshold)
        if len(ys) == 0:
            logger.warning(
                "score map for rotation %d has no location above its %g-th percentile (%g); "
                "map is degenerate",
                score_map.template_rotation,
                percentile,
                threshold,
            )
            continue
        rotation = score_map.template_rotation
        locations.extend(Match(int(x), int(y), float(scores[y, x]), rotation) for y, x in zip(ys, xs))

    locations.sort(key=lambda m: (-m.score, _rotation_rank(m.rotation), m.y, m.x))
    return MatchSet(locations=locations, percentile_used=float(percentile), thresholds=thresholds)


def _rotation_rank(rotation: int) -> int:
    return ROTATIONS.index(rotation) if rotation in ROTATIONS else len(ROTATIONS)


def best_match(match_set: MatchSet) -> Match:
    """Top-scoring location; ties go to rotation order 0/90/180/270, then y, then x."""
    if not match_set.locations:
        raise EmptyMatchError("match set is empty")
    return min(match_set.locations, key=lambda m: (-m.score, _rotation_rank(m.rotation), m.y, m.x))


def template_box(match: Match, tw: int, th: int) -> tuple[int, int, int, int]:
    """Scene rectangle ``(x0, y0, w, h)`` covered by the template at ``match``.

    Not clipped; callers clip to the scene when drawing.
    """
    px, py = pad_offsets(tw, th)
    return match.x - px, match.y - py, tw, th

