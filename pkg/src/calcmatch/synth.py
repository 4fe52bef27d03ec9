"""
Synthetic scene/specimen pairs with known ground truth.

A scene holds one planted cluster of Gaussian blobs plus isolated
distractor blobs and additive Gaussian noise.  The specimen re-renders the
cluster alone, rotated by the inverse of the planted rotation and magnified,
so a correct pipeline has to undo both.

Randomness comes from numpy's PCG64 bit generator seeded with the case
seed, which keeps generated files identical across platforms.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .cluster import ROTATIONS, NoClusterError, Rect
from .config import PipelineConfig
from .evaluate import METRIC_COLUMNS
from .match import EmptyMatchError
from .raster_io import CaseMeta, save_case_meta, save_gray_image

__all__ = [
    "SynthParams",
    "GroundTruth",
    "SynthCase",
    "render_blobs",
    "generate_case",
    "write_case",
    "sweep",
    "SWEEP_COLUMNS",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthParams:
    scene_w: int = 1200
    scene_h: int = 900
    n_background_blobs: int = 20
    cluster_size: int = 6
    cluster_spread: float = 20.0
    blob_sigma_range: tuple[float, float] = (1.5, 2.5)
    blob_amplitude_range: tuple[float, float] = (0.4, 0.9)
    planted_rotation: int = 0
    specimen_magnification: float = 1.0
    noise_sigma: float = 0.01
    seed: int = 0
    confuser: bool = False
    min_separation: float = 10.0

    def __post_init__(self):
        lo, hi = self.blob_sigma_range
        if not 0 < lo <= hi:
            raise ValueError("blob_sigma_range must satisfy 0 < min <= max")
        lo, hi = self.blob_amplitude_range
        if not 0 < lo <= hi <= 1:
            raise ValueError("blob_amplitude_range must lie in (0, 1] and be ordered")
        if self.cluster_size < 3:
            raise ValueError("cluster_size must be >= 3")
        if self.n_background_blobs < 0:
            raise ValueError("n_background_blobs must be >= 0")
        if self.planted_rotation not in ROTATIONS:
            raise ValueError(f"planted_rotation must be one of {ROTATIONS}")
        if not self.specimen_magnification > 0:
            raise ValueError("specimen_magnification must be > 0")
        if self.noise_sigma < 0 or self.cluster_spread <= 0 or self.min_separation < 0:
            raise ValueError("noise_sigma, cluster_spread and min_separation must be non-negative")
        if self.scene_w < 1 or self.scene_h < 1:
            raise ValueError("scene dims must be >= 1")


@dataclass(frozen=True)
class GroundTruth:
    cluster_centroids_scene: np.ndarray
    reference_box: Rect
    planted_rotation: int
    planted_offset: tuple[int, int]
    confuser_centroids_scene: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "cluster_centroids_scene": [[float(x), float(y)] for x, y in self.cluster_centroids_scene],
            "reference_box": list(self.reference_box),
            "planted_rotation": self.planted_rotation,
            "planted_offset": list(self.planted_offset),
        }
        if self.confuser_centroids_scene is not None:
            out["confuser_centroids_scene"] = [[float(x), float(y)] for x, y in self.confuser_centroids_scene]
        return out


@dataclass(frozen=True)
class SynthCase:
    scene: np.ndarray
    specimen: np.ndarray
    meta: CaseMeta
    truth: GroundTruth
    params: SynthParams


def render_blobs(
    width: int,
    height: int,
    centers: np.ndarray,
    sigmas: Sequence[float],
    amplitudes: Sequence[float],
) -> np.ndarray:
    """Sum of isotropic Gaussians sampled at pixel centers, each cut at 5 sigma."""
    image = np.zeros((height, width), dtype=np.float64)
    for (cx, cy), sigma, amp in zip(np.asarray(centers).reshape(-1, 2), sigmas, amplitudes):
        radius = int(math.ceil(5.0 * sigma))
        x_lo, x_hi = max(0, int(math.floor(cx)) - radius), min(width - 1, int(math.ceil(cx)) + radius)
        y_lo, y_hi = max(0, int(math.floor(cy)) - radius), min(height - 1, int(math.ceil(cy)) + radius)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        yy, xx = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        image[y_lo : y_hi + 1, x_lo : x_hi + 1] += amp * np.exp(
            -((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma)
        )
    return image


def _rotate_offsets(offsets: np.ndarray, degrees: int) -> np.ndarray:
    """Rotate centered ``(u, v)`` offsets the same way the raster rotation does.

    One 90-degree step maps ``(u, v)`` to ``(-v, u)``.
    """
    out = np.asarray(offsets, dtype=np.float64).copy()
    for _ in range((degrees // 90) % 4):
        out = np.column_stack([-out[:, 1], out[:, 0]])
    return out


def _sample_cluster(rng: np.random.Generator, params: SynthParams) -> np.ndarray:
    """Member offsets within ``cluster_spread`` of the origin, mutually separated."""
    for _ in range(1000):
        offsets: list[tuple[float, float]] = []
        for _ in range(200 * params.cluster_size):
            r = params.cluster_spread * math.sqrt(rng.random())
            theta = 2.0 * math.pi * rng.random()
            cand = (r * math.cos(theta), r * math.sin(theta))
            if all(math.dist(cand, o) >= params.min_separation for o in offsets):
                offsets.append(cand)
                if len(offsets) == params.cluster_size:
                    return np.asarray(offsets)
    raise ValueError(
        f"cannot place {params.cluster_size} blobs {params.min_separation} px apart "
        f"within radius {params.cluster_spread}"
    )


def _far_from(point: np.ndarray, others: np.ndarray, distance: float) -> bool:
    if len(others) == 0:
        return True
    return bool(np.min(np.hypot(*(np.asarray(others) - point).T)) > distance)


def generate_case(params: SynthParams) -> SynthCase:
    """Build one synthetic case; identical ``params`` give identical arrays."""
    rng = np.random.Generator(np.random.PCG64(params.seed))
    sig_lo, sig_hi = params.blob_sigma_range
    amp_lo, amp_hi = params.blob_amplitude_range
    w, h = params.scene_w, params.scene_h

    offsets = _sample_cluster(rng, params)
    sigmas = rng.uniform(sig_lo, sig_hi, params.cluster_size)
    amplitudes = rng.uniform(amp_lo, amp_hi, params.cluster_size)

    margin = params.cluster_spread + 6.0 * sig_hi + 8.0
    if w <= 2 * margin or h <= 2 * margin:
        raise ValueError(f"cluster (margin {margin:.1f} px) does not fit a {w}x{h} scene")

    def random_center() -> np.ndarray:
        # integer centers keep the identity specimen an exact crop of the scene
        return np.array([rng.integers(math.ceil(margin), math.floor(w - margin) + 1),
                         rng.integers(math.ceil(margin), math.floor(h - margin) + 1)], dtype=np.float64)

    center = random_center()
    members = center + offsets
    occupied = members

    confuser_members = None
    if params.confuser:
        for _ in range(10000):
            cand = random_center()
            if np.hypot(*(cand - center)) > 5.0 * params.cluster_spread:
                break
        else:
            raise ValueError("no room for the confuser cluster")
        confuser_members = cand + offsets
        occupied = np.vstack([occupied, confuser_members])

    edge = 6.0 * sig_hi
    background: list[np.ndarray] = []
    attempts = 0
    while len(background) < params.n_background_blobs:
        attempts += 1
        if attempts > 100000:
            raise ValueError("cannot place all distractor blobs; scene too crowded")
        cand = rng.uniform([edge, edge], [w - edge, h - edge])
        if not _far_from(cand, occupied, 3.0 * params.cluster_spread):
            continue
        if background and not _far_from(cand, np.asarray(background), 2.0 * params.min_separation):
            continue
        background.append(cand)
    background_arr = np.asarray(background).reshape(-1, 2)
    bg_sigmas = rng.uniform(sig_lo, sig_hi, len(background_arr))
    bg_amplitudes = rng.uniform(amp_lo, amp_hi, len(background_arr))

    all_centers = [members]
    all_sigmas = [sigmas]
    all_amps = [amplitudes]
    if confuser_members is not None:
        all_centers.append(confuser_members)
        all_sigmas.append(sigmas)
        all_amps.append(amplitudes)
    all_centers.append(background_arr)
    all_sigmas.append(bg_sigmas)
    all_amps.append(bg_amplitudes)
    scene = render_blobs(w, h, np.vstack(all_centers), np.concatenate(all_sigmas), np.concatenate(all_amps))
    if params.noise_sigma > 0:
        scene = scene + rng.normal(0.0, params.noise_sigma, scene.shape)
    scene = np.clip(scene, 0.0, 1.0)

    # specimen: cluster alone, counter-rotated and magnified about its center
    mag = params.specimen_magnification
    spec_offsets = _rotate_offsets(offsets, (360 - params.planted_rotation) % 360) * mag
    spec_margin = int(math.ceil(8.0 * sig_hi * mag)) + 24
    half_w = int(math.ceil(np.abs(spec_offsets[:, 0]).max())) + spec_margin
    half_h = int(math.ceil(np.abs(spec_offsets[:, 1]).max())) + spec_margin
    spec_center = np.array([half_w, half_h], dtype=np.float64)
    specimen = render_blobs(2 * half_w + 1, 2 * half_h + 1, spec_center + spec_offsets, sigmas * mag, amplitudes)
    if params.noise_sigma > 0:
        specimen = specimen + rng.normal(0.0, params.noise_sigma, specimen.shape)
    specimen = np.clip(specimen, 0.0, 1.0)

    x_lo, y_lo = np.floor(members.min(axis=0)).astype(int)
    x_hi, y_hi = np.ceil(members.max(axis=0)).astype(int)
    truth = GroundTruth(
        cluster_centroids_scene=members,
        reference_box=Rect(int(x_lo), int(y_lo), int(x_hi - x_lo + 1), int(y_hi - y_lo + 1)),
        planted_rotation=params.planted_rotation,
        planted_offset=(int(center[0]) - half_w, int(center[1]) - half_h),
        confuser_centroids_scene=confuser_members,
    )
    meta = CaseMeta(
        case_id=f"synth-{params.seed}",
        magnification_factor_specimen=float(mag),
        magnification_factor_scene=1.0,
    )
    return SynthCase(scene=scene, specimen=specimen, meta=meta, truth=truth, params=params)


def write_case(case: SynthCase, out_dir: str | Path) -> dict[str, Path]:
    """Write scene.pgm, specimen.pgm, case.json and truth.json (16-bit rasters)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "scene": out_dir / "scene.pgm",
        "specimen": out_dir / "specimen.pgm",
        "meta": out_dir / "case.json",
        "truth": out_dir / "truth.json",
    }
    save_gray_image(case.scene, paths["scene"], bit_depth=16)
    save_gray_image(case.specimen, paths["specimen"], bit_depth=16)
    save_case_meta(case.meta, paths["meta"])
    paths["truth"].write_text(json.dumps(case.truth.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


SWEEP_COLUMNS = ("cell", "status", "tp", "fp", "fn", "tn", *METRIC_COLUMNS)
_SYNTH_FIELDS = tuple(f.name for f in fields(SynthParams))


def _expand_grid(params_grid: Mapping[str, Sequence[Any]] | Iterable[Mapping[str, Any]]) -> list[dict]:
    if isinstance(params_grid, Mapping):
        if not params_grid:
            return []
        keys = list(params_grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(params_grid[k] for k in keys))]
    return [dict(cell) for cell in params_grid]


def sweep(
    params_grid: Mapping[str, Sequence[Any]] | Iterable[Mapping[str, Any]],
    out_dir: str | Path | None = None,
    base: SynthParams | None = None,
    config: PipelineConfig | None = None,
) -> list[dict]:
    """Run generate_case + the full pipeline for every grid cell.

    ``params_grid`` is either a mapping of SynthParams field -> values
    (cartesian product) or an explicit list of override dicts.  Failing
    cells become rows with ``status`` set to the error kind; the sweep
    itself never aborts.  With ``out_dir`` the rows are also written to
    ``summary.csv``.
    """
    from .pipeline import run_case

    base = base or SynthParams()
    config = config or PipelineConfig()
    cells = _expand_grid(params_grid)
    param_keys = sorted({k for cell in cells for k in cell})
    unknown = set(param_keys) - set(_SYNTH_FIELDS)
    if unknown:
        raise ValueError(f"unknown SynthParams field(s): {sorted(unknown)}")

    rows = []
    for index, cell in enumerate(cells):
        row: dict[str, Any] = {"cell": index, **{k: cell.get(k, getattr(base, k)) for k in param_keys}}
        try:
            case = generate_case(replace(base, **cell))
            result = run_case(case.scene, case.specimen, case.meta, case.truth.reference_box, config)
            counts, m = result.report.counts, result.report.metrics
            row.update(status="ok", tp=counts.tp, fp=counts.fp, fn=counts.fn, tn=counts.tn)
            row.update({col: val for col, val in zip(METRIC_COLUMNS, m.as_tuple())})
        except NoClusterError:
            row.update(status="failed:no-cluster")
        except EmptyMatchError:
            row.update(status="failed:no-match")
        except Exception as exc:  # a sweep records failures instead of stopping
            logger.warning("sweep cell %d failed: %s", index, exc)
            row.update(status=f"failed:{type(exc).__name__}")
        rows.append(row)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        header = ["cell", *param_keys, *SWEEP_COLUMNS[1:]]
        with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(row.get(col)) for col in header])
    return rows


def _fmt(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.2f}"
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def params_to_dict(params: SynthParams) -> dict:
    out = asdict(params)
    out["blob_sigma_range"] = list(params.blob_sigma_range)
    out["blob_amplitude_range"] = list(params.blob_amplitude_range)
    return out
