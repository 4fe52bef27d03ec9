"""
``calcmatch`` command line interface.

Subcommands: segment, cluster, match, evaluate, pipeline, synth, sweep and
validate-config.  Parameter precedence is flags > ``--config`` file >
built-in defaults.

Exit codes: 0 ok, 1 usage or I/O error, 2 no cluster found, 3 no match
selected.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .cluster import ROTATIONS, NoClusterError, Rect, Template
from .config import ConfigError, PipelineConfig, load_config, parse_rect, validate_config
from .evaluate import METRIC_COLUMNS, format_table
from .match import EmptyMatchError, Match, MatchSet, ScoreMap, pad_offsets, template_box
from .pipeline import build_templates, evaluate_matches, match_templates, segment
from .raster_io import (
    RasterFormatError,
    load_case_meta,
    load_gray_image,
    load_mask,
    load_points,
    render_overlay,
    save_mask,
    save_points,
    save_scoremap_array,
)
from .synth import SynthParams, generate_case, sweep, write_case

logger = logging.getLogger("calcmatch")

EXIT_OK, EXIT_USAGE, EXIT_NO_CLUSTER, EXIT_NO_MATCH = 0, 1, 2, 3


class StageError(Exception):
    def __init__(self, stage: str, message: str, hint: str, code: int = EXIT_USAGE):
        super().__init__(f"[{stage}] {message}\n  hint: {hint}")
        self.code = code


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1 instead of argparse's 2 (reserved for no-cluster)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------
# File-level stages (shared by the subcommands and `pipeline`)
# ---------------------------------------------------------------------
def _rotation_tag(rotation: int) -> str:
    return f"{rotation:03d}"


def stage_segment(image_path, mask_path, points_path, config: PipelineConfig) -> int:
    try:
        image = load_gray_image(image_path)
    except (OSError, RasterFormatError) as exc:
        raise StageError("segment", str(exc), "input must be an 8/16-bit single-channel PGM") from exc
    mask, points = segment(image, config.detect_params)
    save_mask(mask, mask_path)
    save_points(points, points_path)
    logger.info("segment: %s -> %d objects", image_path, len(points))
    return len(points)


def stage_cluster(mask_path, points_path, meta_path, prefix: str, config: PipelineConfig) -> list[Template]:
    try:
        mask = load_mask(mask_path)
        points = load_points(points_path)
        meta = load_case_meta(meta_path)
    except (OSError, ValueError) as exc:
        raise StageError("cluster", str(exc), "check the mask, points and case metadata files") from exc
    try:
        templates = build_templates(mask, points, meta, config.eps, config.min_pts, config.pad)
    except NoClusterError as exc:
        raise StageError(
            "cluster",
            f"no cluster found: {exc}",
            f"raise --eps (now {config.eps}) or lower --min-pts (now {config.min_pts})",
            EXIT_NO_CLUSTER,
        ) from exc
    provenance = []
    for template in templates:
        tag = _rotation_tag(template.rotation_deg)
        save_mask(template.bits, f"{prefix}{tag}.pgm")
        provenance.append(
            {
                "file": f"{Path(prefix).name}{tag}.pgm",
                "rotation_deg": template.rotation_deg,
                "scale_applied": template.scale_applied,
                "source_rect": list(template.source_rect),
                "width": template.width,
                "height": template.height,
            }
        )
    Path(f"{prefix}templates.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return templates


def _load_templates(prefix: str) -> list[Template]:
    templates = []
    for rotation in ROTATIONS:
        bits = load_mask(f"{prefix}{_rotation_tag(rotation)}.pgm")
        templates.append(Template(bits=bits, rotation_deg=rotation))
    return templates


def matchset_to_dict(maps: Sequence[ScoreMap], match_set: MatchSet, ncc: bool) -> dict:
    shape = maps[0].scores.shape
    templates = {}
    for m in maps:
        px, py = pad_offsets(m.template_width, m.template_height)
        templates[str(m.template_rotation)] = {
            "width": m.template_width,
            "height": m.template_height,
            "pad_x": px,
            "pad_y": py,
        }
    return {
        "scene": {"width": shape[1], "height": shape[0]},
        "percentile": match_set.percentile_used,
        "ncc": ncc,
        "thresholds": {str(k): v for k, v in match_set.thresholds.items()},
        "templates": templates,
        # a map index (x, y) is the template centered on scene pixel (x, y)
        "locations": [
            {"x": m.x, "y": m.y, "map_x": m.x, "map_y": m.y, "score": m.score, "rotation": m.rotation}
            for m in match_set.locations
        ],
    }


def matchset_from_dict(payload: dict) -> tuple[MatchSet, dict]:
    locations = [Match(int(d["x"]), int(d["y"]), float(d["score"]), int(d["rotation"])) for d in payload["locations"]]
    thresholds = {int(k): float(v) for k, v in payload.get("thresholds", {}).items()}
    return MatchSet(locations, float(payload["percentile"]), thresholds), payload


def stage_match(scene_mask_path, prefix: str, scores_prefix, matches_path, config: PipelineConfig) -> MatchSet:
    try:
        scene_mask = load_mask(scene_mask_path)
        templates = _load_templates(prefix)
    except (OSError, ValueError) as exc:
        raise StageError("match", str(exc), "run `calcmatch cluster` first to produce the template files") from exc
    maps, match_set = match_templates(scene_mask, templates, config.percentile, config.ncc, config.workers)
    if scores_prefix:
        for m in maps:
            save_scoremap_array(m.scores, f"{scores_prefix}{_rotation_tag(m.template_rotation)}.bin")
    payload = matchset_to_dict(maps, match_set, config.ncc)
    Path(matches_path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if not match_set.locations:
        raise StageError(
            "match",
            "no location scored above the percentile threshold in any score map",
            "the scene mask may be empty or uniform; check segmentation or lower --percentile",
            EXIT_NO_MATCH,
        )
    logger.info("match: %d locations selected", len(match_set))
    return match_set


def _reference_from(reference_box: str | None, truth: str | None) -> Rect | None:
    if reference_box:
        return parse_rect(reference_box)
    if truth:
        payload = json.loads(Path(truth).read_text(encoding="utf-8"))
        return parse_rect(payload["reference_box"])
    return None


def stage_evaluate(
    scene_mask_path,
    matches_path,
    reference: Rect,
    report_path,
    config: PipelineConfig,
    overlay_path=None,
    scene_image_path=None,
) -> dict:
    try:
        scene_mask = load_mask(scene_mask_path)
        match_set, payload = matchset_from_dict(json.loads(Path(matches_path).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError) as exc:
        raise StageError("evaluate", str(exc), "run `calcmatch match` first to produce matches.json") from exc
    height, width = scene_mask.shape
    if reference.x1 > width or reference.y1 > height:
        raise StageError("evaluate", f"reference box {tuple(reference)} exceeds the {width}x{height} scene",
                         "give the box in scene pixel coordinates")
    report = evaluate_matches(scene_mask.shape, match_set, reference, config.patch_size, config.mode)
    out = report.to_dict()
    out["reference_box"] = list(reference)
    out["table"] = format_table([("case", report.metrics)])
    Path(report_path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if overlay_path:
        base = load_gray_image(scene_image_path) if scene_image_path else scene_mask.astype(np.float64)
        boxes = [(tuple(report.grid.patch(i)), "patch") for i in sorted(report.predicted)]
        boxes.append((tuple(reference), "reference"))
        if report.best is not None:
            info = payload["templates"][str(report.best.rotation)]
            x0, y0, w, h = template_box(report.best, info["width"], info["height"])
            xa, ya = max(0, x0), max(0, y0)
            xb, yb = min(width, x0 + w), min(height, y0 + h)
            boxes.append(((xa, ya, xb - xa, yb - ya), "predicted"))
        render_overlay(base, boxes, overlay_path)
    return out


# ---------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------
def _add_global(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="JSON parameter file (flags override it)")
    p.add_argument("--threads", type=int, default=default, help="FFT worker threads, 0 = auto")
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def _add_detect(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("detection")
    g.add_argument("--sigma-min", type=float)
    g.add_argument("--sigma-max", type=float)
    g.add_argument("--scales-per-octave", type=int)
    g.add_argument("--dog-threshold", type=float)
    g.add_argument("--hessian-ratio-max", type=float)
    g.add_argument("--border-margin", type=int)


def _add_cluster(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("clustering")
    g.add_argument("--eps", type=float, help="DBSCAN radius in specimen pixels (default 40)")
    g.add_argument("--min-pts", type=int, help="DBSCAN core-point count (default 3)")
    g.add_argument("--pad", type=int, help="template bounding-box padding in pixels (default 2)")


def _add_match(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("matching")
    g.add_argument("--percentile", type=float, help="per-map selection percentile (default 99)")
    g.add_argument("--ncc", action="store_true", default=None, help="use normalized scores")


def _add_eval(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("evaluation")
    g.add_argument("--patch-size", type=int, help="grid patch size in pixels (default 300)")
    g.add_argument("--mode", choices=("all-selected", "top1"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="calcmatch",
        description="Match a specimen calcification cluster to its region in a scene raster.",
        epilog="Parameter precedence: flags > --config file > defaults. "
        "Exit codes: 0 ok, 1 usage/IO error, 2 no cluster, 3 no match.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text,
                           epilog="Parameter precedence: flags > --config file > defaults.")
        _add_global(p, suppress=True)
        return p

    p = add("segment", "Detect bright objects and write a mask plus centroid CSV.")
    p.add_argument("--image", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-points", required=True)
    _add_detect(p)

    p = add("cluster", "Cluster specimen centroids and write the four template variants.")
    p.add_argument("--mask", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out-template-prefix", required=True)
    _add_cluster(p)

    p = add("match", "Correlate templates against the scene mask and select matches.")
    p.add_argument("--scene-mask", required=True)
    p.add_argument("--template-prefix", required=True)
    p.add_argument("--out-scores", help="score map file prefix (optional)")
    p.add_argument("--out-matches", required=True)
    _add_match(p)

    p = add("evaluate", "Score matches on the patch grid against a reference box.")
    p.add_argument("--scene-mask", required=True)
    p.add_argument("--matches", required=True)
    ref = p.add_mutually_exclusive_group(required=True)
    ref.add_argument("--reference-box", help="x0,y0,w,h in scene pixels")
    ref.add_argument("--truth", help="truth.json holding reference_box")
    p.add_argument("--out-report", required=True)
    p.add_argument("--overlay", help="write an RGB (PPM) overlay to this path")
    p.add_argument("--scene-image", help="grayscale base image for the overlay (default: scene mask)")
    _add_eval(p)

    p = add("pipeline", "Run segment, cluster, match and evaluate end to end.")
    p.add_argument("--scene")
    p.add_argument("--specimen")
    p.add_argument("--meta")
    p.add_argument("--reference-box")
    p.add_argument("--truth")
    p.add_argument("--out-dir")
    _add_detect(p)
    _add_cluster(p)
    _add_match(p)
    _add_eval(p)

    p = add("synth", "Generate a synthetic scene/specimen case with ground truth.")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--confuser", action="store_true", help="plant a second identical cluster")
    defaults = SynthParams()
    p.add_argument("--scene-w", type=int, default=defaults.scene_w)
    p.add_argument("--scene-h", type=int, default=defaults.scene_h)
    p.add_argument("--n-background-blobs", type=int, default=defaults.n_background_blobs)
    p.add_argument("--cluster-size", type=int, default=defaults.cluster_size)
    p.add_argument("--cluster-spread", type=float, default=defaults.cluster_spread)
    p.add_argument("--blob-sigma-range", type=float, nargs=2, default=defaults.blob_sigma_range)
    p.add_argument("--blob-amplitude-range", type=float, nargs=2, default=defaults.blob_amplitude_range)
    p.add_argument("--planted-rotation", type=int, choices=ROTATIONS, default=defaults.planted_rotation)
    p.add_argument("--specimen-magnification", type=float, default=defaults.specimen_magnification)
    p.add_argument("--noise-sigma", type=float, default=defaults.noise_sigma)
    p.add_argument("--min-separation", type=float, default=defaults.min_separation)

    p = add("sweep", "Run the pipeline over a grid of synthetic parameters.")
    p.add_argument("--grid", required=True, help="JSON: {field: [values]} or a list of override objects")
    p.add_argument("--out-dir", required=True)
    _add_detect(p)
    _add_cluster(p)
    _add_match(p)
    _add_eval(p)

    p = add("validate-config", "Check a JSON config file against the schema.")
    p.add_argument("path")
    return parser


_CONFIG_FLAGS = (
    "sigma_min", "sigma_max", "scales_per_octave", "dog_threshold", "hessian_ratio_max", "border_margin",
    "eps", "min_pts", "pad", "percentile", "ncc", "patch_size", "mode", "threads",
    "scene", "specimen", "meta", "reference_box", "truth", "out_dir",
)


def _config_from_args(args, check_paths: bool = True) -> PipelineConfig:
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS if getattr(args, k, None) is not None}
    if args.command not in ("pipeline",):
        for key in ("scene", "specimen", "meta", "reference_box", "truth", "out_dir"):
            overrides.pop(key, None)
    return load_config(getattr(args, "config", None), overrides, check_paths=check_paths)


# ---------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------
def run_pipeline(config: PipelineConfig) -> dict[str, Path]:
    """Chain the file-level stages inside ``config.out_dir``; return written paths."""
    missing = [k for k in ("scene", "specimen", "meta", "out_dir") if not getattr(config, k)]
    if missing:
        raise StageError("pipeline", f"missing required setting(s): {', '.join(missing)}",
                         "pass them as flags or in the --config file")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "scene_mask": out / "scene_mask.pgm",
        "scene_points": out / "scene_points.csv",
        "specimen_mask": out / "specimen_mask.pgm",
        "specimen_points": out / "specimen_points.csv",
        "matches": out / "matches.json",
        "report": out / "report.json",
        "overlay": out / "overlay.ppm",
    }
    tpl_prefix = str(out / "tpl_")
    scores_prefix = str(out / "scores_")

    # same detection parameters for both rasters
    stage_segment(config.scene, paths["scene_mask"], paths["scene_points"], config)
    stage_segment(config.specimen, paths["specimen_mask"], paths["specimen_points"], config)
    stage_cluster(paths["specimen_mask"], paths["specimen_points"], config.meta, tpl_prefix, config)
    stage_match(paths["scene_mask"], tpl_prefix, scores_prefix, paths["matches"], config)

    reference = _reference_from(config.reference_box, config.truth)
    if reference is None:
        logger.warning("no reference box given; skipping evaluation")
        paths.pop("report")
        paths.pop("overlay")
    else:
        report = stage_evaluate(paths["scene_mask"], paths["matches"], reference, paths["report"], config,
                                overlay_path=paths["overlay"], scene_image_path=config.scene)
        print(report["table"])
    return paths


def _cmd(args) -> int:
    command = args.command
    if command == "validate-config":
        try:
            violations = validate_config(args.path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        if violations:
            for v in violations:
                print(v)
            return EXIT_USAGE
        print("ok")
        return EXIT_OK

    config = _config_from_args(args)
    if command == "segment":
        stage_segment(args.image, args.out_mask, args.out_points, config)
    elif command == "cluster":
        stage_cluster(args.mask, args.points, args.meta, args.out_template_prefix, config)
    elif command == "match":
        stage_match(args.scene_mask, args.template_prefix, args.out_scores, args.out_matches, config)
    elif command == "evaluate":
        reference = _reference_from(args.reference_box, args.truth)
        report = stage_evaluate(args.scene_mask, args.matches, reference, args.out_report, config,
                                overlay_path=args.overlay, scene_image_path=args.scene_image)
        print(report["table"])
    elif command == "pipeline":
        run_pipeline(config)
    elif command == "synth":
        params = SynthParams(
            scene_w=args.scene_w,
            scene_h=args.scene_h,
            n_background_blobs=args.n_background_blobs,
            cluster_size=args.cluster_size,
            cluster_spread=args.cluster_spread,
            blob_sigma_range=tuple(args.blob_sigma_range),
            blob_amplitude_range=tuple(args.blob_amplitude_range),
            planted_rotation=args.planted_rotation,
            specimen_magnification=args.specimen_magnification,
            noise_sigma=args.noise_sigma,
            seed=args.seed,
            confuser=args.confuser,
            min_separation=args.min_separation,
        )
        paths = write_case(generate_case(params), args.out_dir)
        for name, path in paths.items():
            logger.info("synth: wrote %s -> %s", name, path)
    elif command == "sweep":
        grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        for key in ("blob_sigma_range", "blob_amplitude_range"):
            if isinstance(grid, dict) and key in grid:
                grid[key] = [tuple(v) for v in grid[key]]
        rows = sweep(grid, args.out_dir, config=config)
        print("\t".join(["cell", "status", *METRIC_COLUMNS]))
        for row in rows:
            cells = ["n/a" if row.get(c) is None else f"{row[c]:.2f}" for c in METRIC_COLUMNS]
            print("\t".join([str(row["cell"]), row["status"], *cells]))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _cmd(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_USAGE
    except NoClusterError as exc:
        print(f"error: no cluster found: {exc}", file=sys.stderr)
        return EXIT_NO_CLUSTER
    except EmptyMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_MATCH
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
