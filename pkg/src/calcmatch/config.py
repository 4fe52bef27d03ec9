"""
Pipeline configuration: one flat JSON object with a strict schema.

Precedence when the CLI builds a config is flags > config file > defaults.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from .cluster import Rect
from .detect import DetectParams

__all__ = ["PipelineConfig", "ConfigError", "validate_config", "validate_values", "load_config", "parse_rect"]


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class PipelineConfig:
    # inputs / outputs
    scene: str | None = None
    specimen: str | None = None
    meta: str | None = None
    reference_box: str | None = None
    truth: str | None = None
    out_dir: str | None = None
    # detection
    sigma_min: float = 1.0
    sigma_max: float = 4.0
    scales_per_octave: int = 3
    dog_threshold: float = 0.01
    hessian_ratio_max: float = 5.0
    border_margin: int = 4
    # clustering / template
    eps: float = 40.0
    min_pts: int = 3
    pad: int = 2
    # matching
    percentile: float = 99.0
    ncc: bool = False
    # evaluation
    patch_size: int = 300
    mode: str = "all-selected"
    # execution
    threads: int = 0

    @property
    def detect_params(self) -> DetectParams:
        return DetectParams(
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
            scales_per_octave=self.scales_per_octave,
            dog_threshold=self.dog_threshold,
            hessian_ratio_max=self.hessian_ratio_max,
            border_margin=self.border_margin,
        )

    @property
    def workers(self) -> int | None:
        return None if self.threads == 0 else self.threads

    def updated(self, **overrides: Any) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_PATH_FIELDS = ("scene", "specimen", "meta", "truth")
_TYPES: dict[str, tuple[type, ...]] = {
    "scene": (str,),
    "specimen": (str,),
    "meta": (str,),
    "reference_box": (str, list),
    "truth": (str,),
    "out_dir": (str,),
    "sigma_min": (int, float),
    "sigma_max": (int, float),
    "scales_per_octave": (int,),
    "dog_threshold": (int, float),
    "hessian_ratio_max": (int, float),
    "border_margin": (int,),
    "eps": (int, float),
    "min_pts": (int,),
    "pad": (int,),
    "percentile": (int, float),
    "ncc": (bool,),
    "patch_size": (int,),
    "mode": (str,),
    "threads": (int,),
}

# (field, predicate, bound text)
_BOUNDS = [
    ("sigma_min", lambda v: v > 0, "> 0"),
    ("sigma_max", lambda v: v > 0, "> 0"),
    ("scales_per_octave", lambda v: v >= 1, ">= 1"),
    ("dog_threshold", lambda v: v > 0, "> 0"),
    ("hessian_ratio_max", lambda v: v >= 1, ">= 1"),
    ("border_margin", lambda v: v >= 0, ">= 0"),
    ("eps", lambda v: v > 0, "> 0"),
    ("min_pts", lambda v: v >= 1, ">= 1"),
    ("pad", lambda v: v >= 0, ">= 0"),
    ("percentile", lambda v: 0 < v < 100, "in (0, 100)"),
    ("patch_size", lambda v: v >= 1, ">= 1"),
    ("threads", lambda v: v >= 0, ">= 0"),
]


def parse_rect(value: str | list | tuple) -> Rect:
    """Parse ``"x0,y0,w,h"`` (or a 4-item sequence) into a :class:`Rect`."""
    parts = value.split(",") if isinstance(value, str) else list(value)
    if len(parts) != 4:
        raise ValueError(f"expected x0,y0,w,h, got {value!r}")
    x0, y0, w, h = (int(p) for p in parts)
    if x0 < 0 or y0 < 0 or w < 1 or h < 1:
        raise ValueError(f"rectangle {value!r} needs x0, y0 >= 0 and w, h >= 1")
    return Rect(x0, y0, w, h)


def validate_values(payload: dict, check_paths: bool = True) -> list[str]:
    """Return every schema violation in ``payload``; empty means valid."""
    violations = []
    for key in payload:
        if key not in _TYPES:
            violations.append(f"{key}: unknown field")
    for key, value in payload.items():
        if key not in _TYPES or value is None:
            continue
        allowed = _TYPES[key]
        is_bool = isinstance(value, bool)
        if (is_bool and bool not in allowed) or not isinstance(value, allowed):
            names = " or ".join(t.__name__ for t in allowed)
            violations.append(f"{key}: must be {names}, got {type(value).__name__}")
            continue
        if isinstance(value, float) and not math.isfinite(value):
            violations.append(f"{key}: must be finite")
    bad_type = {v.split(":")[0] for v in violations}
    for key, ok, bound in _BOUNDS:
        if key in payload and payload[key] is not None and key not in bad_type and not ok(payload[key]):
            violations.append(f"{key}: must be {bound}, got {payload[key]!r}")

    merged = {**PipelineConfig().to_dict(), **{k: v for k, v in payload.items() if k in _TYPES}}
    if not {"sigma_min", "sigma_max"} & bad_type and merged["sigma_max"] <= merged["sigma_min"]:
        violations.append(f"sigma_max: must be > sigma_min ({merged['sigma_min']}), got {merged['sigma_max']}")
    if "mode" not in bad_type and merged["mode"] not in ("all-selected", "top1"):
        violations.append(f"mode: must be one of all-selected, top1, got {merged['mode']!r}")
    if merged.get("reference_box") is not None and "reference_box" not in bad_type:
        try:
            parse_rect(merged["reference_box"])
        except (TypeError, ValueError) as exc:
            violations.append(f"reference_box: {exc}")
    if check_paths:
        for key in _PATH_FIELDS:
            value = payload.get(key)
            if isinstance(value, str) and not Path(value).exists():
                violations.append(f"{key}: input path does not exist: {value}")
    return violations


def validate_config(path: str | Path) -> list[str]:
    """Validate a JSON config file without side effects.

    Raises ``ValueError`` when the file is not parseable JSON; otherwise
    returns the (possibly empty) list of violations.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        return ["<root>: must be a JSON object"]
    return validate_values(payload)


def load_config(path: str | Path | None, overrides: dict | None = None, check_paths: bool = True) -> PipelineConfig:
    payload: dict = {}
    if path is not None:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise ConfigError(["<root>: must be a JSON object"])
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    merged = {**payload, **overrides}
    violations = validate_values(merged, check_paths=check_paths)
    if violations:
        raise ConfigError(violations)
    if isinstance(merged.get("reference_box"), list):
        merged["reference_box"] = ",".join(str(v) for v in merged["reference_box"])
    return PipelineConfig(**merged)
