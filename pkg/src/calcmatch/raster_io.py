"""
Raster and sidecar file I/O.

Grayscale images and binary masks live on disk as binary PGM (P5).  In
memory a grayscale image is a 2D ``float64`` array with values in [0, 1]
(row-major, ``image[y, x]``) and a mask is a 2D ``bool`` array.  Point sets
are ``(n, 2)`` float arrays of ``(x, y)`` pairs, origin top-left.

Score maps use a tiny custom container: an ASCII header line
``SCOREMAP v1 <width> <height>`` followed by little-endian float32 values.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "RasterFormatError",
    "CaseMeta",
    "load_gray_image",
    "save_gray_image",
    "load_mask",
    "save_mask",
    "load_points",
    "save_points",
    "load_case_meta",
    "save_case_meta",
    "load_scoremap_array",
    "save_scoremap_array",
    "render_overlay",
    "ROLE_COLORS",
]

PathLike = Union[str, os.PathLike]


class RasterFormatError(ValueError):
    """Raised for malformed or unsupported raster / sidecar content."""


@dataclass(frozen=True)
class CaseMeta:
    """Per-case acquisition metadata (stand-in for the DICOM header)."""

    case_id: str
    magnification_factor_specimen: float
    magnification_factor_scene: float = 1.0

    def __post_init__(self):
        for name in ("magnification_factor_specimen", "magnification_factor_scene"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")


# ---------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------
def _parse_header(data: bytes, path: PathLike) -> tuple[bytes, int, int, int, int]:
    """Return (magic, width, height, maxval, offset of pixel data)."""
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise RasterFormatError(f"{path}: truncated header")
        tokens.append(data[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise RasterFormatError(f"{path}: bad header field") from exc
    # exactly one whitespace byte separates maxval from the pixel data
    return tokens[0], width, height, maxval, pos + 1


def _read_netpbm(path: PathLike) -> tuple[np.ndarray, int]:
    """Return (raw integer array, maxval) from a P5 file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such raster: {path}")
    data = path.read_bytes()
    magic, width, height, maxval, pos = _parse_header(data, path)
    if magic == b"P6":
        raise RasterFormatError(f"{path}: multi-channel (P6) input is not supported")
    if magic != b"P5":
        raise RasterFormatError(f"{path}: expected binary PGM (P5), got {magic!r}")
    if width <= 0 or height <= 0:
        raise RasterFormatError(f"{path}: zero-sized raster ({width}x{height})")
    if maxval not in (255, 65535):
        raise RasterFormatError(f"{path}: unsupported maxval {maxval} (need 255 or 65535)")

    dtype = np.dtype(np.uint8) if maxval == 255 else np.dtype(">u2")
    count = width * height
    expected = count * dtype.itemsize
    if len(data) - pos < expected:
        raise RasterFormatError(f"{path}: truncated pixel data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return raw.reshape(height, width).astype(np.uint16 if maxval == 65535 else np.uint8), maxval


def _read_png(path: PathLike) -> tuple[np.ndarray, int]:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RasterFormatError("PNG input needs Pillow (pip install calcmatch[png])") from exc
    with Image.open(path) as im:
        if im.mode not in ("L", "I;16", "I;16B", "I"):
            raise RasterFormatError(f"{path}: multi-channel or unsupported PNG mode {im.mode}")
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise RasterFormatError(f"{path}: multi-channel input")
    if arr.size == 0:
        raise RasterFormatError(f"{path}: zero-sized raster")
    if arr.dtype == np.uint8:
        return arr, 255
    return arr.astype(np.uint16), 65535


def _read_raster(path: PathLike) -> tuple[np.ndarray, int]:
    if str(path).lower().endswith(".png"):
        if not Path(path).is_file():
            raise FileNotFoundError(f"no such raster: {path}")
        return _read_png(path)
    return _read_netpbm(path)


def _write_pgm(raw: np.ndarray, maxval: int, path: PathLike) -> None:
    height, width = raw.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    if maxval == 255:
        body = np.ascontiguousarray(raw, dtype=np.uint8).tobytes()
    else:
        body = np.ascontiguousarray(raw, dtype=">u2").tobytes()
    Path(path).write_bytes(header + body)


def load_gray_image(path: PathLike) -> np.ndarray:
    """Load a single-channel raster as float64 intensities in [0, 1].

    Values are divided by the file's maximum code value (255 or 65535).
    """
    raw, maxval = _read_raster(path)
    return raw.astype(np.float64) / maxval


def save_gray_image(image: np.ndarray, path: PathLike, bit_depth: int = 16) -> None:
    """Quantize ``image`` (values in [0, 1]) to 8 or 16 bits and write PGM."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError("image must be a non-empty 2D array")
    if not np.all(np.isfinite(image)) or image.min() < 0 or image.max() > 1:
        raise ValueError("image intensities must be finite and within [0, 1]")
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    maxval = 255 if bit_depth == 8 else 65535
    raw = np.rint(image * maxval)
    _write_pgm(raw, maxval, path)


def load_mask(path: PathLike) -> np.ndarray:
    """Load a binary mask; any value other than 0 or maxval is an error."""
    raw, maxval = _read_raster(path)
    bad = (raw != 0) & (raw != maxval)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise RasterFormatError(
            f"{path}: mask holds intermediate value {int(raw[y, x])} at (x={x}, y={y}); "
            f"only 0 and {maxval} are allowed"
        )
    return raw == maxval


def save_mask(mask: np.ndarray, path: PathLike) -> None:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError("mask must be a non-empty 2D array")
    _write_pgm(mask.astype(np.uint8) * 255, 255, path)


# ---------------------------------------------------------------------
# Points
# ---------------------------------------------------------------------
def load_points(path: PathLike) -> np.ndarray:
    """Read ``x,y`` records into an ``(n, 2)`` float array, file order kept.

    A leading ``x,y`` header line is optional.  Coordinates may be
    fractional; negative or non-numeric values raise ``ValueError`` naming
    the offending line.
    """
    points: list[tuple[float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and [c.strip().lower() for c in row] == ["x", "y"]:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ValueError(f"{path}:{lineno}: non-finite coordinate")
            if x < 0 or y < 0:
                raise ValueError(f"{path}:{lineno}: negative coordinate ({x}, {y})")
            points.append((x, y))
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def save_points(points: np.ndarray, path: PathLike) -> None:
    # repr() round-trips floats exactly
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    buf = io.StringIO()
    buf.write("x,y\n")
    for x, y in points:
        buf.write(f"{float(x)!r},{float(y)!r}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------
# Case metadata
# ---------------------------------------------------------------------
def load_case_meta(path: PathLike) -> CaseMeta:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict):
        raise RasterFormatError(f"{path}: case metadata must be a JSON object")
    unknown = set(payload) - {"case_id", "magnification_factor_specimen", "magnification_factor_scene"}
    if unknown:
        raise RasterFormatError(f"{path}: unknown field(s) {sorted(unknown)}")
    if "magnification_factor_specimen" not in payload:
        raise RasterFormatError(f"{path}: missing magnification_factor_specimen")
    return CaseMeta(
        case_id=str(payload.get("case_id", "")),
        magnification_factor_specimen=payload["magnification_factor_specimen"],
        magnification_factor_scene=payload.get("magnification_factor_scene", 1.0),
    )


def save_case_meta(meta: CaseMeta, path: PathLike) -> None:
    Path(path).write_text(json.dumps(asdict(meta), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------
# Score maps
# ---------------------------------------------------------------------
_SCOREMAP_MAGIC = "SCOREMAP v1"


def save_scoremap_array(scores: np.ndarray, path: PathLike) -> None:
    scores = np.asarray(scores)
    height, width = scores.shape
    header = f"{_SCOREMAP_MAGIC} {width} {height}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(scores, dtype="<f4").tobytes())


def load_scoremap_array(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise RasterFormatError(f"{path}: missing score map header")
    parts = data[:newline].decode("ascii", errors="replace").split()
    if len(parts) != 4 or " ".join(parts[:2]) != _SCOREMAP_MAGIC:
        raise RasterFormatError(f"{path}: bad score map header")
    width, height = int(parts[2]), int(parts[3])
    body = data[newline + 1 :]
    if len(body) != 4 * width * height:
        raise RasterFormatError(f"{path}: expected {4 * width * height} data bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(height, width).astype(np.float32)


# ---------------------------------------------------------------------
# Overlay
# ---------------------------------------------------------------------
ROLE_COLORS: dict[str, tuple[int, int, int]] = {
    "patch": (255, 255, 0),
    "reference": (0, 255, 0),
    "predicted": (255, 0, 0),
}
# later roles are painted over earlier ones
_ROLE_ORDER = ("patch", "reference", "predicted")


def render_overlay(
    image: np.ndarray,
    boxes: Iterable[tuple[Sequence[int], str]],
    out_path: PathLike,
) -> np.ndarray:
    """Draw 1-px box outlines over a grayscale image and write a P6 PPM.

    ``boxes`` holds ``((x0, y0, w, h), role)`` pairs, role one of
    ``"patch"``, ``"reference"``, ``"predicted"``.  Predicted boxes are drawn
    last so they stay visible where outlines overlap.  Returns the RGB array
    that was written; ``image`` itself is not modified.
    """
    image = np.asarray(image, dtype=np.float64)
    height, width = image.shape
    gray = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)

    boxes = list(boxes)
    for rect, role in boxes:
        if role not in ROLE_COLORS:
            raise ValueError(f"unknown box role {role!r}")
        x0, y0, w, h = (int(v) for v in rect)
        if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > width or y0 + h > height:
            raise ValueError(f"box {(x0, y0, w, h)} outside {width}x{height} image")

    for role in _ROLE_ORDER:
        color = ROLE_COLORS[role]
        for rect, box_role in boxes:
            if box_role != role:
                continue
            x0, y0, w, h = (int(v) for v in rect)
            x1, y1 = x0 + w - 1, y0 + h - 1
            rgb[y0, x0 : x1 + 1] = color
            rgb[y1, x0 : x1 + 1] = color
            rgb[y0 : y1 + 1, x0] = color
            rgb[y0 : y1 + 1, x1] = color

    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    Path(out_path).write_bytes(header + rgb.tobytes())
    return rgb


def load_ppm(path: PathLike) -> np.ndarray:
    """Read a P6 PPM written by :func:`render_overlay` (test/inspection helper)."""
    data = Path(path).read_bytes()
    magic, width, height, _, pos = _parse_header(data, path)
    if magic != b"P6":
        raise RasterFormatError(f"{path}: not a P6 PPM")
    return np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos).reshape(height, width, 3)
