"""Grayscale image I/O, normalization, resizing, and dataset manifests.

Images travel through the library as 2-D float64 numpy arrays with values
in [0, 1]. The on-disk interchange format is binary PGM (P5, maxval 255);
datasets are indexed by a small CSV manifest mapping identity ids to image
paths with optional facial landmarks.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DataError

# landmark row indices within a (5, 2) array of (x, y) coordinates
LEFT_EYE, RIGHT_EYE, NOSE_TIP, MOUTH_LEFT, MOUTH_RIGHT = range(5)

STD_FLOOR = 1e-6


def as_image(img, name: str = "image") -> np.ndarray:
    """Validate and return a float64 (H, W) image with pixels in [0, 1].

    Values overshooting the range by tiny floating error are clipped;
    anything further out is rejected.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DataError(f"{name} must be a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError(f"{name} contains non-finite pixels")
    lo = float(a.min())
    hi = float(a.max())
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise DataError(f"{name} pixels outside [0, 1]: range [{lo}, {hi}]")
    return np.clip(a, 0.0, 1.0)


def _read_header_tokens(data: bytes, path: str, count: int) -> Tuple[list, int]:
    """Parse `count` whitespace-separated header tokens, honoring # comments.

    Returns the tokens and the offset one whitespace byte past the last one
    (the PGM raster starts there).
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if i == start:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:i])
    if i >= n or not data[i : i + 1].isspace():
        raise DataError(f"{path}: truncated PGM header")
    return tokens, i + 1


def load_image(path) -> np.ndarray:
    """Read a binary PGM (P5, maxval 255) file as an image in [0, 1]."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None

    tokens, offset = _read_header_tokens(data, path, 4)
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r}, want P5)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1:
        raise DataError(f"{path}: bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval} (only 255)")

    raster = data[offset : offset + width * height]
    if len(raster) < width * height:
        raise DataError(f"{path}: truncated PGM raster")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def save_image(img, path) -> None:
    """Write an image as binary PGM (P5, maxval 255).

    Pixels are mapped by round-half-up of v*255 and clamped to [0, 255],
    so slightly out-of-range values (e.g. raw network outputs) are legal.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DataError(f"image must be a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DataError("image contains non-finite pixels")
    bytes_ = np.clip(np.floor(a * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)
    h, w = a.shape
    try:
        with open(os.fspath(path), "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (w, h))
            f.write(bytes_.tobytes())
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Resize with corner-aligned bilinear interpolation.

    Output pixel (i, j) samples the source at
    (i*(H-1)/(out_h-1), j*(W-1)/(out_w-1)); a size-1 output axis samples
    the source center. Interpolation is convex, so values stay within the
    input's range; the result is clipped to [0, 1].
    """
    a = as_image(img)
    if out_h < 1 or out_w < 1:
        raise DataError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = a.shape
    ys = (np.linspace(0.0, h - 1.0, out_h) if out_h > 1
          else np.array([(h - 1) / 2.0]))
    xs = (np.linspace(0.0, w - 1.0, out_w) if out_w > 1
          else np.array([(w - 1) / 2.0]))

    y0 = np.clip(np.floor(ys).astype(np.intp), 0, h - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]

    top = a[y0[:, None], x0[None, :]] * (1 - fx) + a[y0[:, None], x1[None, :]] * fx
    bot = a[y1[:, None], x0[None, :]] * (1 - fx) + a[y1[:, None], x1[None, :]] * fx
    return np.clip(top * (1 - fy) + bot * fy, 0.0, 1.0)


def normalize(img) -> np.ndarray:
    """Standardize an image, then remap it affinely onto [0, 1].

    Subtracts the mean and divides by the standard deviation (floored at
    STD_FLOOR), then min-max rescales so the darkest pixel is 0 and the
    brightest 1. A constant image maps to all 0.5. Stands in for dataset
    illumination correction.
    """
    a = as_image(img)
    z = (a - a.mean()) / max(float(a.std()), STD_FLOOR)
    lo = float(z.min())
    hi = float(z.max())
    if hi - lo < 1e-12:
        return np.full_like(a, 0.5)
    return (z - lo) / (hi - lo)


@dataclass(frozen=True)
class ManifestEntry:
    identity_id: str
    image_path: str
    landmarks: Optional[np.ndarray] = None  # (5, 2) float64 (x, y) rows


@dataclass(frozen=True)
class Manifest:
    entries: Tuple[ManifestEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    def identities(self) -> list:
        """Distinct identity ids in first-appearance order."""
        seen = {}
        for e in self.entries:
            seen.setdefault(e.identity_id, None)
        return list(seen)


def parse_manifest(path) -> Manifest:
    """Parse a dataset manifest CSV.

    Each row is `identity_id,image_path` optionally followed by 10 numbers:
    five (x, y) landmark coordinates in the order left eye, right eye, nose
    tip, left mouth corner, right mouth corner. Blank lines and lines
    starting with '#' are ignored. Relative image paths are resolved
    against the manifest's directory.
    """
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None

    base = os.path.dirname(path)
    entries = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = [c.strip() for c in line.split(",")]
        if len(cols) not in (2, 12):
            raise DataError(
                f"{path}:{lineno}: expected 2 or 12 columns, got {len(cols)}"
            )
        identity_id, image_path = cols[0], cols[1]
        if not identity_id:
            raise DataError(f"{path}:{lineno}: empty identity_id")
        if not image_path:
            raise DataError(f"{path}:{lineno}: empty image path")
        landmarks = None
        if len(cols) == 12:
            try:
                nums = [float(c) for c in cols[2:]]
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric landmark coordinate"
                ) from None
            if not all(np.isfinite(nums)):
                raise DataError(f"{path}:{lineno}: non-finite landmark coordinate")
            landmarks = np.array(nums, dtype=np.float64).reshape(5, 2)
            if np.any(landmarks < 0.0):
                raise DataError(f"{path}:{lineno}: negative landmark coordinate")
        if base and not os.path.isabs(image_path):
            image_path = os.path.join(base, image_path)
        entries.append(ManifestEntry(identity_id, image_path, landmarks))
    return Manifest(tuple(entries))


def write_csv(path, header, rows) -> None:
    """Write rows with an optional header line; floats render via repr
    (shortest round-trip form), so equal values give identical bytes."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        if header is not None:
            w.writerow(header)
        w.writerows(rows)
