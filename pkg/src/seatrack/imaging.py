"""Grayscale image loading, fixed-resolution patch extraction, and affine warps.

Images and patches are float64 numpy arrays of shape (height, width) with
intensities in [0, 1]. Pixel (r, c) covers the unit square whose center is the
continuous point (c + 0.5, r + 0.5); all resampling uses that convention with
zero fill outside the source bounds.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, FormatError, atomic_write_bytes

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class AffineParams:
    """Shear factors plus a rotation angle (radians), applied about the patch center."""

    shear_x: float = 0.0
    shear_y: float = 0.0
    rotation: float = 0.0

    def __post_init__(self):
        for name in ("shear_x", "shear_y", "rotation"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"affine parameter {name!r} is not finite")

    def is_identity(self) -> bool:
        return self.shear_x == 0.0 and self.shear_y == 0.0 and self.rotation == 0.0

    def matrix(self) -> np.ndarray:
        """Forward 2x2 map: shear first, then rotation."""
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        shear = np.array([[1.0, self.shear_x], [self.shear_y, 1.0]])
        return rot @ shear


def _read_pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Parse `count` whitespace-separated header integers, honoring # comments."""
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise FormatError("PGM header truncated")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tok = data[i:j]
            if not tok.isdigit():
                raise FormatError(f"PGM header: expected integer, got {tok!r}")
            tokens.append(int(tok))
            i = j
    return tokens, i


def _load_pgm(data: bytes, path: str) -> np.ndarray:
    (width, height, maxval), end = _read_pgm_tokens(data[2:], 3)
    end += 2
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM supported, maxval={maxval}")
    # exactly one whitespace byte separates the header from the raster
    raster = data[end + 1 :]
    expected = width * height
    if len(raster) < expected:
        raise FormatError(f"{path}: PGM raster truncated ({len(raster)} < {expected} bytes)")
    arr = np.frombuffer(raster[:expected], dtype=np.uint8).reshape(height, width)
    return arr.astype(np.float64) / 255.0


def load_image(path: str) -> np.ndarray:
    """Load an 8-bit grayscale PGM (P5) or PNG as a float64 array in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"P5":
        return _load_pgm(data, path)
    if data[: len(_PNG_MAGIC)] == _PNG_MAGIC:
        from PIL import Image

        with Image.open(io.BytesIO(data)) as im:
            gray = im.convert("L")
            return np.asarray(gray, dtype=np.float64) / 255.0
    raise FormatError(f"{path}: unsupported image format (need binary PGM or PNG)")


def image_size(path: str) -> tuple[int, int]:
    """Return (width, height) without decoding the full raster."""
    with open(path, "rb") as f:
        head = f.read(4096)
    if head[:2] == b"P5":
        (width, height, _), _ = _read_pgm_tokens(head[2:], 3)
        return width, height
    if head[: len(_PNG_MAGIC)] == _PNG_MAGIC:
        from PIL import Image

        with Image.open(path) as im:
            return im.size
    raise FormatError(f"{path}: unsupported image format (need binary PGM or PNG)")


def write_pgm(path: str, image: np.ndarray) -> None:
    """Write a [0,1] float image as binary 8-bit PGM (atomic)."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + arr.tobytes())


def to_png_bytes(image: np.ndarray) -> bytes:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _sample_bilinear(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples at continuous points (x, y); zero outside the image."""
    h, w = image.shape
    u = x - 0.5
    v = y - 0.5
    c0 = np.floor(u).astype(np.int64)
    r0 = np.floor(v).astype(np.int64)
    fx = u - c0
    fy = v - r0
    out = np.zeros(x.shape, dtype=np.float64)
    corners = (
        (r0, c0, (1 - fy) * (1 - fx)),
        (r0, c0 + 1, (1 - fy) * fx),
        (r0 + 1, c0, fy * (1 - fx)),
        (r0 + 1, c0 + 1, fy * fx),
    )
    for r, c, weight in corners:
        inside = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        vals = image[np.clip(r, 0, h - 1), np.clip(c, 0, w - 1)]
        out += weight * np.where(inside, vals, 0.0)
    return out


def extract_patch(image: np.ndarray, box: BoundingBox, resolution: int) -> np.ndarray:
    """Resample the box region of an image to a square patch.

    The sample point for output cell (i, j) is the box-relative coordinate
    ((j + 0.5) / P, (i + 0.5) / P) mapped into image space, so a box exactly
    aligned to a P x P pixel block reproduces those pixels verbatim.
    """
    if resolution < 2:
        raise ValueError(f"patch resolution must be >= 2, got {resolution}")
    h, w = image.shape
    if box.x >= w or box.y >= h or box.x + box.w <= 0 or box.y + box.h <= 0:
        raise ValueError(f"box {box.as_tuple()} lies entirely outside the {w}x{h} image")
    rel = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution
    xs = box.x + rel * box.w
    ys = box.y + rel * box.h
    gx, gy = np.meshgrid(xs, ys)
    return _sample_bilinear(image, gx, gy)


def apply_affine(patch: np.ndarray, params: AffineParams) -> np.ndarray:
    """Warp a square patch about its center (inverse mapping, bilinear, zero fill).

    Identity parameters return a bit-identical copy.
    """
    p = patch.shape[0]
    if patch.shape != (p, p):
        raise ValueError(f"patch must be square, got shape {patch.shape}")
    if params.is_identity():
        return patch.copy()
    center = p / 2.0
    inv = np.linalg.inv(params.matrix())
    grid = np.arange(p, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(grid - center, grid - center)
    src_x = inv[0, 0] * gx + inv[0, 1] * gy + center
    src_y = inv[1, 0] * gx + inv[1, 1] * gy + center
    return _sample_bilinear(patch, src_x, src_y)
