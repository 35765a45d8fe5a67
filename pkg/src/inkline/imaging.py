"""Grayscale raster type and the geometric / intensity primitives.

Intensities live in [0, 1]. Before the pipeline's final inversion ink is dark
(0) on a white (1) background.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageError(Exception):
    pass


class MissingFileError(ImageError, FileNotFoundError):
    pass


class CorruptImageError(ImageError):
    pass


class UnsupportedDepthError(ImageError):
    pass


class DegenerateTransformError(ImageError):
    pass


class EmptyImageError(ImageError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable row-major grayscale image; ``pixels`` has shape (height, width)."""

    pixels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-d pixel array, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("intensities must lie in [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def blank(cls, height: int, width: int, value: float = 1.0) -> "GrayImage":
        return cls(np.full((height, width), value))

    @classmethod
    def from_array(cls, arr, **meta) -> "GrayImage":
        return cls(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0), dict(meta))

    def with_meta(self, **meta) -> "GrayImage":
        return GrayImage(self.pixels, {**self.meta, **meta})

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self):
        return f"GrayImage({self.height}x{self.width})"


@dataclass(frozen=True)
class AffineMatrix:
    """Forward 2x3 map: x' = a11 x + a12 y + a13, y' = a21 x + a22 y + a23."""

    a11: float = 1.0
    a12: float = 0.0
    a13: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    a23: float = 0.0

    @classmethod
    def identity(cls) -> "AffineMatrix":
        return cls()

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineMatrix":
        return cls(1.0, 0.0, dx, 0.0, 1.0, dy)

    @classmethod
    def from_array(cls, m) -> "AffineMatrix":
        m = np.asarray(m, dtype=np.float64).reshape(-1)[:6]
        return cls(*map(float, m))

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12, self.a13], [self.a21, self.a22, self.a23], [0.0, 0.0, 1.0]])

    def then(self, other: "AffineMatrix") -> "AffineMatrix":
        """Apply self first, then other."""
        return AffineMatrix.from_array(other.as_array() @ self.as_array())

    def inverse(self) -> "AffineMatrix":
        det = self.a11 * self.a22 - self.a12 * self.a21
        if abs(det) < 1e-12:
            raise DegenerateTransformError("affine matrix has a singular linear part")
        return AffineMatrix.from_array(np.linalg.inv(self.as_array()))


def load_png(path) -> GrayImage:
    """Read an 8- or 16-bit PNG as a [0, 1] grayscale image.

    Color images are converted by averaging their RGB channels.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("1", "L", "P", "LA", "RGB", "RGBA"):
                if mode in ("P", "LA", "RGBA"):
                    im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64)
                if arr.ndim == 3:
                    arr = arr[..., :3].mean(axis=2)
                scale = 1.0 if mode == "1" else 255.0
            elif mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
                    raise UnsupportedDepthError(f"unsupported sample range in {path}")
                scale = 65535.0
            else:
                raise UnsupportedDepthError(f"unsupported PNG mode {mode!r} in {path}")
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        if isinstance(exc, ImageError):
            raise
        raise CorruptImageError(f"cannot decode {path}: {exc}") from exc
    return GrayImage(np.clip(arr / scale, 0.0, 1.0))


def to_bytes(img: GrayImage) -> np.ndarray:
    return np.round(img.pixels * 255.0).astype(np.uint8)


def save_png(img: GrayImage, path) -> None:
    path = os.fspath(path)
    try:
        Image.fromarray(to_bytes(img), mode="L").save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def invert(img: GrayImage) -> GrayImage:
    return GrayImage(1.0 - img.pixels, dict(img.meta))


def bilinear_sample(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float) -> np.ndarray:
    """Sample ``pixels`` at float coordinates; anything outside the raster reads as ``fill``."""
    h, w = pixels.shape
    padded = np.full((h + 2, w + 2), fill, dtype=np.float64)
    padded[1:-1, 1:-1] = pixels
    px = xs + 1.0
    py = ys + 1.0
    outside = (px < 0) | (py < 0) | (px > w + 1) | (py > h + 1) | ~np.isfinite(px) | ~np.isfinite(py)
    px = np.clip(np.nan_to_num(px), 0, w + 1)
    py = np.clip(np.nan_to_num(py), 0, h + 1)
    x0 = np.minimum(np.floor(px).astype(np.intp), w)
    y0 = np.minimum(np.floor(py).astype(np.intp), h)
    fx = px - x0
    fy = py - y0
    # a + (b - a) f keeps constant regions exactly constant
    p00, p01 = padded[y0, x0], padded[y0, x0 + 1]
    p10, p11 = padded[y0 + 1, x0], padded[y0 + 1, x0 + 1]
    top = p00 + (p01 - p00) * fx
    bot = p10 + (p11 - p10) * fx
    out = top + (bot - top) * fy
    out[outside] = fill
    return out


def affine_warp(img: GrayImage, m: AffineMatrix, out_w: int | None = None, out_h: int | None = None,
                fill: float = 1.0) -> GrayImage:
    out_w = img.width if out_w is None else int(out_w)
    out_h = img.height if out_h is None else int(out_h)
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    inv = m.inverse()
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    sx = inv.a11 * xs + inv.a12 * ys + inv.a13
    sy = inv.a21 * xs + inv.a22 * ys + inv.a23
    out = bilinear_sample(img.pixels, sx, sy, fill)
    return GrayImage(np.clip(out, 0.0, 1.0), dict(img.meta))


def resize(img: GrayImage, target_h: int, target_w: int | None = None) -> GrayImage:
    """Bilinear resize with pixel-centre alignment; ``target_w=None`` keeps the aspect ratio."""
    if img.height == 0 or img.width == 0:
        raise EmptyImageError("cannot resize a zero-area image")
    if target_h < 1:
        raise ValueError("target height must be >= 1")
    if target_w is None:
        target_w = max(1, int(round(img.width * target_h / img.height)))
    if (target_h, target_w) == img.pixels.shape:
        return GrayImage(img.pixels, dict(img.meta))
    h, w = img.pixels.shape
    sy = np.clip((np.arange(target_h) + 0.5) * (h / target_h) - 0.5, 0, h - 1)
    sx = np.clip((np.arange(target_w) + 0.5) * (w / target_w) - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    p = img.pixels
    top = p[y0][:, x0] + (p[y0][:, x1] - p[y0][:, x0]) * fx
    bot = p[y1][:, x0] + (p[y1][:, x1] - p[y1][:, x0]) * fx
    out = top + (bot - top) * fy
    return GrayImage(np.clip(out, 0.0, 1.0), dict(img.meta))


def ink_mask(img: GrayImage, fg_threshold: float = 0.5) -> np.ndarray:
    return img.pixels < fg_threshold


def column_extrema(img: GrayImage, fg_threshold: float = 0.5, which: str = "bottom") -> list[tuple[int, int]]:
    """Lowest (``bottom``) or highest (``top``) ink row of every non-empty column."""
    if not 0.0 < fg_threshold < 1.0:
        raise ValueError("fg_threshold must lie in (0, 1)")
    if which not in ("bottom", "top"):
        raise ValueError("which must be 'bottom' or 'top'")
    mask = ink_mask(img, fg_threshold)
    cols = np.flatnonzero(mask.any(axis=0))
    if which == "top":
        rows = mask.argmax(axis=0)
    else:
        rows = img.height - 1 - mask[::-1].argmax(axis=0)
    return [(int(x), int(rows[x])) for x in cols]
