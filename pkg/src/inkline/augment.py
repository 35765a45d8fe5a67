"""Train-time augmentation chain, applied with fresh randomness every epoch."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import AffineMatrix, GrayImage, affine_warp, bilinear_sample
from .normalize import slant_matrix

TRANSFORMS = ("translate", "resize", "slant", "elastic", "projective", "morph")


@dataclass(frozen=True)
class AugmentConfig:
    p_translate: float = 0.5
    p_resize: float = 0.4
    p_slant: float = 0.4
    p_elastic: float = 0.3
    p_projective: float = 0.2
    p_morph: float = 0.1
    translate_px: float = 3.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    slant_range: tuple[float, float] = (-0.15, 0.15)
    elastic_spacing: int = 8
    elastic_sigma: float = 1.5
    projective_jitter: float = 2.0
    morph_kernel: int = 3
    rng_seed: int = 0
    fill: float = 1.0

    def __post_init__(self):
        for name in TRANSFORMS:
            p = getattr(self, f"p_{name}")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_{name} must lie in [0, 1]")
        values = [self.translate_px, *self.scale_range, *self.slant_range, self.elastic_sigma,
                  self.projective_jitter]
        if not all(np.isfinite(values)):
            raise ValueError("augmentation magnitudes must be finite")
        if self.elastic_spacing < 4:
            raise ValueError("elastic_spacing must be >= 4")
        if self.morph_kernel < 3 or self.morph_kernel % 2 == 0:
            raise ValueError("morph_kernel must be odd and >= 3")

    @classmethod
    def disabled(cls, **kw) -> "AugmentConfig":
        return cls(**{**{f"p_{t}": 0.0 for t in TRANSFORMS}, **kw})


def elastic_distort(img: GrayImage, spacing: int, sigma: float, rng: np.random.Generator,
                    fill: float = 1.0) -> GrayImage:
    """Jitter a grid of control points by N(0, sigma) and resample against the warped grid."""
    if spacing < 4:
        raise ValueError("spacing must be >= 4")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    h, w = img.height, img.width
    gh = int(np.ceil((h - 1) / spacing)) + 1
    gw = int(np.ceil((w - 1) / spacing)) + 1
    if sigma == 0:
        return GrayImage(img.pixels, dict(img.meta))
    dx = rng.normal(0.0, sigma, size=(gh, gw))
    dy = rng.normal(0.0, sigma, size=(gh, gw))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    gy, gx = ys / spacing, xs / spacing
    field_x = bilinear_sample(dx, gx, gy, 0.0)
    field_y = bilinear_sample(dy, gx, gy, 0.0)
    out = bilinear_sample(img.pixels, xs + field_x, ys + field_y, fill)
    return GrayImage(np.clip(out, 0.0, 1.0), dict(img.meta))


def solve_homography(src, dst) -> np.ndarray:
    """3x3 H with H @ (x, y, 1) ~ (x', y', 1) from four correspondences (h33 = 1)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i], b[2 * i + 1] = u, v
    h = np.linalg.solve(a, b)
    return np.append(h, 1.0).reshape(3, 3)


def _corners(img: GrayImage) -> np.ndarray:
    w, h = img.width - 1, img.height - 1
    return np.array([[0, 0], [w, 0], [w, h], [0, h]], dtype=np.float64)


def _collinear(pts: np.ndarray) -> bool:
    for i in range(4):
        a, b, c = pts[i], pts[(i + 1) % 4], pts[(i + 2) % 4]
        if abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) < 1e-6:
            return True
    return False


def warp_homography(img: GrayImage, hmat: np.ndarray, fill: float = 1.0) -> GrayImage:
    inv = np.linalg.inv(hmat)
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    den = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / den
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / den
    out = bilinear_sample(img.pixels, sx, sy, fill)
    return GrayImage(np.clip(out, 0.0, 1.0), dict(img.meta))


def projective_warp(img: GrayImage, jitter: float, rng: np.random.Generator, fill: float = 1.0,
                    max_draws: int = 100) -> GrayImage:
    if jitter < 0 or jitter >= min(img.width, img.height) / 4:
        raise ValueError("jitter must lie in [0, min(w, h)/4)")
    if jitter == 0:
        return GrayImage(img.pixels, dict(img.meta))
    src = _corners(img)
    for _ in range(max_draws):
        dst = src + rng.uniform(-jitter, jitter, size=(4, 2))
        if _collinear(dst):
            continue
        try:
            hmat = solve_homography(src, dst)
        except np.linalg.LinAlgError:
            continue
        return warp_homography(img, hmat, fill)
    return GrayImage(img.pixels, dict(img.meta))


def morph(img: GrayImage, mode: str, kernel: int = 3) -> GrayImage:
    """Grow (``dilate``) or thin (``erode``) dark ink strokes.

    With dark ink, growing the ink is a grey-level minimum filter and thinning
    it a maximum filter.
    """
    if kernel < 3 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 3")
    if mode == "dilate":
        out = ndimage.minimum_filter(img.pixels, size=kernel, mode="constant", cval=1.0)
    elif mode == "erode":
        out = ndimage.maximum_filter(img.pixels, size=kernel, mode="constant", cval=1.0)
    else:
        raise ValueError("mode must be 'erode' or 'dilate'")
    return GrayImage(out, dict(img.meta))


def _about_center(img: GrayImage, m: AffineMatrix) -> AffineMatrix:
    cx, cy = (img.width - 1) / 2.0, (img.height - 1) / 2.0
    return AffineMatrix.translation(-cx, -cy).then(m).then(AffineMatrix.translation(cx, cy))


def augment(img: GrayImage, cfg: AugmentConfig, rng: np.random.Generator,
            record: list | None = None) -> GrayImage:
    """Translate, resize, slant, elastic, projective, erode/dilate; each with its own probability.

    Names of the transforms actually applied are appended to ``record``.
    The output keeps the input dimensions.
    """
    out = img
    fill = cfg.fill
    # one uniform draw per stage keeps the random stream aligned across configs
    draws = rng.random(len(TRANSFORMS))
    applied = [name for name, u in zip(TRANSFORMS, draws) if u < getattr(cfg, f"p_{name}")]
    for name in applied:
        if name == "translate":
            dx, dy = rng.uniform(-cfg.translate_px, cfg.translate_px, size=2)
            out = affine_warp(out, AffineMatrix.translation(dx, dy), fill=fill)
        elif name == "resize":
            s = rng.uniform(*cfg.scale_range)
            out = affine_warp(out, _about_center(out, AffineMatrix(s, 0, 0, 0, s, 0)), fill=fill)
        elif name == "slant":
            alpha = rng.uniform(*cfg.slant_range)
            out = affine_warp(out, slant_matrix(alpha, out.width, out.height), fill=fill)
        elif name == "elastic":
            out = elastic_distort(out, cfg.elastic_spacing, cfg.elastic_sigma, rng, fill)
        elif name == "projective":
            jitter = min(cfg.projective_jitter, min(out.width, out.height) / 4 - 1e-6)
            out = projective_warp(out, jitter, rng, fill)
        elif name == "morph":
            mode = "erode" if rng.random() < 0.5 else "dilate"
            out = morph(out, mode, cfg.morph_kernel)
        if record is not None:
            record.append(name)
    if not applied:
        return GrayImage(img.pixels, dict(img.meta))
    return out


def sample_seed(base: int, epoch: int, index: int) -> np.random.Generator:
    """Per-sample generator so augmentation does not depend on batch order or lane count."""
    return np.random.default_rng([int(base), int(epoch), int(index)])
