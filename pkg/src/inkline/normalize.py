"""Word-image normalization: contrast, slope, slant, zone heights, crop/resize."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize

from .imaging import AffineMatrix, GrayImage, affine_warp, column_extrema, invert, resize


@dataclass(frozen=True)
class NormalizeConfig:
    target_height: int = 48
    target_width: int = 192
    pad_side: str = "left"
    contrast_window: int = 15
    contrast_k: float = 0.2
    contrast_range: float = 0.5
    contrast_ramp: float = 0.25
    ransac_iterations: int = 200
    ransac_tolerance: float = 2.0
    fg_threshold: float = 0.5
    slant_prune: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.target_height < 8 or self.target_width < 8:
            raise ValueError("target dimensions must be >= 8")
        if not 0.0 < self.contrast_k < 1.0:
            raise ValueError("contrast_k must lie in (0, 1)")
        if self.ransac_iterations < 1:
            raise ValueError("ransac_iterations must be >= 1")
        if self.pad_side not in ("left", "right"):
            raise ValueError("pad_side must be 'left' or 'right'")
        if not 0.0 < self.fg_threshold < 1.0:
            raise ValueError("fg_threshold must lie in (0, 1)")
        if self.slant_prune < 0:
            raise ValueError("slant_prune must be >= 0")
        if self.contrast_window < 3 or self.contrast_window % 2 == 0:
            raise ValueError("contrast_window must be odd and >= 3")


@dataclass(frozen=True)
class ZoneLines:
    baseline_y: int
    upperline_y: int

    @property
    def core_height(self) -> int:
        return self.baseline_y - self.upperline_y


@dataclass(frozen=True)
class SlantEstimate:
    alpha: float
    evidence_left: int
    evidence_center: int
    evidence_right: int


def enhance_contrast(img: GrayImage, cfg: NormalizeConfig = NormalizeConfig()) -> GrayImage:
    """Sauvola-style local threshold turned into a linear gray ramp.

    t = m (1 + k (s/R - 1)); pixels are mapped linearly from t - c*s (ink, 0)
    to t + c*s (background, 1) where c is ``contrast_ramp``.
    """
    win = cfg.contrast_window
    p = img.pixels
    mean = ndimage.uniform_filter(p, size=win, mode="reflect")
    sq = ndimage.uniform_filter(p * p, size=win, mode="reflect")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    t = mean * (1.0 + cfg.contrast_k * (std / cfg.contrast_range - 1.0))
    half = cfg.contrast_ramp * std
    flat = half < 1e-9
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(flat, 1.0, (p - (t - half)) / np.where(flat, 1.0, 2.0 * half))
    out = np.clip(out, 0.0, 1.0)
    # flat windows are background; a flat window of solid ink stays ink
    out[flat & (p < 0.5 * cfg.fg_threshold)] = 0.0
    return GrayImage(out, dict(img.meta))


def ransac_line(points, iterations: int, tolerance: float, rng: np.random.Generator,
                horizontal: bool = False) -> tuple[float, float, np.ndarray]:
    """Robust fit of y = a x + b (a fixed to 0 when ``horizontal``).

    Returns (a, b, inlier mask). The consensus set is refit by least squares.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    need = 1 if horizontal else 2
    if n < need:
        raise ValueError(f"need at least {need} points")
    x, y = pts[:, 0], pts[:, 1]
    best_mask = None
    best_count = -1
    best_spread = math.inf
    for _ in range(iterations):
        if horizontal:
            i = rng.integers(n)
            a, b = 0.0, y[i]
        else:
            i, j = rng.choice(n, size=2, replace=False)
            if x[i] == x[j]:
                continue
            a = (y[j] - y[i]) / (x[j] - x[i])
            b = y[i] - a * x[i]
        resid = np.abs(y - (a * x + b))
        mask = resid <= tolerance
        count = int(mask.sum())
        spread = float(resid[mask].sum())
        if count > best_count or (count == best_count and spread < best_spread):
            best_mask, best_count, best_spread = mask, count, spread
    if best_mask is None:
        best_mask = np.ones(n, dtype=bool)
    xi, yi = x[best_mask], y[best_mask]
    if horizontal:
        return 0.0, float(yi.mean()), best_mask
    if np.ptp(xi) == 0:
        return 0.0, float(yi.mean()), best_mask
    a, b = np.polyfit(xi, yi, 1)
    return float(a), float(b), best_mask


def _rng(cfg: NormalizeConfig) -> np.random.Generator:
    return np.random.default_rng(cfg.seed)


def estimate_slope(img: GrayImage, cfg: NormalizeConfig = NormalizeConfig()) -> float:
    """Baseline angle (radians, rows growing downward) from the lowest ink pixel per column."""
    pts = column_extrema(img, cfg.fg_threshold, "bottom")
    if len(pts) < 2 or len({p[0] for p in pts}) < 2:
        return 0.0
    a, _, _ = ransac_line(pts, cfg.ransac_iterations, cfg.ransac_tolerance, _rng(cfg))
    return math.atan(a)


def correct_slope(img: GrayImage, angle: float, fill: float = 1.0) -> GrayImage:
    """Rotate by -angle about the centre onto a canvas large enough for the rotated bounds."""
    if abs(angle) >= math.pi / 4:
        raise ValueError("slope angle must satisfy |angle| < pi/4")
    if angle == 0.0:
        return GrayImage(img.pixels, dict(img.meta))
    c, s = math.cos(angle), math.sin(angle)
    h, w = img.height, img.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64) - (cx, cy)
    rx = c * corners[:, 0] + s * corners[:, 1]
    ry = -s * corners[:, 0] + c * corners[:, 1]
    out_w = int(math.ceil(rx.max() - rx.min())) + 1
    out_h = int(math.ceil(ry.max() - ry.min())) + 1
    ocx, ocy = (out_w - 1) / 2.0, (out_h - 1) / 2.0
    m = AffineMatrix(c, s, ocx - c * cx - s * cy, -s, c, ocy + s * cx - c * cy)
    return affine_warp(img, m, out_w, out_h, fill)


_NEIGHBOURS = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]])


def _prune_endpoints(skel: np.ndarray, rounds: int) -> np.ndarray:
    """Strip skeleton end pixels ``rounds`` times; thinning curls stroke ends into spurious diagonals."""
    for _ in range(rounds):
        nb = ndimage.convolve(skel.astype(np.int64), _NEIGHBOURS, mode="constant")
        ends = skel & (nb <= 1)
        if not ends.any():
            break
        skel = skel & ~ends
    return skel


def estimate_slant(img: GrayImage, cfg: NormalizeConfig = NormalizeConfig()) -> SlantEstimate:
    """Evidence count over right-boundary pixels of the thinned ink (end pixels pruned).

    For every skeleton pixel whose right neighbour is background, the three
    pixels in the row above (up-left, up, up-right) vote for left, centre and
    right inclination. alpha = (right - left) / (left + centre + right).
    """
    mask = img.pixels < cfg.fg_threshold
    if not mask.any():
        return SlantEstimate(0.0, 0, 0, 0)
    skel = _prune_endpoints(skeletonize(mask), cfg.slant_prune)
    padded = np.zeros((skel.shape[0] + 2, skel.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = skel
    core = padded[1:-1, 1:-1]
    boundary = core & ~padded[1:-1, 2:]
    left = int((boundary & padded[:-2, :-2]).sum())
    center = int((boundary & padded[:-2, 1:-1]).sum())
    right = int((boundary & padded[:-2, 2:]).sum())
    total = left + center + right
    alpha = (right - left) / total if total > 0 else 0.0
    return SlantEstimate(float(alpha), left, center, right)


def slant_matrix(alpha: float, width: int, height: int) -> AffineMatrix:
    """Shear (1, -alpha, w*alpha/2; 0, 1, 0) with rows counted upward from the bottom row.

    Expressed in array coordinates (rows growing downward) it becomes
    x' = x + alpha*r - alpha*(h - 1) + w*alpha/2.
    """
    return AffineMatrix(1.0, alpha, 0.5 * width * alpha - alpha * (height - 1), 0.0, 1.0, 0.0)


def correct_slant(img: GrayImage, alpha: float, fill: float = 1.0) -> GrayImage:
    if abs(alpha) >= 1.0:
        raise ValueError("|alpha| must be < 1")
    if alpha == 0.0:
        return GrayImage(img.pixels, dict(img.meta))
    return affine_warp(img, slant_matrix(alpha, img.width, img.height), img.width, img.height, fill)


def detect_zones(img: GrayImage, cfg: NormalizeConfig = NormalizeConfig()) -> ZoneLines:
    degenerate = ZoneLines(baseline_y=img.height - 1, upperline_y=0)
    bottom = column_extrema(img, cfg.fg_threshold, "bottom")
    top = column_extrema(img, cfg.fg_threshold, "top")
    if len(bottom) <= 1 or len(top) <= 1:
        return degenerate
    rng = _rng(cfg)
    _, base, _ = ransac_line(bottom, cfg.ransac_iterations, cfg.ransac_tolerance, rng, horizontal=True)
    _, upper, _ = ransac_line(top, cfg.ransac_iterations, cfg.ransac_tolerance, rng, horizontal=True)
    base_y = int(round(base))
    upper_y = int(round(upper))
    if not 0 <= upper_y < base_y < img.height:
        return degenerate
    return ZoneLines(baseline_y=base_y, upperline_y=upper_y)


def zone_ratio(core_height: int, region_height: int) -> float:
    return core_height / region_height if region_height > core_height else 1.0


def normalize_zones(img: GrayImage, zones: ZoneLines) -> GrayImage:
    """Shrink the ascender and descender bands so neither is taller than the core band.

    Rows [0, upperline) are the ascender band, [upperline, baseline) the core
    and [baseline, height) the descender band.
    """
    if not 0 <= zones.upperline_y < zones.baseline_y < img.height:
        raise ValueError(f"invalid zones {zones} for height {img.height}")
    p = img.pixels
    core_h = zones.core_height
    parts = []
    for band in (p[: zones.upperline_y], None, p[zones.baseline_y:]):
        if band is None:
            parts.append(p[zones.upperline_y: zones.baseline_y])
            continue
        h_r = band.shape[0]
        r = zone_ratio(core_h, h_r)
        if h_r == 0 or r == 1.0:
            parts.append(band)
            continue
        new_h = max(1, int(round(r * h_r)))
        parts.append(resize(GrayImage(band), new_h, img.width).pixels)
    return GrayImage(np.vstack(parts), dict(img.meta))


def crop_resize(img: GrayImage, cfg: NormalizeConfig = NormalizeConfig()) -> GrayImage:
    th, tw = cfg.target_height, cfg.target_width
    ink_cols = np.flatnonzero((img.pixels < cfg.fg_threshold).any(axis=0))
    if len(ink_cols) == 0:
        return GrayImage(np.ones((th, tw)), {**img.meta, "aspect_broken": False})
    cropped = GrayImage(img.pixels[:, ink_cols[0]: ink_cols[-1] + 1])
    scaled_w = max(1, int(round(cropped.width * th / cropped.height)))
    if scaled_w > tw:
        out = resize(cropped, th, tw).pixels
        return GrayImage(out, {**img.meta, "aspect_broken": True})
    scaled = resize(cropped, th, scaled_w).pixels
    pad = np.ones((th, tw - scaled_w))
    out = np.hstack([pad, scaled] if cfg.pad_side == "left" else [scaled, pad])
    return GrayImage(out, {**img.meta, "aspect_broken": False})


def normalize_pipeline(img: GrayImage, cfg: NormalizeConfig = NormalizeConfig()) -> GrayImage:
    """Full chain; the result has ink bright on a black background."""
    out = enhance_contrast(img, cfg)
    angle = estimate_slope(out, cfg)
    angle = max(min(angle, math.pi / 4 - 1e-3), -math.pi / 4 + 1e-3)
    out = correct_slope(out, angle)
    alpha = estimate_slant(out, cfg).alpha
    alpha = max(min(alpha, 0.99), -0.99)
    out = correct_slant(out, alpha)
    zones = detect_zones(out, cfg)
    out = normalize_zones(out, zones)
    out = crop_resize(out, cfg)
    return invert(out).with_meta(slope=angle, slant=alpha)
