import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inkline.imaging import GrayImage
from inkline.normalize import (NormalizeConfig, ZoneLines, correct_slant, correct_slope, crop_resize, detect_zones,
                               enhance_contrast, estimate_slant, estimate_slope, normalize_pipeline, normalize_zones,
                               ransac_line, slant_matrix, zone_ratio)

from .conftest import stroke_image


def staggered_strokes(height=70, thickness=3):
    """Vertical strokes with staggered ends, so their staircase phases differ once sheared."""
    p = np.ones((height + 30, 260))
    for k, x in enumerate(range(25, 235, 30)):
        p[5 + 2 * k: 5 + 2 * k + height - 3 * (k % 3), x: x + thickness] = 0.0
    return GrayImage(p)


def test_config_validation():
    with pytest.raises(ValueError):
        NormalizeConfig(target_height=4)
    with pytest.raises(ValueError):
        NormalizeConfig(contrast_k=1.0)
    with pytest.raises(ValueError):
        NormalizeConfig(ransac_iterations=0)
    with pytest.raises(ValueError):
        NormalizeConfig(pad_side="top")


def test_two_tone_image_unchanged():
    img = stroke_image()
    assert np.array_equal(enhance_contrast(img).pixels, img.pixels)


def test_constant_gray_becomes_background():
    out = enhance_contrast(GrayImage(np.full((30, 30), 0.6)))
    assert np.all(out.pixels == 1.0)


def test_noisy_strokes_are_separated(rng):
    base = stroke_image(xs=(20, 40, 60, 80), thickness=4).pixels < 0.5
    p = np.where(base, 0.2, 0.8) + rng.uniform(-0.1, 0.1, size=base.shape)
    out = enhance_contrast(GrayImage(np.clip(p, 0, 1))).pixels
    assert out[base].max() < 0.2
    assert out[~base].min() > 0.8


def test_ransac_recovers_line_with_outliers(rng):
    x = np.arange(200, dtype=float)
    y = 0.1 * x + 5
    pts = np.c_[x, y]
    idx = rng.choice(200, 20, replace=False)
    pts[idx, 1] += rng.uniform(-40, 40, 20)
    a, b, mask = ransac_line(pts, 200, 1.0, np.random.default_rng(0))
    assert a == pytest.approx(0.1, abs=1e-3)
    assert mask.sum() >= 180


def test_slope_of_horizontal_stroke():
    p = np.ones((40, 100))
    p[20:23, 10:90] = 0
    assert abs(estimate_slope(GrayImage(p))) < 1e-6


def test_slope_of_sloped_points_with_outliers(rng):
    p = np.ones((80, 200))
    for x in range(200):
        p[int(round(10 + 0.1 * x)), x] = 0.0
    for x in rng.choice(200, 20, replace=False):
        p[int(round(10 + 0.1 * x)) + 1:, x] = 1.0
        p[rng.integers(50, 80), x] = 0.0
    assert estimate_slope(GrayImage(p)) == pytest.approx(math.atan(0.1), abs=0.01)


def test_slope_blank_is_zero():
    assert estimate_slope(GrayImage(np.ones((10, 10)))) == 0.0


def test_correct_slope_zero_is_identity():
    img = stroke_image()
    assert np.max(np.abs(correct_slope(img, 0.0).pixels - img.pixels)) < 1e-6


def test_correct_slope_round_trip_estimate():
    p = np.ones((80, 200))
    for x in range(20, 180):
        y = int(round(20 + 0.15 * x))
        p[y: y + 2, x] = 0.0
    fixed = correct_slope(GrayImage(p), estimate_slope(GrayImage(p)))
    assert abs(estimate_slope(fixed)) < 0.01


def test_correct_slope_canvas_contains_bounds():
    img = GrayImage(np.ones((20, 100)))
    out = correct_slope(img, 0.3)
    assert out.width >= 100 and out.height > 20
    with pytest.raises(ValueError):
        correct_slope(img, math.pi / 4)


def test_rotation_round_trip_is_close():
    ys, xs = np.mgrid[0:60, 0:60].astype(float)
    img = GrayImage(0.5 + 0.4 * np.sin(xs / 7) * np.cos(ys / 9))
    there = correct_slope(img, 0.2)
    back = correct_slope(there, -0.2)
    oy, ox = (back.height - 60) // 2, (back.width - 60) // 2
    crop = back.pixels[oy: oy + 60, ox: ox + 60]
    assert np.max(np.abs(crop[15:45, 15:45] - img.pixels[15:45, 15:45])) <= 0.05


def test_vertical_strokes_have_zero_slant():
    assert abs(estimate_slant(staggered_strokes()).alpha) <= 0.02


def test_slant_blank():
    est = estimate_slant(GrayImage(np.ones((10, 10))))
    assert (est.alpha, est.evidence_left, est.evidence_center, est.evidence_right) == (0.0, 0, 0, 0)


def test_slant_formula_matches_counts():
    est = estimate_slant(correct_slant(staggered_strokes(), -0.3))
    total = est.evidence_left + est.evidence_center + est.evidence_right
    assert est.alpha == (est.evidence_right - est.evidence_left) / total


@pytest.mark.parametrize("alpha", [-0.3, 0.3])
def test_slant_shear_round_trip(alpha):
    slanted = correct_slant(staggered_strokes(), -alpha)
    assert estimate_slant(slanted).alpha == pytest.approx(alpha, abs=0.05)


def test_slant_matrix_shift():
    # (1, -a, w a / 2) with y counted upward from the bottom row; rows are counted downward here
    m = slant_matrix(0.5, 100, 50)
    for r in (0, 10, 49):
        y_up = 49 - r
        x_new = m.a11 * 30 + m.a12 * r + m.a13
        assert x_new == pytest.approx(30 + 25 - 0.5 * y_up)


def test_correct_slant_zero_identity_and_guard():
    img = stroke_image()
    assert correct_slant(img, 0.0) == img
    with pytest.raises(ValueError):
        correct_slant(img, 1.0)


def test_detect_zones_band():
    p = np.ones((70, 200))
    p[20:41, 10:190:4] = 0.0
    z = detect_zones(GrayImage(p))
    assert abs(z.upperline_y - 20) <= 2 and abs(z.baseline_y - 40) <= 2


def test_detect_zones_rejects_descenders():
    p = np.ones((70, 200))
    p[20:41, 10:190:4] = 0.0
    p[41:56, 10:190:20] = 0.0
    z = detect_zones(GrayImage(p))
    assert abs(z.baseline_y - 40) <= 2


def test_detect_zones_blank():
    assert detect_zones(GrayImage(np.ones((30, 30)))) == ZoneLines(29, 0)


def test_zone_ratio_cases():
    assert zone_ratio(20, 40) == 0.5
    assert zone_ratio(20, 10) == 1.0


def test_normalize_zones_shrinks_ascenders_only():
    rng = np.random.default_rng(0)
    p = rng.random((80, 30))
    z = ZoneLines(baseline_y=60, upperline_y=40)
    out = normalize_zones(GrayImage(p), z).pixels
    assert out.shape == (20 + 20 + 20, 30)
    assert np.array_equal(out[20:40], p[40:60])


def test_normalize_zones_zero_descender():
    p = np.random.default_rng(1).random((50, 10))
    out = normalize_zones(GrayImage(p), ZoneLines(baseline_y=49, upperline_y=30)).pixels
    assert np.array_equal(out[-19:], p[-19:])


def test_normalize_zones_invalid():
    with pytest.raises(ValueError):
        normalize_zones(GrayImage(np.ones((10, 10))), ZoneLines(5, 5))


def test_crop_resize_breaks_aspect_when_too_wide():
    p = np.zeros((30, 300))
    out = crop_resize(GrayImage(p))
    assert out.pixels.shape == (48, 192) and out.meta["aspect_broken"]


def test_crop_resize_pads_left():
    p = np.zeros((48, 100))
    out = crop_resize(GrayImage(p))
    assert out.pixels.shape == (48, 192)
    assert np.all(out.pixels[:, :92] == 1.0) and np.all(out.pixels[:, 92:] == 0.0)
    right = crop_resize(GrayImage(p), NormalizeConfig(pad_side="right"))
    assert np.all(right.pixels[:, 100:] == 1.0)


def test_crop_resize_blank():
    out = crop_resize(GrayImage(np.ones((10, 10))))
    assert out.pixels.shape == (48, 192) and np.all(out.pixels == 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 80), st.integers(1, 400), st.integers(0, 2 ** 31))
def test_crop_resize_size_invariant(h, w, seed):
    px = np.random.default_rng(seed).random((h, w))
    assert crop_resize(GrayImage(px)).pixels.shape == (48, 192)


def test_pipeline_output_and_determinism(glyphs):
    from inkline.data import synth_word
    img, _ = synth_word(glyphs, "hello", np.random.default_rng(3))
    slanted = correct_slant(img, -0.3, fill=1.0)
    a = normalize_pipeline(slanted)
    b = normalize_pipeline(slanted)
    assert a.pixels.shape == (48, 192)
    assert a == b
    assert a.pixels.max() > 0.5  # ink is bright after the final inversion


def test_pipeline_fixed_point():
    img = staggered_strokes()
    out = normalize_pipeline(img, NormalizeConfig(target_height=96, target_width=400))
    dark = GrayImage(1.0 - out.pixels)
    assert abs(estimate_slope(dark)) < 0.02
    assert abs(estimate_slant(dark).alpha) < 0.02
