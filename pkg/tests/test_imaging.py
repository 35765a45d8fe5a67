import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from inkline.imaging import (AffineMatrix, CorruptImageError, DegenerateTransformError, EmptyImageError, GrayImage,
                             MissingFileError, UnsupportedDepthError, affine_warp, column_extrema, invert, load_png,
                             resize, save_png, to_bytes)
from inkline.normalize import slant_matrix

unit_images = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                     elements=st.floats(0.0, 1.0, allow_nan=False))


def test_gray_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ValueError):
        GrayImage(np.zeros(4))


def test_gray_image_is_immutable():
    img = GrayImage(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1.0


def test_white_png_loads_as_ones(tmp_path):
    Image.fromarray(np.full((2, 2), 255, np.uint8), mode="L").save(tmp_path / "w.png")
    assert np.all(load_png(tmp_path / "w.png").pixels == 1.0)


def test_sixteen_bit_png(tmp_path):
    Image.fromarray(np.array([[0, 65535]], dtype=np.uint16)).save(tmp_path / "d.png")
    img = load_png(tmp_path / "d.png")
    assert img.pixels.tolist() == [[0.0, 1.0]]


def test_rgb_png_is_averaged(tmp_path):
    rgb = np.zeros((1, 1, 3), np.uint8)
    rgb[0, 0] = (255, 0, 0)
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
    assert load_png(tmp_path / "c.png").pixels[0, 0] == pytest.approx(1 / 3)


def test_load_errors_are_distinct(tmp_path):
    with pytest.raises(MissingFileError):
        load_png(tmp_path / "nope.png")
    (tmp_path / "bad.png").write_bytes(b"\x89PNG not really")
    with pytest.raises(CorruptImageError):
        load_png(tmp_path / "bad.png")
    Image.fromarray(np.zeros((2, 2), np.float32), mode="F").save(tmp_path / "f.tiff")
    (tmp_path / "f.png").write_bytes((tmp_path / "f.tiff").read_bytes())
    with pytest.raises((UnsupportedDepthError, CorruptImageError)):
        load_png(tmp_path / "f.png")


@pytest.mark.parametrize("value,byte", [(0.5, 128), (0.0, 0), (1.0, 255)])
def test_save_quantization(tmp_path, value, byte):
    save_png(GrayImage(np.full((1, 1), value)), tmp_path / "q.png")
    assert np.asarray(Image.open(tmp_path / "q.png"))[0, 0] == byte


@settings(max_examples=25, deadline=None)
@given(unit_images)
def test_png_roundtrip_is_quantization(tmp_path_factory, px):
    path = tmp_path_factory.mktemp("png") / "r.png"
    img = GrayImage(px)
    save_png(img, path)
    back = load_png(path)
    assert np.array_equal(to_bytes(back), to_bytes(img))


@given(unit_images)
def test_invert_is_an_involution(px):
    # 1 - (1 - x) can differ from x by one rounding of 1 - x
    img = GrayImage(px)
    assert np.max(np.abs(invert(invert(img)).pixels - px), initial=0.0) <= np.finfo(float).eps


def test_invert_exact_on_dyadic_values():
    px = np.arange(257).reshape(1, -1) / 256.0
    assert invert(invert(GrayImage(px))) == GrayImage(px)


def test_invert_values():
    assert invert(GrayImage(np.zeros((2, 2)))).pixels.min() == 1.0
    assert invert(GrayImage(np.array([[0.3]]))).pixels[0, 0] == pytest.approx(0.7)


@given(unit_images)
def test_identity_warp(px):
    img = GrayImage(px)
    out = affine_warp(img, AffineMatrix.identity())
    assert np.max(np.abs(out.pixels - img.pixels)) < 1e-6


def test_translation_moves_pixel():
    p = np.zeros((5, 10))
    p[2, 3] = 1.0
    out = affine_warp(GrayImage(p), AffineMatrix.translation(3, 0), fill=0.0)
    assert np.unravel_index(out.pixels.argmax(), out.pixels.shape) == (2, 6)


def test_shear_round_trip():
    ys, xs = np.mgrid[0:40, 0:60].astype(float)
    base = 0.5 + 0.4 * np.sin(xs / 6.0) * np.cos(ys / 8.0)
    m = slant_matrix(0.3, 60, 40)
    back = affine_warp(affine_warp(GrayImage(base), m), m.inverse())
    inner = (slice(4, 36), slice(16, 44))
    assert np.max(np.abs(back.pixels[inner] - base[inner])) <= 0.05


def test_singular_matrix():
    with pytest.raises(DegenerateTransformError):
        affine_warp(GrayImage(np.ones((3, 3))), AffineMatrix(1, 2, 0, 2, 4, 0))


def test_resize_keep_aspect():
    out = resize(GrayImage(np.ones((100, 50))), 48)
    assert out.pixels.shape == (48, 24)


@given(unit_images)
def test_resize_to_own_size(px):
    img = GrayImage(px)
    assert np.max(np.abs(resize(img, *px.shape).pixels - px)) < 1e-6


@given(st.floats(0, 1), st.integers(1, 30), st.integers(1, 30))
def test_resize_constant(v, h, w):
    out = resize(GrayImage(np.full((7, 9), v)), h, w)
    assert out.pixels.min() == out.pixels.max() == pytest.approx(v, abs=1e-15)


def test_resize_zero_area():
    with pytest.raises(EmptyImageError):
        resize(GrayImage(np.ones((0, 3))), 5)


def test_column_extrema_cases():
    assert column_extrema(GrayImage(np.ones((20, 20)))) == []
    p = np.ones((20, 8))
    p[10] = 0.0
    assert {y for _, y in column_extrema(GrayImage(p), which="bottom")} == {10}
    assert {y for _, y in column_extrema(GrayImage(p), which="top")} == {10}
    p[5] = 0.0
    p[12] = 0.0
    assert {y for _, y in column_extrema(GrayImage(p), which="bottom")} == {12}
    assert {y for _, y in column_extrema(GrayImage(p), which="top")} == {5}
    with pytest.raises(ValueError):
        column_extrema(GrayImage(p), fg_threshold=1.0)


@given(unit_images)
def test_bottom_extrema_below_top(px):
    img = GrayImage(px)
    top = dict(column_extrema(img, which="top"))
    for x, y in column_extrema(img, which="bottom"):
        assert y >= top[x]
