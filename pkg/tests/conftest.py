import numpy as np
import pytest

from inkline.imaging import GrayImage


def stroke_image(height=60, width=120, xs=(20, 50, 80), thickness=3, top=10, bottom=50):
    """White canvas with vertical dark strokes."""
    p = np.ones((height, width))
    for x in xs:
        p[top:bottom, x: x + thickness] = 0.0
    return GrayImage(p)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def glyphs():
    from inkline.data import GlyphSet
    return GlyphSet.builtin(exemplars=3, height=32, seed=0)
