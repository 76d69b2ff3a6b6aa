import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cdfl.dataio import Image
from cdfl.privacy import PixelizeConfig, block_grid, changed_region_mask, pixelize


@st.composite
def images(draw):
    c = draw(st.sampled_from([1, 3]))
    h = draw(st.integers(4, 20))
    w = draw(st.integers(4, 20))
    px = draw(arrays(np.float64, (c, h, w), elements=st.floats(0, 1)))
    r0 = draw(st.integers(0, h - 1))
    c0 = draw(st.integers(0, w - 1))
    r1 = draw(st.integers(r0 + 1, h))
    c1 = draw(st.integers(c0 + 1, w))
    return Image(px, ((r0, c0, r1, c1),))


@settings(max_examples=60, deadline=None)
@given(images(), st.sampled_from(["region", "whole"]))
def test_identity_at_factor_one(img, mode):
    out = pixelize(img, PixelizeConfig(1, mode))
    assert out.pixels.tobytes() == img.pixels.tobytes()
    assert out.pixels is not img.pixels


@settings(max_examples=60, deadline=None)
@given(images(), st.integers(2, 6), st.sampled_from(["region", "whole"]))
def test_idempotent(img, a, mode):
    cfg = PixelizeConfig(a, mode)
    once = pixelize(img, cfg)
    np.testing.assert_allclose(pixelize(once, cfg).pixels, once.pixels, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(images(), st.integers(2, 6))
def test_outside_changed_mask_untouched(img, a):
    cfg = PixelizeConfig(a, "region")
    out = pixelize(img, cfg)
    keep = ~changed_region_mask(img, cfg)
    assert np.array_equal(out.pixels[:, keep], img.pixels[:, keep])
    # the grid contains the mask region itself
    r0, c0, r1, c1 = img.mask_regions[0]
    g0, gc0, g1, gc1 = block_grid(img.mask_regions[0], a, img.height, img.width)
    assert g0 <= r0 and gc0 <= c0 and g1 >= r1 and gc1 >= c1


def test_block_means_by_hand():
    px = np.arange(16.0).reshape(1, 4, 4)
    out = pixelize(Image(px), PixelizeConfig(2, "whole")).pixels[0]
    assert out[0, 0] == out[1, 1] == (0 + 1 + 4 + 5) / 4
    assert out[3, 3] == (10 + 11 + 14 + 15) / 4


def test_ragged_edge_block():
    px = np.arange(9.0).reshape(1, 3, 3)
    out = pixelize(Image(px), PixelizeConfig(2, "whole")).pixels[0]
    assert out[2, 2] == 8.0
    assert out[0, 2] == (2 + 5) / 2


def test_invalid_config():
    with pytest.raises(ValueError):
        PixelizeConfig(0)
    with pytest.raises(ValueError):
        PixelizeConfig(2, "blur")
