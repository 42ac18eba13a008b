"""Built-in bicubic enlargement and the upscale entry point."""

import numpy as np
import pytest

from msbd.upscaler import BicubicUpscaler, resize_bicubic, upscale

# Catmull-Rom 2 -> 8 with edge clamping, derived by hand: sample positions
# (k+0.5)/4 - 0.5 give fractions u in {0.625, 0.875, 0.125, 0.375} against
# bases {-1, -1, 0, 0, 0, 0, 1, 1}; collapsing clamped taps onto the two
# samples [p, q] leaves these weights on q:
EIGHT_TAP = np.array([
    -0.0732421875, -0.0478515625, 0.083984375, 0.345703125,
    0.654296875, 0.916015625, 1.0478515625, 1.0732421875,
])


def test_bicubic_two_sample_row_matches_hand_weights():
    out = resize_bicubic(np.array([[0.0, 1.0]]), 8, 1)
    np.testing.assert_allclose(out[0], EIGHT_TAP, atol=1e-15)


def test_bicubic_checkerboard_8x8():
    # separable: out[r, c] = p[c] + p[r] * (1 - 2 p[c]) for the 2x2 board
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    want = EIGHT_TAP[None, :] + EIGHT_TAP[:, None] * (1.0 - 2.0 * EIGHT_TAP[None, :])
    got = resize_bicubic(board, 8, 8)
    np.testing.assert_allclose(got, want, atol=1e-14)


def test_bicubic_reproduces_linear_where_unclamped():
    # full 4-tap stencils reproduce degree-1 data exactly
    out = resize_bicubic(np.array([[0.0, 1.0, 2.0, 3.0]]), 8, 1)
    src = (np.arange(8) + 0.5) * 0.5 - 0.5
    inner = (src >= 1.0) & (src <= 2.0)
    np.testing.assert_allclose(out[0][inner], src[inner], atol=1e-14)


def test_bicubic_constant_and_identity():
    img = np.full((3, 5), 0.42)
    np.testing.assert_allclose(resize_bicubic(img, 11, 7), 0.42, rtol=1e-14)
    same = resize_bicubic(img, 5, 3)
    np.testing.assert_array_equal(same, img)
    assert same is not img


def test_upscaler_chains_bicubic_then_bilinear():
    rng = np.random.default_rng(0)
    img = rng.random((2, 2))
    got = BicubicUpscaler().upscale(img, 6, 6)
    from msbd.image_ops import resize_bilinear
    want = resize_bilinear(resize_bicubic(img, 8, 8), 6, 6)
    np.testing.assert_array_equal(got, want)


def test_upscale_identity_and_dims():
    rng = np.random.default_rng(1)
    img = rng.random((4, 4, 3), dtype=np.float32)
    same = upscale(BicubicUpscaler(), img, 4, 4)
    np.testing.assert_array_equal(same, img)
    assert same is not img
    out = upscale(BicubicUpscaler(), img, 9, 13)
    assert out.shape == (13, 9, 3)
    assert out.dtype == np.float32
    assert np.all(np.isfinite(out))


def test_upscale_constant():
    out = upscale(BicubicUpscaler(), np.full((2, 3), 0.7), 12, 8)
    assert out.shape == (8, 12)
    np.testing.assert_allclose(out, 0.7, rtol=1e-13)


def test_upscale_rejects_shrinking():
    img = np.zeros((4, 4))
    with pytest.raises(ValueError):
        upscale(BicubicUpscaler(), img, 3, 4)
    with pytest.raises(ValueError):
        upscale(BicubicUpscaler(), img, 4, 3)


def test_upscale_flags_backend_shape_lies():
    class Lying:
        def upscale(self, image, target_w, target_h):
            return np.zeros((target_h + 1, target_w))

    with pytest.raises(ValueError):
        upscale(Lying(), np.zeros((2, 2)), 4, 4)
