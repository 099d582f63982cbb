import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from shadowlab.imaging import (
    BinaryMask,
    ImageRGB,
    blend_soft,
    dilate,
    load_image,
    load_mask,
    mask_union,
    region_replace,
    resize,
    save_image,
    save_mask,
    to_uint8,
)


def rand_image(rng, h=8, w=8):
    return ImageRGB(rng.random((h, w, 3)))


def rand_hard_mask(rng, h=8, w=8):
    return BinaryMask((rng.random((h, w)) > 0.5).astype(np.float64))


class TestImageRGB:
    def test_buffer_is_copied_and_frozen(self):
        src = np.full((2, 3, 3), 0.5)
        img = ImageRGB(src)
        src[0, 0, 0] = 0.9
        assert img.pixels[0, 0, 0] == 0.5
        with pytest.raises(ValueError):
            img.pixels[0, 0, 0] = 0.1

    @pytest.mark.parametrize("bad", [
        np.zeros((4, 4)),
        np.zeros((4, 4, 4)),
        np.full((2, 2, 3), 1.5),
        np.full((2, 2, 3), -0.1),
        np.full((2, 2, 3), np.nan),
        np.zeros((0, 2, 3)),
    ])
    def test_rejects_bad_buffers(self, bad):
        with pytest.raises(ValueError):
            ImageRGB(bad)

    def test_dimensions(self):
        img = ImageRGB(np.zeros((5, 7, 3)))
        assert (img.height, img.width) == (5, 7)


class TestBinaryMask:
    def test_hard_rejects_fractional(self):
        with pytest.raises(ValueError):
            BinaryMask(np.full((2, 2), 0.5))

    def test_soft_accepts_fractional_but_not_out_of_range(self):
        BinaryMask(np.full((2, 2), 0.5), soft=True)
        with pytest.raises(ValueError):
            BinaryMask(np.full((2, 2), 1.5), soft=True)

    def test_area_counts_nonzero(self):
        m = BinaryMask(np.eye(4))
        assert m.area() == 4


class TestMaskAlgebra:
    @given(arrays(np.float64, (6, 6), elements=st.sampled_from([0.0, 1.0])),
           arrays(np.float64, (6, 6), elements=st.sampled_from([0.0, 1.0])))
    @settings(max_examples=30, deadline=None)
    def test_union_is_pixelwise_max(self, a, b):
        got = mask_union([BinaryMask(a), BinaryMask(b)]).values
        np.testing.assert_array_equal(got, np.maximum(a, b))

    def test_union_rejects_soft_and_empty(self):
        with pytest.raises(ValueError):
            mask_union([])
        with pytest.raises(ValueError):
            mask_union([BinaryMask(np.full((2, 2), 0.3), soft=True)])

    def test_dilate_radius_one_square(self):
        m = np.zeros((7, 7))
        m[3, 3] = 1.0
        out = dilate(BinaryMask(m), 1).values
        expect = np.zeros((7, 7))
        expect[2:5, 2:5] = 1.0
        np.testing.assert_array_equal(out, expect)

    def test_dilate_matches_shift_oracle(self):
        # square structuring element == union of all (dy, dx) shifts
        rng = np.random.default_rng(0)
        m = (rng.random((10, 10)) > 0.8).astype(np.float64)
        r = 2
        expect = np.zeros_like(m)
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                shifted = np.zeros_like(m)
                ys = slice(max(0, dy), min(10, 10 + dy))
                xs = slice(max(0, dx), min(10, 10 + dx))
                ys_src = slice(max(0, -dy), min(10, 10 - dy))
                xs_src = slice(max(0, -dx), min(10, 10 - dx))
                shifted[ys, xs] = m[ys_src, xs_src]
                expect = np.maximum(expect, shifted)
        got = dilate(BinaryMask(m), r).values
        np.testing.assert_array_equal(got, expect)

    def test_dilate_rejects_nonpositive_radius(self):
        with pytest.raises(ValueError):
            dilate(BinaryMask(np.zeros((3, 3))), 0)

    def test_region_replace_is_exact_on_both_sides(self):
        rng = np.random.default_rng(1)
        dst, src = rand_image(rng), rand_image(rng)
        m = rand_hard_mask(rng)
        out = region_replace(dst, src, m)
        sel = m.values.astype(bool)
        assert (out.pixels[sel] == src.pixels[sel]).all()
        assert (out.pixels[~sel] == dst.pixels[~sel]).all()

    def test_blend_soft_exact_at_extremes(self):
        rng = np.random.default_rng(2)
        a, b = rand_image(rng), rand_image(rng)
        m = rand_hard_mask(rng)
        out = blend_soft(a, b, BinaryMask(m.values, soft=True))
        sel = m.values.astype(bool)
        assert (out.pixels[sel] == a.pixels[sel]).all()
        assert (out.pixels[~sel] == b.pixels[~sel]).all()

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_blend_soft_stays_between_inputs(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rand_image(rng, 4, 4), rand_image(rng, 4, 4)
        m = BinaryMask(rng.random((4, 4)), soft=True)
        out = blend_soft(a, b, m).pixels
        lo = np.minimum(a.pixels, b.pixels)
        hi = np.maximum(a.pixels, b.pixels)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


class TestResize:
    def test_identity_at_same_size(self):
        rng = np.random.default_rng(3)
        img = rand_image(rng)
        out = resize(img, 8, 8)
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_bilinear_preserves_constant(self):
        img = ImageRGB(np.full((6, 6, 3), 0.25))
        out = resize(img, 13, 9)
        np.testing.assert_allclose(out.pixels, 0.25, atol=1e-12)

    def test_hard_mask_stays_hard(self):
        rng = np.random.default_rng(4)
        m = rand_hard_mask(rng, 10, 10)
        out = resize(m, 7, 7)
        assert not out.soft
        assert np.isin(out.values, (0.0, 1.0)).all()

    def test_soft_mask_resize_stays_in_range(self):
        rng = np.random.default_rng(5)
        m = BinaryMask(rng.random((6, 6)), soft=True)
        out = resize(m, 11, 5)
        assert out.soft
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0

    def test_rejects_bad_targets(self):
        with pytest.raises(ValueError):
            resize(ImageRGB(np.zeros((2, 2, 3))), 0, 4)
        with pytest.raises(TypeError):
            resize(np.zeros((2, 2)), 4, 4)


class TestPngRoundTrip:
    def test_uint8_quantization_is_half_up(self):
        # exact grid values must survive; the midpoint rounds up, not to even
        k = np.arange(256)
        np.testing.assert_array_equal(to_uint8(k / 255.0), k)
        assert to_uint8(np.array([0.5 / 255.0]))[0] == 1

    def test_image_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(6)
        img = rand_image(rng, 5, 5)
        p = tmp_path / "img.png"
        save_image(img, p)
        back = load_image(p)
        assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255.0 + 1e-12

    def test_grid_values_round_trip_exactly(self, tmp_path):
        vals = np.arange(75).reshape(5, 5, 3) / 255.0
        p = tmp_path / "grid.png"
        save_image(ImageRGB(vals), p)
        np.testing.assert_array_equal(load_image(p).pixels, vals)

    def test_hard_mask_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        m = rand_hard_mask(rng, 6, 6)
        p = tmp_path / "m.png"
        save_mask(m, p)
        np.testing.assert_array_equal(load_mask(p).values, m.values)

    def test_hard_load_rejects_gray_levels(self, tmp_path):
        p = tmp_path / "soft.png"
        save_mask(BinaryMask(np.full((3, 3), 0.5), soft=True), p)
        with pytest.raises(ValueError, match="only 0 and 255"):
            load_mask(p)
        soft = load_mask(p, soft=True)
        assert abs(soft.values[0, 0] - 128 / 255.0) < 1e-12

    def test_load_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "absent.png")

    def test_load_garbage_raises_value_error(self, tmp_path):
        p = tmp_path / "junk.png"
        p.write_bytes(b"not a png at all")
        with pytest.raises(ValueError, match="unreadable"):
            load_image(p)
