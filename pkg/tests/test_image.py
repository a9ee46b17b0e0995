import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import structured
from invarlab.errors import ParseError
from invarlab.image import (
    Image, center_crop, crop, cyclic_shift, decode_ppm, encode_ppm, invert_affine, read_image,
    resize, resize_shorter_side, round_half_up, to_pixel, warp_affine, warp_inverse_map, write_image,
)


class TestImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Image(np.full((2, 2, 3), 1.5))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 2)))

    def test_immutable(self, img16):
        with pytest.raises(ValueError):
            img16.data[0, 0, 0] = 0.5

    def test_from_array_clips(self):
        img = Image.from_array(np.array([[[-1.0, 0.5, 2.0]]]))
        np.testing.assert_array_equal(img.data, [[[0.0, 0.5, 1.0]]])


class TestWarp:
    def test_pixel_centers(self):
        # align-corners false: -1 and 1 are the outer edges of the image
        assert to_pixel(-1.0, 4) == -0.5
        assert to_pixel(1.0, 4) == 3.5
        assert to_pixel(0.0, 4) == 1.5

    def test_identity_is_bit_identical(self, img16):
        out = warp_affine(img16, np.eye(3))
        np.testing.assert_array_equal(out.data, img16.data)

    def test_one_pixel_translation(self, img16):
        w = img16.width
        m = np.array([[1.0, 0.0, 2.0 / w], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        out = warp_affine(img16, m).data
        np.testing.assert_allclose(out[:, 1:], img16.data[:, :-1], atol=1e-12)
        np.testing.assert_array_equal(out[:, 0], 0.0)

    def test_inverse_map_matches_forward(self, img16):
        m = np.array([[0.9, 0.1, 0.05], [-0.1, 1.1, 0.0], [0.0, 0.0, 1.0]])
        a = warp_affine(img16, m).data
        b = warp_inverse_map(img16, invert_affine(m)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_round_trip_interior(self):
        # bilinear sampling reproduces an affine ramp exactly away from the border
        y, x = np.mgrid[0:16, 0:16]
        ramp = np.stack([0.2 + 0.03 * x, 0.1 + 0.04 * y, 0.3 + 0.01 * x + 0.02 * y], axis=-1)
        img = Image(ramp)
        phi = np.radians(10)
        m = np.array([[np.cos(phi), -np.sin(phi), 0.0], [np.sin(phi), np.cos(phi), 0.0], [0, 0, 1.0]])
        back = warp_affine(warp_affine(img, m), invert_affine(m)).data
        np.testing.assert_allclose(back[4:12, 4:12], ramp[4:12, 4:12], atol=1e-9)

    def test_wrap_mode_integer_shift_is_roll(self, img16):
        w = img16.width
        m = np.array([[1.0, 0.0, 6.0 / w], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        out = warp_affine(img16, m, mode="wrap").data
        np.testing.assert_allclose(out, cyclic_shift(img16, 3, 0).data, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6))
    def test_output_stays_in_unit_range(self, vals):
        m = np.array([vals[:3], vals[3:], [0.0, 0.0, 1.0]])
        if abs(np.linalg.det(m[:2, :2])) < 1e-3:
            return
        out = warp_affine(Image(structured(8, 1)), m).data
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestGeometryHelpers:
    def test_round_half_up(self):
        assert [round_half_up(v) for v in (0.5, 1.5, 2.5, -0.5)] == [1, 2, 3, 0]

    def test_crop_and_center(self, img16):
        c = crop(img16, 2, 3, 5, 4)
        np.testing.assert_array_equal(c.data, img16.data[3:7, 2:7])
        cc = center_crop(img16, 8, 8)
        np.testing.assert_array_equal(cc.data, img16.data[4:12, 4:12])

    def test_resize_shorter_side(self):
        img = Image(np.zeros((10, 20, 3)))
        assert resize_shorter_side(img, 5).size == (10, 5)

    def test_resize_constant_stays_constant(self):
        img = Image.blank(7, 5, 0.25)
        np.testing.assert_allclose(resize(img, 13, 3).data, 0.25)


class TestPPM:
    def test_round_trip(self, tmp_path):
        q = np.round(structured(9, 2) * 255) / 255
        img = Image(q)
        p = tmp_path / "a.ppm"
        write_image(img, p)
        np.testing.assert_array_equal(read_image(p).data, img.data)

    def test_one_black_pixel(self):
        buf = b"P6\n1 1\n255\n\x00\x00\x00"
        img = decode_ppm(buf)
        assert img.size == (1, 1)
        np.testing.assert_array_equal(img.data, 0.0)
        assert encode_ppm(img) == buf

    def test_comment_in_header(self):
        img = decode_ppm(b"P6 # hi\n1 1 255\n\xff\x00\x00")
        np.testing.assert_array_equal(img.data[0, 0], [1.0, 0.0, 0.0])

    @pytest.mark.parametrize("buf", [b"P6\n2 2\n", b"P5\n1 1\n255\n\x00", b"P6\n1 1\n255\n\x00", b"P6\n0 1\n255\n"])
    def test_malformed(self, buf):
        with pytest.raises(ParseError):
            decode_ppm(buf)
