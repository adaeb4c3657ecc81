import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapetrack.imaging import GrayImage, RgbImage
from shapetrack.pnm import PnmFormatError, read_pnm, read_pnm_file, write_pnm, write_pnm_file


class TestRead:
    def test_p5_two_samples(self):
        img = read_pnm(b"P5 2 1 255 " + bytes([0, 255]))
        assert isinstance(img, GrayImage)
        assert img.pixels.tolist() == [[0.0, 255.0]]

    def test_p6_hair_triple(self):
        img = read_pnm(b"P6 1 1 255 " + bytes([106, 57, 6]))
        assert isinstance(img, RgbImage)
        assert img.pixels[0, 0].tolist() == [106, 57, 6]

    def test_truncated_body(self):
        data = b"P5 3 2 255 " + bytes([1, 2, 3])
        with pytest.raises(PnmFormatError) as exc:
            read_pnm(data)
        assert exc.value.offset == len(data)

    def test_bad_magic(self):
        with pytest.raises(PnmFormatError) as exc:
            read_pnm(b"P3 1 1 255 x")
        assert exc.value.offset == 0

    def test_bad_maxval(self):
        with pytest.raises(PnmFormatError):
            read_pnm(b"P5 1 1 65535 " + bytes(2))

    def test_trailing_bytes(self):
        with pytest.raises(PnmFormatError):
            read_pnm(b"P5 1 1 255 " + bytes([7, 8]))

    def test_non_numeric_header(self):
        with pytest.raises(PnmFormatError):
            read_pnm(b"P5 x 1 255 \x00")


class TestWrite:
    def test_canonical_gray(self):
        img = GrayImage(np.array([[7.0]]))
        assert write_pnm(img) == b"P5\n1 1\n255\n" + bytes([7])

    def test_rgb_black_2x2(self):
        img = RgbImage(np.zeros((2, 2, 3), np.uint8))
        assert write_pnm(img) == b"P6\n2 2\n255\n" + bytes(12)

    def test_gray_samples_rounded_half_up(self):
        img = GrayImage(np.array([[7.5, 6.49]]))
        assert write_pnm(img)[-2:] == bytes([8, 6])


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 17), st.integers(1, 13))
    def test_gray(self, seed, w, h):
        rng = np.random.default_rng(seed)
        img = GrayImage(rng.integers(0, 256, (h, w)).astype(np.float64))
        back = read_pnm(write_pnm(img))
        assert isinstance(back, GrayImage)
        assert (back.pixels == img.pixels).all()
        assert back.pixels.shape == img.pixels.shape

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 17), st.integers(1, 13))
    def test_rgb(self, seed, w, h):
        rng = np.random.default_rng(seed)
        img = RgbImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
        back = read_pnm(write_pnm(img))
        assert isinstance(back, RgbImage)
        assert (back.pixels == img.pixels).all()

    def test_file_helpers(self, tmp_path):
        img = RgbImage(np.arange(24, dtype=np.uint8).reshape(2, 4, 3))
        p = tmp_path / "x.ppm"
        write_pnm_file(p, img)
        back = read_pnm_file(p)
        assert (back.pixels == img.pixels).all()
