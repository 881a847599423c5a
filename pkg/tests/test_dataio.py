import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canonface import dataio
from canonface.errors import DataError

from oracles import bilinear_sample


class TestPgmRoundTrip:
    def test_known_bytes(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
        img = dataio.load_image(p)
        npt.assert_allclose(img, [[0, 1.0], [128 / 255, 64 / 255]])

    def test_header_comments_and_whitespace(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5 # magic\n# a comment line\n 2\t1 \n255\n" + bytes([7, 9]))
        img = dataio.load_image(p)
        npt.assert_allclose(img, [[7 / 255, 9 / 255]])

    def test_save_rounding(self, tmp_path):
        p = tmp_path / "t.pgm"
        dataio.save_image(np.array([[1.0, 0.5, 0.0, 1.3]]).reshape(2, 2), p)
        raw = p.read_bytes()
        # round half up: 0.5*255 = 127.5 -> 128; 1.3 clamps to 255
        assert raw.endswith(bytes([255, 128, 0, 255]))

    def test_round_trip_identity_up_to_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((9, 7))
        p = tmp_path / "t.pgm"
        dataio.save_image(img, p)
        back = dataio.load_image(p)
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12

    def test_second_save_byte_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((5, 5))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        dataio.save_image(img, p1)
        dataio.save_image(dataio.load_image(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            dataio.load_image(tmp_path / "absent.pgm")

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(DataError, match="P5"):
            dataio.load_image(p)

    def test_unsupported_maxval(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n1 1\n65535\n\0\0")
        with pytest.raises(DataError, match="maxval"):
            dataio.load_image(p)

    def test_truncated_raster(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(DataError, match="truncated"):
            dataio.load_image(p)

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4")
        with pytest.raises(DataError, match="truncated"):
            dataio.load_image(p)


class TestResizeBilinear:
    def test_constant_any_size(self):
        img = np.full((5, 3), 0.25)
        out = dataio.resize_bilinear(img, 7, 11)
        npt.assert_allclose(out, 0.25)

    def test_same_size_identity(self):
        img = np.array([[0.1, 0.4], [0.7, 1.0]])
        npt.assert_allclose(dataio.resize_bilinear(img, 2, 2), img)

    def test_4x4_ramp_to_2x2_hits_corners(self):
        img = np.arange(16, dtype=np.float64).reshape(4, 4) / 15.0
        out = dataio.resize_bilinear(img, 2, 2)
        # corner-aligned: output corners sample input corners exactly
        npt.assert_allclose(out, [[img[0, 0], img[0, 3]], [img[3, 0], img[3, 3]]])

    def test_matches_direct_sampling_oracle(self):
        rng = np.random.default_rng(3)
        img = rng.random((6, 5))
        out = dataio.resize_bilinear(img, 9, 8)
        for i in range(9):
            for j in range(8):
                y = i * 5.0 / 8.0
                x = j * 4.0 / 7.0
                npt.assert_allclose(out[i, j], bilinear_sample(img, y, x), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9))
    def test_range_never_exceeds_input_range(self, seed, oh, ow):
        img = np.random.default_rng(seed).random((4, 6))
        out = dataio.resize_bilinear(img, oh, ow)
        assert out.min() >= img.min() - 1e-12
        assert out.max() <= img.max() + 1e-12

    def test_size_one_axis_samples_center(self):
        img = np.array([[0.0], [1.0], [0.5]])
        out = dataio.resize_bilinear(img, 1, 1)
        npt.assert_allclose(out, [[1.0]])


class TestNormalize:
    def test_constant_maps_to_half(self):
        out = dataio.normalize(np.full((4, 4), 0.37))
        npt.assert_allclose(out, 0.5)

    def test_extremes_hit_0_and_1(self):
        rng = np.random.default_rng(8)
        out = dataio.normalize(rng.random((16, 16)))
        assert abs(out.min()) < 1e-12
        assert abs(out.max() - 1.0) < 1e-12

    def test_preserves_pixel_order(self):
        img = np.array([[0.2, 0.8], [0.5, 0.6]])
        out = dataio.normalize(img)
        assert np.array_equal(np.argsort(img.ravel()), np.argsort(out.ravel()))

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        once = dataio.normalize(rng.random((8, 8)))
        twice = dataio.normalize(once)
        npt.assert_allclose(twice, once, atol=1e-9)


class TestAsImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(DataError, match="outside"):
            dataio.as_image(np.array([[0.0, 1.5]]))

    def test_clips_float_noise(self):
        out = dataio.as_image(np.array([[1.0 + 1e-12, -1e-12]]))
        assert out.max() <= 1.0 and out.min() >= 0.0

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            dataio.as_image(np.array([[np.nan]]))


class TestManifest:
    def test_minimal_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id1,a.pgm\n")
        m = dataio.parse_manifest(p)
        assert len(m) == 1
        assert m.entries[0].identity_id == "id1"
        assert m.entries[0].image_path == str(tmp_path / "a.pgm")
        assert m.entries[0].landmarks is None

    def test_row_with_landmarks(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id1,a.pgm,10,20,30,20,20,35,15,45,25,45\n")
        m = dataio.parse_manifest(p)
        lm = m.entries[0].landmarks
        assert lm.shape == (5, 2)
        npt.assert_allclose(lm[dataio.LEFT_EYE], [10, 20])
        npt.assert_allclose(lm[dataio.MOUTH_RIGHT], [25, 45])

    def test_comments_and_blanks_skipped(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("# header\n\nid1,a.pgm\n  \nid2,b.pgm\n")
        m = dataio.parse_manifest(p)
        assert [e.identity_id for e in m.entries] == ["id1", "id2"]
        assert m.identities() == ["id1", "id2"]

    def test_wrong_column_count_names_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id1,a.pgm\nid2,b.pgm,1,2,3\n")
        with pytest.raises(DataError, match=":2:"):
            dataio.parse_manifest(p)

    def test_non_numeric_landmark_names_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id1,a.pgm,10,20,30,20,20,35,15,45,25,oops\n")
        with pytest.raises(DataError, match=":1:"):
            dataio.parse_manifest(p)

    def test_absolute_path_untouched(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id1,/data/x.pgm\n")
        assert dataio.parse_manifest(p).entries[0].image_path == "/data/x.pgm"
