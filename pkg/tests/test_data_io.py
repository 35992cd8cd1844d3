import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simdiff.data import DatasetError, SyntheticDataset, dataset_folder, dataset_synthetic
from simdiff.imageio import ImageFormatError, center_crop_resize, read_pnm, write_pnm


class TestPnm:
    def test_ascii_pgm_with_comment(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P2\n# comment\n3 2\n255\n0 1 2\n3 4 255\n")
        np.testing.assert_array_equal(read_pnm(p)[..., 0], [[0, 1, 2], [3, 4, 255]])

    def test_ascii_ppm(self, tmp_path):
        p = tmp_path / "a.ppm"
        p.write_bytes(b"P3 1 1 255 10 20 30")
        np.testing.assert_array_equal(read_pnm(p), [[[10, 20, 30]]])

    def test_binary_maxval_rescaled(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5 2 1 15\n" + bytes([0, 15]))
        np.testing.assert_array_equal(read_pnm(p)[..., 0], [[0, 255]])

    def test_sixteen_bit(self, tmp_path):
        p = tmp_path / "a.pgm"
        p.write_bytes(b"P5 1 1 65535\n" + (65535).to_bytes(2, "big"))
        assert read_pnm(p)[0, 0, 0] == 255

    @given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.integers(0, 999))
    def test_roundtrip(self, h, w, c, seed):
        import tempfile, os
        img = np.random.default_rng(seed).integers(0, 256, (h, w, c), dtype=np.uint8)
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "x.pnm")
            write_pnm(path, img)
            np.testing.assert_array_equal(read_pnm(path), img)

    def test_written_header(self, tmp_path):
        write_pnm(tmp_path / "x.pgm", np.zeros((2, 3), np.uint8))
        assert (tmp_path / "x.pgm").read_bytes() == b"P5\n3 2\n255\n" + bytes(6)

    @pytest.mark.parametrize("data", [b"P7 1 1 255\n\0", b"P5 2 2 255\n\0", b"P5 0 1 255\n", b"P2 2 1 255 7"])
    def test_bad_files(self, tmp_path, data):
        p = tmp_path / "bad.pgm"
        p.write_bytes(data)
        with pytest.raises(ImageFormatError):
            read_pnm(p)

    def test_write_rejects_float(self, tmp_path):
        with pytest.raises(ImageFormatError):
            write_pnm(tmp_path / "x.pgm", np.zeros((2, 2)))


class TestResize:
    def test_area_halving(self):
        img = np.arange(16, dtype=float).reshape(4, 4, 1)
        out = center_crop_resize(img, 2)
        np.testing.assert_allclose(out[..., 0], [[2.5, 4.5], [10.5, 12.5]])

    def test_non_integer_ratio_preserves_mean(self):
        img = np.random.default_rng(0).uniform(0, 255, (6, 6, 3))
        out = center_crop_resize(img, 4)
        np.testing.assert_allclose(out.mean(axis=(0, 1)), img.mean(axis=(0, 1)), rtol=1e-12)

    def test_center_crop(self):
        img = np.zeros((4, 6, 1))
        img[:, 1:5] = 1.0
        np.testing.assert_array_equal(center_crop_resize(img, 4), 1.0)


class TestSynthetic:
    @pytest.mark.parametrize("kind", ["gaussian_blobs", "checker", "two_tone"])
    def test_range_and_determinism(self, kind):
        ds = dataset_synthetic(kind, 16, 4, seed=3)
        a, ia = ds.batch(np.random.default_rng(1), 64)
        b, ib = ds.batch(np.random.default_rng(1), 64)
        assert a.min() >= -1 and a.max() <= 1
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ia, ib)

    @pytest.mark.parametrize("kind", ["gaussian_blobs", "checker", "two_tone"])
    def test_class_moments_empirical(self, kind):
        ds = SyntheticDataset(kind, 8, 3)
        rng = np.random.default_rng(0)
        n = 20000
        for c in range(3):
            x = ds.render(np.full(n, c), rng.uniform(0.5, 1.0, n))
            se = np.sqrt(ds.class_variance(c).max() / n)
            np.testing.assert_allclose(x.mean(0), ds.class_mean(c), atol=5 * se + 1e-6)
            np.testing.assert_allclose(x.var(0), ds.class_variance(c), atol=5e-3)

    def test_blob_classes_distinct(self):
        ds = SyntheticDataset("gaussian_blobs", 16, 4)
        peaks = {np.unravel_index(np.argmax(ds.class_mean(c)[..., 0]), (16, 16)) for c in range(4)}
        assert len(peaks) == 4

    def test_iterator_same_seed(self):
        import itertools
        a = list(itertools.islice(iter(SyntheticDataset("checker", 4, 2, seed=5)), 3))
        b = list(itertools.islice(iter(SyntheticDataset("checker", 4, 2, seed=5)), 3))
        for (xa, ca), (xb, cb) in zip(a, b):
            np.testing.assert_array_equal(xa, xb)
            assert ca == cb

    @pytest.mark.parametrize("kw", [dict(kind="stripes"), dict(resolution=12), dict(num_classes=0)])
    def test_invalid(self, kw):
        args = dict(kind="checker", resolution=8, num_classes=2) | kw
        with pytest.raises(ValueError):
            SyntheticDataset(**args)


class TestFolder:
    def test_lexicographic_labels_and_mapping(self, tmp_path):
        for name, v in (("b", 255), ("a", 0)):
            (tmp_path / name).mkdir()
            write_pnm(tmp_path / name / "1.pgm", np.full((4, 4), v, np.uint8))
        ds = dataset_folder(tmp_path, 4)
        assert ds.class_names == ["a", "b"]
        np.testing.assert_array_equal(ds.images[ds.labels == 0], -1.0)
        np.testing.assert_array_equal(ds.images[ds.labels == 1], 1.0)

    def test_corrupt_file_skipped(self, tmp_path, caplog):
        write_pnm(tmp_path / "good.pgm", np.zeros((4, 4), np.uint8))
        (tmp_path / "bad.pgm").write_bytes(b"P5 garbage")
        with caplog.at_level(logging.WARNING):
            ds = dataset_folder(tmp_path, 2)
        assert len(ds.images) == 1
        assert "bad.pgm" in caplog.text

    def test_empty_is_error(self, tmp_path):
        with pytest.raises(DatasetError):
            dataset_folder(tmp_path, 4)

    def test_missing_is_error(self, tmp_path):
        with pytest.raises(DatasetError):
            dataset_folder(tmp_path / "nope", 4)
