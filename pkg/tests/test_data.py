import numpy as np
import pytest

from rn_decomp.data import (
    generate_toy_corpus,
    load_corpus_dir,
    piecewise_images,
    read_pgm,
    simulate_measurements,
    write_pgm,
)
from rn_decomp.operators import inpainting


class TestPiecewiseCorpus:
    def test_values_in_unit_interval_and_deterministic(self):
        a = piecewise_images(3, 16, seed=1)
        b = piecewise_images(3, 16, seed=1)
        for img_a, img_b in zip(a, b):
            assert img_a.shape == (1, 16, 16)
            assert img_a.min() >= 0.0 and img_a.max() <= 1.0
            assert np.array_equal(img_a, img_b)

    def test_distinct_seeds_differ(self):
        a = piecewise_images(1, 16, seed=1)[0]
        b = piecewise_images(1, 16, seed=2)[0]
        assert not np.array_equal(a, b)

    def test_zero_count_gives_empty_corpus(self):
        assert piecewise_images(0, 16, seed=0) == []

    def test_too_small_size_rejected(self):
        with pytest.raises(ValueError, match=">= 8"):
            piecewise_images(1, 4, seed=0)


class TestPgmIO:
    def test_round_trip_is_bit_exact(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (9, 7), dtype=np.uint8)
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        assert np.array_equal(read_pgm(path), img)

    def test_unit_float_round_trip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, (8, 8)).astype(np.float64) / 255.0
        path = tmp_path / "img.pgm"
        write_pgm(path, img)
        np.testing.assert_allclose(read_pgm(path) / 255.0, img)

    def test_comment_lines_are_skipped(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 64, 128, 255]))
        np.testing.assert_array_equal(read_pgm(path), [[0, 64], [128, 255]])

    def test_non_p5_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 0 0 0")
        with pytest.raises(ValueError, match="P5"):
            read_pgm(path)

    def test_wrong_maxval_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError, match="8-bit"):
            read_pgm(path)

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n2 2\n255\n\x00")
        with pytest.raises(ValueError, match="truncated"):
            read_pgm(path)


class TestCorpusDir:
    def test_constant_image_rescales(self, tmp_path):
        write_pgm(tmp_path / "flat.pgm", np.full((12, 12), 128, dtype=np.uint8))
        (img,) = load_corpus_dir(tmp_path, count=1, size=8)
        np.testing.assert_allclose(img, 128.0 / 255.0)
        assert img.shape == (1, 8, 8)

    def test_center_crop(self, tmp_path):
        full = np.zeros((12, 12), dtype=np.uint8)
        full[2:10, 2:10] = 200
        write_pgm(tmp_path / "box.pgm", full)
        (img,) = load_corpus_dir(tmp_path, count=1, size=8)
        np.testing.assert_allclose(img[0], 200.0 / 255.0)

    def test_offenders_are_listed(self, tmp_path):
        write_pgm(tmp_path / "ok.pgm", np.zeros((8, 8), dtype=np.uint8))
        (tmp_path / "broken.pgm").write_bytes(b"P5\n8 8\n255\n")
        with pytest.raises(ValueError, match="broken.pgm"):
            load_corpus_dir(tmp_path, count=2, size=8)

    def test_undersized_corpus_rejected(self, tmp_path):
        write_pgm(tmp_path / "one.pgm", np.zeros((8, 8), dtype=np.uint8))
        with pytest.raises(ValueError, match="requested"):
            load_corpus_dir(tmp_path, count=3, size=8)

    def test_generate_toy_corpus_dispatches(self, tmp_path):
        assert len(generate_toy_corpus("piecewise", 2, 8, seed=0)) == 2
        write_pgm(tmp_path / "a.pgm", np.zeros((8, 8), dtype=np.uint8))
        assert len(generate_toy_corpus(str(tmp_path), 1, 8)) == 1


class TestSimulation:
    def test_noiseless_measurements(self):
        op = inpainting((4,), [0, 2])
        ds = simulate_measurements(op, [np.array([1.0, 2.0, 3.0, 4.0])], sigma=0.0, seed=0)
        x, y, eps = ds[0]
        np.testing.assert_array_equal(y.data, [1.0, 3.0])
        assert np.abs(eps.data).max() == 0.0

    def test_measurement_is_forward_plus_noise(self):
        op = inpainting((4,), [0, 2])
        x = np.array([1.0, 2.0, 3.0, 4.0])
        ds = simulate_measurements(op, [x], sigma=0.5, seed=3)
        _, y, eps = ds[0]
        np.testing.assert_allclose(y.data, np.array([1.0, 3.0]) + eps.data)

    def test_fixed_seed_reproduces_bitwise(self):
        op = inpainting((4,), [0, 2])
        xs = [np.array([0.1, 0.2, 0.3, 0.4]), np.array([1.0, 1.0, 0.0, 0.0])]
        a = simulate_measurements(op, xs, sigma=0.2, seed=42)
        b = simulate_measurements(op, xs, sigma=0.2, seed=42)
        for (_, ya, ea), (_, yb, eb) in zip(a, b):
            assert np.array_equal(ya.data, yb.data)
            assert np.array_equal(ea.data, eb.data)

    def test_regeneration_error_is_tiny(self):
        op = inpainting((1, 8, 8), np.arange(0, 64, 2))
        ds = simulate_measurements(op, piecewise_images(5, 8, seed=9), sigma=0.3, seed=10)
        assert ds.max_regeneration_error(op) < 1e-12

    def test_negative_sigma_rejected(self):
        op = inpainting((4,), [0])
        with pytest.raises(ValueError, match=">= 0"):
            simulate_measurements(op, [np.zeros(4)], sigma=-0.1, seed=0)

    def test_direct_substitution_example(self):
        op = inpainting((4,), [0, 2])
        x = np.array([1.0, 2.0, 3.0, 4.0])
        eps = np.array([0.1, -0.1])
        y = op.apply_raw(x) + eps
        np.testing.assert_allclose(y, [1.1, 2.9])
