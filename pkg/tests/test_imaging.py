"""Image utilities: scaling, noise, SNR, PGM files, synthetic corpus."""

import math

import numpy as np
import pytest

from onnkit.imaging import (
    center_crop_square,
    normalize,
    read_pgm,
    resize_bilinear,
    salt_pepper,
    snr,
    synthetic_corpus,
    to_thumbnail,
    wgn,
    write_pgm,
)


def test_normalize_maps_range_to_unit_interval():
    out = normalize(np.array([[10.0, 20.0], [30.0, 20.0]]))
    assert out.min() == -1.0 and out.max() == 1.0
    assert out[0, 1] == 0.0


def test_normalize_rejects_flat_images():
    with pytest.raises(ValueError):
        normalize(np.full((4, 4), 7.0))


def test_snr_known_ratio():
    target = np.array([2.0, -2.0, 2.0, -2.0])
    noisy = target + np.array([0.4, 0.4, -0.4, -0.4])
    # var 4 against var 0.16 is a factor 25: 10 log10(25)
    assert snr(target, noisy) == pytest.approx(10 * math.log10(25.0))


def test_snr_of_exact_match_is_infinite():
    t = np.arange(6.0).reshape(2, 3)
    assert snr(t, t.copy()) == math.inf


def test_snr_scales_with_noise_amplitude():
    rng = np.random.default_rng(0)
    t = rng.standard_normal((32, 32))
    e = rng.standard_normal((32, 32))
    to_scale = [snr(t, t + c * e) for c in (0.1, 0.2, 0.4)]
    # halving the noise amplitude buys about 6 dB each time
    diffs = np.diff(to_scale)
    assert np.allclose(diffs, -20 * math.log10(2), atol=1e-9)


def test_snr_shape_mismatch():
    with pytest.raises(ValueError):
        snr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_snr_degenerate_target():
    with pytest.raises(ValueError):
        snr(np.zeros((3, 3)), np.ones((3, 3)))


def test_salt_pepper_hits_expected_fraction():
    rng = np.random.default_rng(1)
    img = np.zeros((200, 200))
    noisy = salt_pepper(img, 0.4, rng)
    frac = np.mean(noisy != 0.0)
    assert abs(frac - 0.4) < 0.02
    hit = noisy[noisy != 0.0]
    assert set(np.unique(hit)) == {-1.0, 1.0}
    # both polarities in roughly equal measure
    assert abs(np.mean(hit == 1.0) - 0.5) < 0.03


def test_salt_pepper_zero_probability_is_identity():
    rng = np.random.default_rng(2)
    img = np.linspace(-1, 1, 16).reshape(4, 4)
    assert np.array_equal(salt_pepper(img, 0.0, rng), img)


def test_salt_pepper_is_deterministic_per_rng_state():
    img = np.zeros((32, 32))
    a = salt_pepper(img, 0.3, np.random.default_rng(5))
    b = salt_pepper(img, 0.3, np.random.default_rng(5))
    assert np.array_equal(a, b)


def test_wgn_fills_the_unit_range():
    noise = wgn((64, 64), np.random.default_rng(3))
    assert noise.min() == -1.0 and noise.max() == 1.0
    assert noise.shape == (64, 64)


def test_pgm_round_trip(tmp_path):
    img = (np.arange(64).reshape(8, 8) * 3 % 256).astype(np.uint8)
    path = tmp_path / "x.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.dtype == np.uint8
    assert np.array_equal(back, img)


def test_pgm_reads_comments_and_whitespace(tmp_path):
    raw = b"P5\n# a comment\n 2 2\n# another\n255\n\x00\x40\x80\xff"
    path = tmp_path / "c.pgm"
    path.write_bytes(raw)
    img = read_pgm(path)
    assert img.shape == (2, 2)
    assert img[1, 1] == 255


def test_pgm_rejects_truncation(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
    with pytest.raises(ValueError):
        read_pgm(path)


def test_pgm_rejects_wide_maxval(tmp_path):
    path = tmp_path / "w.pgm"
    path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(ValueError):
        read_pgm(path)


def test_center_crop_square():
    img = np.arange(30).reshape(5, 6)
    sq = center_crop_square(img)
    assert sq.shape == (5, 5)
    assert np.array_equal(sq, img[:, 0:5])


def test_resize_bilinear_identity():
    img = np.random.default_rng(4).uniform(0, 255, (7, 7))
    assert np.allclose(resize_bilinear(img, 7, 7), img)


def test_resize_bilinear_constant_stays_constant():
    img = np.full((5, 5), 42.0)
    out = resize_bilinear(img, 12, 12)
    assert np.allclose(out, 42.0)


def test_to_thumbnail_shape_and_dtype():
    rng = np.random.default_rng(6)
    img = rng.integers(0, 256, (91, 123)).astype(np.uint8)
    thumb = to_thumbnail(img, 60)
    assert thumb.shape == (60, 60)
    assert thumb.dtype == np.uint8


def test_synthetic_corpus_is_deterministic():
    a = synthetic_corpus(6, size=24, seed=5)
    b = synthetic_corpus(6, size=24, seed=5)
    assert [i for i, _ in a] == [i for i, _ in b]
    for (_, x), (_, y) in zip(a, b):
        assert np.array_equal(x, y)
        assert x.shape == (24, 24) and x.dtype == np.uint8


def test_synthetic_corpus_images_are_distinct():
    corpus = synthetic_corpus(8, size=24, seed=0)
    flat = [tuple(img.ravel()) for _, img in corpus]
    assert len(set(flat)) == 8
