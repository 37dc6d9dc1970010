import colorsys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attireguard.augment import (
    BRIGHTNESS_RANGE,
    HUE_RANGE,
    SATURATION_RANGE,
    JitterFactors,
    RgbImage,
    hsv_to_rgb,
    jitter,
    read_ppm,
    rgb_to_hsv,
    sample_factors,
    write_ppm,
)
from attireguard.errors import BadImage, InvariantViolation

pixel = st.tuples(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))


def random_image(seed, w=64, h=64):
    return RgbImage.from_array(np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8))


def test_rgb_to_hsv_examples():
    assert np.allclose(rgb_to_hsv([255, 0, 0]), [0, 1, 1])
    h, s, v = rgb_to_hsv([128, 128, 128])
    assert (h, s) == (0, 0) and v == pytest.approx(128 / 255)


@given(pixel)
def test_rgb_to_hsv_matches_colorsys(p):
    h, s, v = colorsys.rgb_to_hsv(*(c / 255 for c in p))
    got = rgb_to_hsv(p)
    assert got[1] == pytest.approx(s, abs=1e-12) and got[2] == pytest.approx(v, abs=1e-12)
    if s > 0:
        diff = abs(got[0] - 360 * h) % 360
        assert min(diff, 360 - diff) < 1e-9


@given(st.floats(0, 359.999), st.floats(0, 1), st.floats(0, 1))
def test_hsv_to_rgb_matches_colorsys(h, s, v):
    want = [int(np.floor(c * 255 + 0.5)) for c in colorsys.hsv_to_rgb(h / 360, s, v)]
    got = hsv_to_rgb([h, s, v]).tolist()
    assert all(abs(a - b) <= 1 for a, b in zip(got, want))


def test_roundtrip_random_image():
    img = random_image(0)
    assert img.pixels.shape[0] * img.pixels.shape[1] == 4096
    back = hsv_to_rgb(rgb_to_hsv(img.pixels))
    assert np.max(np.abs(back.astype(int) - img.pixels.astype(int))) <= 1


def test_jitter_identity():
    img = random_image(1)
    out = jitter(img, JitterFactors(1, 1, 1))
    assert np.max(np.abs(out.pixels.astype(int) - img.pixels.astype(int))) <= 1


def test_jitter_brightness_scales_value():
    out = jitter(RgbImage.blank(1, 1, (0, 0, 100)), JitterFactors(1, 1, 1.5))
    assert out.pixels[0, 0].tolist() == [0, 0, 150]
    out = jitter(RgbImage.blank(1, 1, (0, 0, 200)), JitterFactors(1, 1, 1.5))
    assert out.pixels[0, 0].tolist() == [0, 0, 255]


def test_jitter_saturation_halves():
    img = random_image(2, 16, 16)
    before = rgb_to_hsv(img.pixels)[..., 1]
    after = rgb_to_hsv(jitter(img, JitterFactors(1, 0.5, 1)).pixels)[..., 1]
    assert np.all(after <= before + 1e-12)
    # 8-bit requantization perturbs s by a few counts over v
    v = rgb_to_hsv(img.pixels)[..., 2]
    ok = v > 0.2
    assert np.allclose(after[ok], before[ok] / 2, atol=0.03)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3))
def test_jitter_stays_in_gamut(seed, fh, fs, fv):
    out = jitter(random_image(seed, 8, 8), JitterFactors(fh, fs, fv))
    assert out.pixels.dtype == np.uint8 and out.pixels.shape == (8, 8, 3)


def test_jitter_rejects_bad_factors():
    with pytest.raises(InvariantViolation):
        jitter(RgbImage.blank(1, 1), JitterFactors(1, -1, 1))


def test_sample_factors_ranges_and_mean():
    rng = np.random.default_rng(0)
    draws = [sample_factors(rng) for _ in range(10_000)]
    assert all(f.in_ranges() for f in draws)
    assert np.mean([f.brightness for f in draws]) == pytest.approx(1.0, abs=0.02)
    assert sample_factors(7) == sample_factors(7)
    assert (HUE_RANGE, SATURATION_RANGE, BRIGHTNESS_RANGE) == ((0.9, 1.1), (0.5, 1.5), (0.5, 1.5))


@given(st.integers(0, 2**32 - 1))
def test_sample_factors_always_valid(seed):
    assert sample_factors(seed).in_ranges()


def test_ppm_roundtrip(tmp_path):
    img = random_image(3, 5, 7)
    write_ppm(tmp_path / "a.ppm", img)
    assert read_ppm(tmp_path / "a.ppm") == img


def test_ppm_header_comments(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n# max\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    assert read_ppm(p).pixels.tolist() == [[[1, 2, 3], [4, 5, 6]]]


@pytest.mark.parametrize(
    "data",
    [b"P3\n1 1\n255\n0 0 0", b"P6\n1 1\n65535\n" + bytes(6), b"P6\n2 2\n255\n" + bytes(5), b"P6\n"],
)
def test_ppm_rejects_bad_files(tmp_path, data):
    p = tmp_path / "bad.ppm"
    p.write_bytes(data)
    with pytest.raises(BadImage):
        read_ppm(p)
