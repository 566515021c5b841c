import json
import math

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lkmn.errors import DimensionError
from lkmn.metrics import REPORT_SCHEMA, EvalReport, evaluate_pair, psnr, rgb_to_y, ssim

from oracles import psnr_ref, ssim_ref, y_ref

rng = np.random.default_rng(77)


def textured(h=32, w=32, seed=0):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = 128 + 60 * np.sin(xx / 3.0) * np.cos(yy / 4.0)
    return np.clip(base + r.normal(0, 10, (h, w)), 0, 255)


def test_y_of_black_white_gray():
    px = lambda v: np.full((1, 1, 3), v, dtype=np.uint8)  # noqa: E731
    assert rgb_to_y(px(0))[0, 0] == 16.0
    assert rgb_to_y(px(255))[0, 0] == pytest.approx(235.0, abs=1e-3)
    assert rgb_to_y(px(128))[0, 0] == pytest.approx(y_ref(128, 128, 128), abs=1e-12)


def test_y_matches_formula_on_random_pixels():
    img = rng.integers(0, 256, (7, 5, 3))
    expected = y_ref(img[..., 0], img[..., 1], img[..., 2])
    np.testing.assert_allclose(rgb_to_y(img), expected, atol=1e-12)
    assert rgb_to_y(img).min() >= 16 and rgb_to_y(img).max() <= 235 + 1e-9


def test_psnr_special_values():
    a = rng.integers(0, 255, (10, 10)).astype(float)
    assert psnr(a, a) == math.inf
    assert psnr(a, a + 1) == pytest.approx(20 * math.log10(255), abs=1e-4)
    assert psnr(a, a + 1) == pytest.approx(48.1308, abs=1e-4)


def test_psnr_matches_oracle_and_is_symmetric():
    for _ in range(20):
        a, b = rng.random((2, 12, 9)) * 255
        assert psnr(a, b) == pytest.approx(psnr_ref(a, b), abs=1e-9)
        assert psnr(a, b) == psnr(b, a)


def test_psnr_border_crop():
    a = np.zeros((10, 10))
    b = np.zeros((10, 10))
    b[0, :] = 50
    assert psnr(a, b, 1) == math.inf
    assert psnr(a, b, 0) < 100
    with pytest.raises(DimensionError):
        psnr(a, b[:9])
    with pytest.raises(DimensionError):
        psnr(a, b, 5)


def test_psnr_decreases_with_difference():
    a = rng.random((8, 8)) * 100
    values = [psnr(a, a + d) for d in (0.5, 1, 2, 4, 8)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ssim_identical_and_inverted():
    a = textured()
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, 255 - a) < 0.5


def test_ssim_matches_reference():
    for seed in range(5):
        a = textured(20, 23, seed)
        b = np.clip(a + np.random.default_rng(seed + 50).normal(0, 8, a.shape), 0, 255)
        assert ssim(a, b) == pytest.approx(ssim_ref(a, b), abs=1e-10)


def test_ssim_falls_with_noise():
    base = np.full((24, 24), 120.0)
    noise = np.random.default_rng(3).standard_normal(base.shape)
    values = [ssim(base, base + s * noise) for s in (2, 8, 32)]
    assert values[0] > values[1] > values[2]


def test_ssim_symmetric_bounded_and_flip_invariant():
    a, b = textured(seed=1), textured(seed=2)
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 <= s <= 1
    assert ssim(a[::-1], b[::-1]) == pytest.approx(s, abs=1e-12)
    assert ssim(a[:, ::-1], b[:, ::-1]) == pytest.approx(s, abs=1e-12)
    assert psnr(a[::-1], b[::-1]) == pytest.approx(psnr(a, b), abs=1e-12)


def test_ssim_too_small():
    a = np.zeros((12, 12))
    with pytest.raises(DimensionError):
        ssim(a, a, border_crop=1)


@settings(max_examples=25, deadline=None)
@given(d1=st.floats(0.1, 50), d2=st.floats(0.1, 50))
def test_psnr_monotone_property(d1, d2):
    a = np.full((6, 6), 100.0)
    if d1 < d2:
        assert psnr(a, a + d1) > psnr(a, a + d2)


def test_evaluate_pair_and_report_schema():
    hr = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
    noisy = np.clip(hr.astype(int) + rng.integers(-3, 4, hr.shape), 0, 255).astype(np.uint8)
    report = EvalReport(border_crop=2, scale=2, method="test")
    report.add("same", *evaluate_pair(hr, hr, 2))
    report.add("noisy", *evaluate_pair(noisy, hr, 2))
    doc = json.loads(report.to_json())
    jsonschema.validate(doc, REPORT_SCHEMA)
    assert doc["images"][0]["psnr_db"] == "inf" and doc["images"][0]["ssim"] == 1.0
    assert doc["mean"]["psnr_db"] == "inf"
    assert doc["protocol"] == {"border_crop": 2, "y_channel": True}
    assert 0 < doc["images"][1]["psnr_db"] < 100
