import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halftone_pid.metrics import PSNR_CAP, psnr, ssim

from oracles import psnr64, ssim64


def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).random((64, 64))
    assert psnr(a, a) == PSNR_CAP


def test_psnr_uniform_offset():
    a = np.full((64, 64), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_rejects_dim_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 9)))


def test_ssim_identical_is_one():
    a = np.random.default_rng(1).random((64, 64))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_zero_vs_one():
    # only the luminance term survives: (c1) / (1 + c1) with c1 = 1e-4
    a, b = np.zeros((16, 16)), np.ones((16, 16))
    assert ssim(a, b) == pytest.approx(ssim64(a, b), abs=1e-6)
    assert ssim(a, b) == pytest.approx(1e-4 / (1 + 1e-4), abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_ssim_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_metrics_match_reference_on_random_pairs():
    rng = np.random.default_rng(42)
    for _ in range(100):
        a = rng.random((24, 24))
        b = np.clip(a + rng.normal(0, rng.uniform(0.01, 0.5), a.shape), 0, 1)
        assert abs(psnr(a, b) - psnr64(a, b)) < 1e-4
        assert abs(ssim(a, b) - ssim64(a, b)) < 1e-6
