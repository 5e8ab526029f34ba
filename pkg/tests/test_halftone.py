import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halftone_pid.datasets import read_dataset, read_manifest, write_dataset
from halftone_pid.halftone import (
    ScreenConfig,
    VirtualPrinter,
    camera_degrade,
    check_identifiable,
    cmyk_to_rgb,
    generate_sample,
    halftone_channel,
    make_printers,
    naive_profile_decompose,
)


def flat(c, size=64):
    return np.full((1, 1, size, size), c, np.float32)


def test_halftone_extremes():
    screen = ScreenConfig(15, 4.0, 0.1)
    assert not halftone_channel(flat(0.0), screen, 0, jitter=0.3).any()
    assert halftone_channel(flat(1.0), screen, 0, jitter=0.3).all()


def test_halftone_half_coverage_ink_fraction():
    for angle, pitch in [(0, 2.0), (15, 4.0), (45, 5.5), (75, 7.0)]:
        plane = halftone_channel(flat(0.5), ScreenConfig(angle, pitch), seed=1)
        assert 0.45 <= plane.mean() <= 0.55, (angle, pitch)


def test_halftone_output_is_binary():
    plane = halftone_channel(np.random.default_rng(0).random((1, 1, 64, 64)), ScreenConfig(30, 3.0), 0, 0.2)
    assert set(np.unique(plane)) <= {0.0, 1.0}


def test_pitch_below_two_rejected():
    with pytest.raises(ValueError):
        ScreenConfig(0, 1.5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 179.9), st.floats(2, 10), st.floats(-0.2, 0.2), st.floats(0, 0.8), st.integers(0, 10**6))
def test_ink_fraction_monotone_in_coverage(angle, pitch, gain, jitter, seed):
    screen = ScreenConfig(angle, pitch, gain)
    fractions = [halftone_channel(flat(c / 10), screen, seed, jitter).mean() for c in range(11)]
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 179.9), st.floats(2, 8), st.integers(0, 1000))
def test_angle_periodicity(angle, pitch, seed):
    cov = np.random.default_rng(seed).random((1, 1, 32, 32))
    a = halftone_channel(cov, ScreenConfig(angle, pitch), seed, 0.3)
    b = halftone_channel(cov, ScreenConfig(angle + 180, pitch), seed, 0.3)
    assert np.array_equal(a, b)


def test_cmyk_to_rgb_cases():
    zero = np.zeros((1, 4, 2, 2), np.float32)
    np.testing.assert_array_equal(cmyk_to_rgb(zero), np.ones((1, 3, 2, 2)))
    k = zero.copy()
    k[:, 3, 0, 0] = 1
    k[:, 0, 0, 0] = 0.3
    assert not cmyk_to_rgb(k)[0, :, 0, 0].any()
    cyan = zero.copy()
    cyan[:, 0] = 1
    np.testing.assert_array_equal(cmyk_to_rgb(cyan)[0, :, 0, 0], [0, 1, 1])


def test_naive_profile_decompose_cases():
    def px(r, g, b):
        return np.array([r, g, b], np.float32).reshape(1, 3, 1, 1)

    np.testing.assert_allclose(naive_profile_decompose(px(1, 1, 1)).ravel(), [0, 0, 0, 0])
    np.testing.assert_allclose(naive_profile_decompose(px(0, 0, 0)).ravel(), [0, 0, 0, 1])
    np.testing.assert_allclose(naive_profile_decompose(px(0, 1, 1)).ravel(), [1, 0, 0, 0])


def _printer(**kw):
    screens = tuple(ScreenConfig(a, 4.0) for a in (15, 75, 0, 45))
    return VirtualPrinter(0, screens, **kw)


def test_camera_degrade_identity():
    rgb = np.random.default_rng(0).random((1, 3, 16, 16), dtype=np.float32)
    np.testing.assert_array_equal(camera_degrade(rgb, _printer(), 3), rgb)


def test_camera_noise_std():
    rgb = np.full((1, 3, 64, 64), 0.5, np.float32)
    out = camera_degrade(rgb, _printer(noise_sigma=0.05), 7)
    assert out.size >= 10_000
    assert abs(out.std() - 0.05) < 0.005


def test_camera_illumination_ramp():
    rgb = np.full((1, 3, 64, 64), 0.5, np.float32)
    out = camera_degrade(rgb, _printer(illumination_slope=0.1), 0)
    diff = out[..., -1].mean() - out[..., 0].mean()
    assert abs(diff - 0.1) < 0.01


def test_generate_sample_is_deterministic_and_consistent():
    printer = make_printers(3)[2]
    a = generate_sample(printer, 5, 6)
    b = generate_sample(printer, 5, 6)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.cmyk, b.cmyk)
    assert a.rgb.shape == (1, 3, 64, 64) and a.cmyk.shape == (1, 4, 64, 64)
    assert np.array_equal(cmyk_to_rgb(a.cmyk), a.clean_rgb)
    assert set(np.unique(a.cmyk)) <= {0.0, 1.0}
    assert 0 <= a.rgb.min() and a.rgb.max() <= 1


def test_screen_angle_changes_rendering():
    p1 = _printer()
    p2 = VirtualPrinter(1, tuple(ScreenConfig(s.angle + 15, s.frequency) for s in p1.screens))
    a, b = generate_sample(p1, 3, 4), generate_sample(p2, 3, 4)
    assert np.abs(a.rgb - b.rgb).mean() > 0


def test_make_printers_are_identifiable():
    printers = make_printers(8)
    check_identifiable(printers)
    with pytest.raises(ValueError):
        check_identifiable([printers[0], printers[0]])


def test_dataset_roundtrip(tmp_path):
    printers = make_printers(2)
    samples = [generate_sample(printers[i % 2], i, 100 + i) for i in range(4)]
    rgb = np.concatenate([s.rgb for s in samples])
    cmyk = np.concatenate([s.cmyk for s in samples])
    ids = [s.printer_id for s in samples]
    write_dataset(tmp_path, rgb, cmyk, ids, [s.seed for s in samples])
    assert (tmp_path / "printer_1" / "sample_1.png").exists()
    assert (tmp_path / "printer_0" / "sample_0.cmyk.png").exists()
    rows = read_manifest(tmp_path)
    assert [int(r["printer_id"]) for r in rows] == ids
    ds = read_dataset(tmp_path)
    assert np.abs(ds.rgb - rgb).max() <= 0.5 / 255 + 1e-6
    assert np.array_equal(ds.cmyk, cmyk)
