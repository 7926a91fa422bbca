import numpy as np
import pytest

from ecgpain.signal_core import (
    EcgRecord,
    Gender,
    PainLabel,
    SignalError,
    SyntheticEcgSpec,
    bandpass_filter,
    derivative_filter,
    generate_synthetic_ecg,
    moving_window_integrate,
    square_signal,
)

FS = 512.0


def steady_amplitude(y, fs, settle_s=5.0):
    tail = y[int(settle_s * fs):]
    return float(tail.std() * np.sqrt(2.0))


class TestSyntheticEcg:
    def test_three_beats_spaced_one_second(self):
        spec = SyntheticEcgSpec(rr_intervals_ms=[1000.0, 1000.0, 1000.0], sample_rate=FS)
        record, gt = generate_synthetic_ecg(spec, seed=0)
        assert len(gt) == 3
        assert np.all(np.diff(gt) == 512)
        assert abs(len(record.samples) - 3 * 512) <= 1

    def test_deterministic_for_fixed_seed(self):
        spec = SyntheticEcgSpec(rr_intervals_ms=[800.0, 820.0, 790.0], noise_std=0.05)
        a, _ = generate_synthetic_ecg(spec, seed=42)
        b, _ = generate_synthetic_ecg(spec, seed=42)
        assert np.array_equal(a.samples, b.samples)

    def test_seed_changes_noise(self):
        spec = SyntheticEcgSpec(rr_intervals_ms=[800.0, 820.0, 790.0], noise_std=0.05)
        a, _ = generate_synthetic_ecg(spec, seed=1)
        b, _ = generate_synthetic_ecg(spec, seed=2)
        assert not np.array_equal(a.samples, b.samples)

    def test_peak_count_matches_rr_count(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n = int(rng.integers(1, 30))
            rr = rng.uniform(400.0, 1200.0, n)
            _, gt = generate_synthetic_ecg(SyntheticEcgSpec(rr_intervals_ms=rr), seed=0)
            assert len(gt) == n
            assert np.all(np.diff(gt) > 0)

    def test_length_matches_rr_sum(self):
        rr = [700.0, 850.0, 930.0, 610.0]
        record, _ = generate_synthetic_ecg(SyntheticEcgSpec(rr_intervals_ms=rr), seed=0)
        expected = sum(r * FS / 1000.0 for r in rr)
        assert abs(len(record.samples) - expected) <= 1

    def test_r_peak_is_local_max_of_clean_signal(self):
        spec = SyntheticEcgSpec(rr_intervals_ms=[900.0] * 5)
        record, gt = generate_synthetic_ecg(spec, seed=0)
        for g in gt:
            lo, hi = g - 10, g + 11
            assert np.argmax(record.samples[lo:hi]) == 10

    def test_rejects_empty_rr(self):
        with pytest.raises(SignalError):
            SyntheticEcgSpec(rr_intervals_ms=[])

    def test_rejects_sub_floor_rr(self):
        with pytest.raises(SignalError):
            SyntheticEcgSpec(rr_intervals_ms=[1000.0, 200.0])


class TestEcgRecord:
    def test_rejects_empty_samples(self):
        with pytest.raises(SignalError):
            EcgRecord(np.array([]), FS, "s", Gender.MALE, 30, PainLabel.NP)

    def test_rejects_out_of_range_age(self):
        with pytest.raises(SignalError):
            EcgRecord(np.ones(10), FS, "s", Gender.MALE, 19, PainLabel.NP)


class TestBandpass:
    def test_dc_rejection(self):
        x = np.full(int(10 * FS), 5.0)
        y = bandpass_filter(x, FS)
        assert np.abs(y[int(5 * FS):]).max() < 1e-6

    def test_passband_10hz_within_3db(self):
        t = np.arange(int(10 * FS)) / FS
        y = bandpass_filter(np.sin(2 * np.pi * 10.0 * t), FS)
        gain = steady_amplitude(y, FS)
        assert 10 ** (-3 / 20) < gain < 10 ** (3 / 20)

    def test_60hz_attenuated_10x(self):
        t = np.arange(int(10 * FS)) / FS
        y = bandpass_filter(np.sin(2 * np.pi * 60.0 * t), FS)
        assert steady_amplitude(y, FS) < 0.1

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(4000)
        z = rng.standard_normal(4000)
        lhs = bandpass_filter(3.7 * x + z, FS)
        rhs = 3.7 * bandpass_filter(x, FS) + bandpass_filter(z, FS)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    def test_invalid_cutoffs(self):
        with pytest.raises(SignalError):
            bandpass_filter(np.ones(100), FS, low_hz=15.0, high_hz=5.0)
        with pytest.raises(SignalError):
            bandpass_filter(np.ones(100), FS, low_hz=5.0, high_hz=300.0)

    def test_output_length(self):
        x = np.random.default_rng(0).standard_normal(1234)
        assert len(bandpass_filter(x, FS)) == 1234


class TestDerivative:
    def test_constant_gives_zero(self):
        y = derivative_filter(np.full(100, 4.2), FS)
        assert np.abs(y[4:]).max() < 1e-12

    def test_ramp_gives_slope(self):
        k = 3.5  # units per second
        t = np.arange(200) / FS
        y = derivative_filter(k * t, FS)
        np.testing.assert_allclose(y[10:], k, rtol=1e-9)

    def test_gain_scales_with_frequency(self):
        # below ~30 Hz the kernel approximates a true differentiator,
        # so gain at 2f is about twice the gain at f
        gains = {}
        for f in (5.0, 10.0):
            t = np.arange(int(10 * FS)) / FS
            y = derivative_filter(np.sin(2 * np.pi * f * t), FS)
            gains[f] = steady_amplitude(y, FS)
            assert gains[f] == pytest.approx(2 * np.pi * f, rel=0.05)
        assert gains[10.0] / gains[5.0] == pytest.approx(2.0, rel=0.02)

    def test_too_short_input(self):
        with pytest.raises(SignalError):
            derivative_filter(np.ones(4), FS)


class TestSquare:
    def test_elementwise(self):
        np.testing.assert_array_equal(square_signal(np.array([-2.0, 3.0])), [4.0, 9.0])

    def test_zero(self):
        assert np.all(square_signal(np.zeros(5)) == 0.0)

    def test_sign_flip_invariance(self):
        x = np.random.default_rng(1).standard_normal(100)
        np.testing.assert_array_equal(square_signal(x), square_signal(-x))


class TestMovingWindowIntegrate:
    def test_constant_steady_state(self):
        y = moving_window_integrate(np.full(50, 3.0), 8)
        np.testing.assert_allclose(y[7:], 3.0, rtol=1e-12)

    def test_impulse_plateau(self):
        x = np.zeros(32)
        x[0] = 1.0
        y = moving_window_integrate(x, 8)
        np.testing.assert_allclose(y[:8], 1.0 / 8, rtol=1e-12)
        np.testing.assert_allclose(y[8:], 0.0, atol=1e-15)

    def test_window_one_is_identity(self):
        x = np.random.default_rng(2).standard_normal(64)
        np.testing.assert_allclose(moving_window_integrate(x, 1), x, rtol=1e-15)

    def test_preserves_mean_over_whole_periods(self):
        period = 24
        x = np.tile(np.sin(2 * np.pi * np.arange(period) / period) + 0.7, 50)
        n = 8
        y = moving_window_integrate(x, n)
        # steady state, whole number of periods
        start = period * 2
        stop = start + period * 40
        assert y[start:stop].mean() == pytest.approx(x[:period].mean(), abs=1e-9)

    def test_length_preserved(self):
        assert len(moving_window_integrate(np.ones(77), 10)) == 77

    def test_invalid_window(self):
        with pytest.raises(SignalError):
            moving_window_integrate(np.ones(10), 0)
