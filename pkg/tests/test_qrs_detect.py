import numpy as np
import pytest

from ecgpain.signal_core import EcgRecord, Gender, PainLabel, SyntheticEcgSpec, generate_synthetic_ecg
from ecgpain.qrs_detect import (
    DetectorConfig,
    DetectorState,
    FlatSignalError,
    PeakClass,
    QrsResult,
    SignalTooShortError,
    detect_qrs,
    discriminate_twave,
    match_detections,
    update_thresholds,
)

FS = 512.0


def make_record(rr_ms, noise_std=0.0, seed=0, r_scale=None):
    spec = SyntheticEcgSpec(rr_intervals_ms=rr_ms, sample_rate=FS, noise_std=noise_std,
                            r_amplitude_scale=r_scale)
    return generate_synthetic_ecg(spec, seed=seed)


class TestUpdateThresholds:
    def test_signal_peak_fixed_point(self):
        st = DetectorState(spk=1.0, npk=0.1, refractory_samples=100)
        new = update_thresholds(st, 1.0, is_signal_peak=True)
        assert new.spk == pytest.approx(1.0)

    def test_geometric_convergence(self):
        st = DetectorState(spk=0.0, npk=0.0, refractory_samples=100)
        values = []
        for _ in range(60):
            st = update_thresholds(st, 1.0, is_signal_peak=True)
            values.append(st.spk)
        diffs = np.diff(values)
        assert np.all(diffs > 0)
        assert values[-1] == pytest.approx(1.0, abs=1e-3)

    def test_threshold_formula(self):
        st = DetectorState(spk=1.0, npk=0.2, refractory_samples=100)
        assert st.threshold1 == pytest.approx(0.2 + 0.25 * 0.8)
        assert st.threshold2 == pytest.approx(0.5 * st.threshold1)

    def test_threshold2_is_half_threshold1(self):
        rng = np.random.default_rng(0)
        st = DetectorState(spk=0.5, npk=0.05, refractory_samples=100)
        for _ in range(50):
            st = update_thresholds(st, float(rng.uniform(0, 2)), bool(rng.integers(2)))
            assert st.threshold2 == pytest.approx(0.5 * st.threshold1, rel=1e-12)

    def test_rejects_negative_peak(self):
        st = DetectorState(spk=1.0, npk=0.1, refractory_samples=100)
        with pytest.raises(Exception):
            update_thresholds(st, -0.5, True)

    def test_noise_peak_updates_npk_only(self):
        st = DetectorState(spk=1.0, npk=0.0, refractory_samples=100)
        new = update_thresholds(st, 0.4, is_signal_peak=False)
        assert new.spk == st.spk
        assert new.npk == pytest.approx(0.05)


class TestTwaveDiscrimination:
    def test_outside_window_is_qrs_regardless_of_slope(self):
        # 500 ms after the last beat
        out = discriminate_twave(int(0.5 * FS), 0, 0.01, 1.0, FS)
        assert out is PeakClass.QRS

    def test_low_slope_inside_window_is_twave(self):
        out = discriminate_twave(int(0.2 * FS), 0, 0.3, 1.0, FS)
        assert out is PeakClass.T_WAVE

    def test_high_slope_inside_window_is_qrs(self):
        out = discriminate_twave(int(0.2 * FS), 0, 0.9, 1.0, FS)
        assert out is PeakClass.QRS

    def test_candidate_must_follow_last_qrs(self):
        with pytest.raises(Exception):
            discriminate_twave(5, 10, 1.0, 1.0, FS)


class TestDetectQrs:
    def test_clean_ten_beats_at_60bpm(self):
        record, gt = make_record([1000.0] * 10)
        result = detect_qrs(record)
        assert len(result.r_indices) == 10
        assert result.searchback_count == 0
        score = match_detections(result.r_indices, gt, FS, skip_s=0.0)
        assert score["sensitivity"] == 1.0
        assert score["positive_predictivity"] == 1.0
        assert np.abs(score["errors_ms"]).max() <= 25.0

    def test_reduced_beat_recovered_by_searchback(self):
        scale = np.ones(10)
        scale[5] = 0.25
        record, gt = make_record([1000.0] * 10, r_scale=scale)
        result = detect_qrs(record)
        assert result.searchback_count >= 1
        score = match_detections(result.r_indices, gt, FS, skip_s=0.0)
        assert score["sensitivity"] == 1.0
        assert score["positive_predictivity"] == 1.0

    def test_flat_line_is_distinct_error(self):
        record = EcgRecord(np.full(int(5 * FS), 2.0), FS, "s", Gender.MALE, 30, PainLabel.NP)
        with pytest.raises(FlatSignalError):
            detect_qrs(record)

    def test_too_short_signal(self):
        record = EcgRecord(np.random.default_rng(0).standard_normal(int(FS)), FS, "s",
                           Gender.MALE, 30, PainLabel.NP)
        with pytest.raises(SignalTooShortError):
            detect_qrs(record)

    def test_deterministic(self):
        record, _ = make_record([820.0] * 12, noise_std=0.05, seed=9)
        a = detect_qrs(record)
        b = detect_qrs(record)
        assert np.array_equal(a.r_indices, b.r_indices)
        assert a.searchback_count == b.searchback_count

    def test_amplitude_invariance(self):
        record, _ = make_record([900.0] * 12, noise_std=0.02, seed=5)
        base = detect_qrs(record).r_indices
        for a in (0.1, 10.0):
            scaled = EcgRecord(a * record.samples, FS, "s", Gender.MALE, 30, PainLabel.NP)
            assert np.array_equal(detect_qrs(scaled).r_indices, base)

    def test_refractory_never_violated(self):
        rng = np.random.default_rng(11)
        cfg = DetectorConfig()
        for trial in range(5):
            rr = rng.uniform(450.0, 1100.0, 20)
            record, _ = make_record(rr, noise_std=0.05, seed=trial)
            result = detect_qrs(record, cfg)
            min_gap = cfg.refractory_ms / 1000.0 * FS
            assert np.all(np.diff(result.r_indices) >= min_gap)

    def test_noisy_recovery_at_varied_rates(self):
        rng = np.random.default_rng(2)
        for trial, hr in enumerate((55.0, 75.0, 115.0)):
            rr = 60000.0 / hr * rng.uniform(0.97, 1.03, 30)
            record, gt = make_record(rr, seed=trial)
            clean_power = np.mean(record.samples**2)
            noisy = record.samples + np.random.default_rng(trial).normal(
                0.0, np.sqrt(clean_power / 100.0), len(record.samples))
            noisy_record = EcgRecord(noisy, FS, "s", Gender.MALE, 30, PainLabel.NP)
            score = match_detections(detect_qrs(noisy_record).r_indices, gt, FS)
            assert score["sensitivity"] == 1.0
            assert score["positive_predictivity"] == 1.0

    def test_stage_dump_lengths_match(self):
        record, _ = make_record([800.0] * 6)
        result, stages = detect_qrs(record, return_stages=True)
        n = len(record.samples)
        for arr in (stages.raw, stages.bandpassed, stages.derivative,
                    stages.squared, stages.integrated):
            assert len(arr) == n
        assert len(result.r_indices) == 6

    def test_indices_within_bounds(self):
        record, _ = make_record([700.0] * 8, noise_std=0.05, seed=1)
        result = detect_qrs(record)
        assert result.r_indices.min() >= 0
        assert result.r_indices.max() < len(record.samples)


class TestQrsResult:
    def test_rejects_nonincreasing_indices(self):
        with pytest.raises(Exception):
            QrsResult(r_indices=np.array([10, 10, 20]))

    def test_rejects_negative_counts(self):
        with pytest.raises(Exception):
            QrsResult(r_indices=np.array([1, 200]), searchback_count=-1)
